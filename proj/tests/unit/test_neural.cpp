#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "avatarforge/neural.hpp"

using namespace avatarforge;
using namespace avatarforge::ad;
using namespace avatarforge::nn;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

void fill(Tensor& t, double v) { std::fill(t.mutable_values().begin(), t.mutable_values().end(), v); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - b[i]));
  return e;
}

}  // namespace

TEST_CASE("positional encoding: origin, width, injectivity on a grid") {
  const Tensor zero = positional_encoding(Tensor::constant({1, 3}, 0.0), 4);
  REQUIRE(zero.dim(1) == 27);
  CHECK(positional_width(4) == 27);
  for (int k = 0; k < 4; ++k) {
    for (int c = 0; c < 3; ++c) {
      CHECK(zero[3 + 6 * k + c] == 0.0);
      CHECK(zero[3 + 6 * k + 3 + c] == 1.0);
    }
  }

  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> cell(-1000, 1000);
  const int n = 4000;
  std::vector<double> pts(3 * n);
  for (auto& p : pts) p = cell(rng) * 1e-3;
  const Tensor enc = positional_encoding(Tensor::constant({n, 3}, pts), 6);
  std::set<std::vector<double>> points, codes;
  for (int i = 0; i < n; ++i) {
    points.insert({pts.begin() + 3 * i, pts.begin() + 3 * i + 3});
    const auto row = enc.values().subspan(static_cast<std::size_t>(i) * 39, 39);
    codes.insert({row.begin(), row.end()});
  }
  CHECK(codes.size() == points.size());
}

TEST_CASE("mlp: zero weights give the bias; identity layers give relu") {
  ParamStore store;
  InitRng rng(2);
  Mlp m = Mlp::create(store, "m", {3, 3, 3}, rng);
  for (auto& l : m.layers) fill(l.weight, 0.0);
  m.layers.back().bias.mutable_values()[0] = 0.7;
  m.layers.back().bias.mutable_values()[2] = -0.2;
  const Tensor x = Tensor::constant({2, 3}, {1, -2, 3, -4, 5, -6});
  const Tensor y = m(x);
  for (int r = 0; r < 2; ++r) {
    CHECK(y[r * 3 + 0] == 0.7);
    CHECK(y[r * 3 + 1] == 0.0);
    CHECK(y[r * 3 + 2] == -0.2);
  }

  for (auto& l : m.layers) {
    fill(l.weight, 0.0);
    fill(l.bias, 0.0);
    for (int i = 0; i < 3; ++i) l.weight.mutable_values()[i * 3 + i] = 1.0;
  }
  const Tensor z = m(x);
  for (std::size_t i = 0; i < 6; ++i) CHECK(z[i] == std::max(x[i], 0.0));
}

TEST_CASE("cross attention with a single context token") {
  ParamStore store;
  InitRng rng(3);
  const int dim = 8;
  const CrossAttention a = CrossAttention::create(store, "a", dim, 2, rng);
  std::mt19937_64 gen(4);
  const Tensor q = Tensor::constant({5, dim}, random_values(5 * dim, gen));
  const Tensor c = Tensor::constant({1, dim}, random_values(dim, gen));
  std::vector<Tensor> w;
  const Tensor y = a(q, c, &w);
  for (const auto& head : w)
    for (double v : head.values()) CHECK(v == 1.0);

  // Direct computation: every query receives out_proj(v_proj(c)).
  const Tensor value = a.out_proj(a.v_proj(c));
  std::vector<double> x(q.values().begin(), q.values().end());
  for (int r = 0; r < 5; ++r)
    for (int k = 0; k < dim; ++k) x[r * dim + k] += value[k];
  const Tensor xt = Tensor::constant({5, dim}, x);
  const Tensor expect = add(xt, a.ffn(xt));
  CHECK(max_abs_diff(y, expect) <= 1e-12);

  const Tensor c2 = concat({c, c}, 0);
  CHECK(max_abs_diff(a(q, c2), y) <= 1e-12);
}

TEST_CASE("attention weight rows are stochastic") {
  ParamStore store;
  InitRng rng(5);
  const CrossAttention a = CrossAttention::create(store, "a", 12, 3, rng);
  std::mt19937_64 gen(6);
  std::vector<Tensor> w;
  a(Tensor::constant({7, 12}, random_values(84, gen, -3, 3)), Tensor::constant({9, 12}, random_values(108, gen, -3, 3)),
    &w);
  REQUIRE(w.size() == 3);
  for (const auto& head : w) {
    for (int r = 0; r < 7; ++r) {
      double s = 0.0;
      for (int k = 0; k < 9; ++k) s += head[r * 9 + k];
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("conv GRU gates") {
  ParamStore store;
  InitRng rng(7);
  ConvGru g = ConvGru::create(store, "g", 2, 3, rng);
  std::mt19937_64 gen(8);
  const Tensor x = Tensor::constant({4, 4, 2}, random_values(32, gen));
  const Tensor h = Tensor::constant({4, 4, 3}, random_values(48, gen));

  fill(g.z.bias, -40.0);
  CHECK(max_abs_diff(g(x, h), h) <= 1e-6);

  fill(g.z.kernel, 0.0);
  fill(g.z.bias, 40.0);
  fill(g.r.kernel, 0.0);
  fill(g.r.bias, 40.0);
  const Tensor open = tanh(g.h(concat({x, h}, 2)));
  CHECK(max_abs_diff(g(x, h), open) <= 1e-6);
}

TEST_CASE("vector GRU with a closed update gate keeps its state") {
  ParamStore store;
  InitRng rng(9);
  VecGru g = VecGru::create(store, "g", 5, 4, rng);
  std::mt19937_64 gen(10);
  const Tensor x = Tensor::constant({6, 5}, random_values(30, gen));
  const Tensor h = Tensor::constant({6, 4}, random_values(24, gen));
  fill(g.z.bias, -40.0);
  CHECK(max_abs_diff(g(x, h), h) <= 1e-6);
}

TEST_CASE("patch encoder: token count and constant images") {
  ParamStore store;
  InitRng rng(11);
  const PatchEncoder enc = PatchEncoder::create(store, "enc", 8, 3, 16, rng);
  const Tensor tokens = enc(Tensor::constant({128, 128, 3}, 0.4));
  REQUIRE(tokens.dim(0) == 256);
  REQUIRE(tokens.dim(1) == 16);
  double spread = 0.0;
  for (int t = 1; t < 256; ++t)
    for (int c = 0; c < 16; ++c) spread = std::max(spread, std::abs(tokens[t * 16 + c] - tokens[c]));
  CHECK(spread <= 1e-6);
  CHECK_THROWS(enc(Tensor::constant({20, 16, 3}, 0.0)));
}

TEST_CASE("texture decoder: resolution and sigmoid range") {
  ParamStore store;
  InitRng rng(12);
  const TexDecoder dec = TexDecoder::create(store, "dec", 16, 8, 128, 4, rng);
  std::mt19937_64 gen(13);
  const TexDecoder::Output out = dec(Tensor::constant({256, 8}, random_values(256 * 8, gen, -2, 2)));
  CHECK(dec.stages.size() == 3);
  CHECK(out.texture.shape() == Shape{128, 128, 3});
  CHECK(out.features.shape() == Shape{128, 128, 4});
  for (double v : out.texture.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("initialization is deterministic per seed") {
  auto make = [](std::uint64_t seed) {
    ParamStore store;
    InitRng rng(seed);
    Mlp::create(store, "m", {4, 6, 2}, rng);
    std::vector<double> all;
    for (const auto& [name, t] : store.entries()) all.insert(all.end(), t.values().begin(), t.values().end());
    return all;
  };
  CHECK(make(3) == make(3));
  CHECK(make(3) != make(4));
}
