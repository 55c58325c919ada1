#include "avatarforge/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>

#include <Eigen/Geometry>
#include <fmt/format.h>

#include "avatarforge/losses.hpp"
#include "avatarforge/metrics.hpp"
#include "avatarforge/mini_rig.hpp"
#include "avatarforge/neural.hpp"
#include "avatarforge/raster.hpp"
#include "avatarforge/remesh.hpp"

namespace avatarforge {

using ad::Shape;
using ad::Tensor;
using Rng = std::mt19937_64;

bool SuiteReport::pass() const { return failures() == 0 && !lines.empty(); }

std::size_t SuiteReport::failures() const {
  return static_cast<std::size_t>(std::count_if(lines.begin(), lines.end(), [](const CheckLine& l) { return !l.pass; }));
}

namespace {

double uniform(Rng& r, double lo, double hi) { return lo + (hi - lo) * static_cast<double>(r() >> 11) * 0x1.0p-53; }
int uniform_int(Rng& r, int lo, int hi) { return lo + static_cast<int>(r() % static_cast<std::uint64_t>(hi - lo + 1)); }

std::vector<double> random_values(Rng& r, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform(r, lo, hi);
  return v;
}

Tensor random_param(Rng& r, Shape shape, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = ad::numel(shape);
  return Tensor::parameter(std::move(shape), random_values(r, n, lo, hi));
}

Shape random_shape(Rng& r, int max_rank = 3, int max_dim = 5) {
  Shape s(static_cast<std::size_t>(uniform_int(r, 1, max_rank)));
  for (int& d : s) d = uniform_int(r, 1, max_dim);
  return s;
}

std::vector<Tensor> store_leaves(const ad::ParamStore& store) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : store.entries()) out.push_back(t);
  return out;
}

double elapsed(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct GradProblem {
  std::vector<Tensor> leaves;
  std::function<Tensor()> forward;
  std::shared_ptr<ad::ParamStore> store;  // owns block parameters, if any
};

struct GradCase {
  std::string name;
  std::function<GradProblem(Rng&, int)> make;
};

template <typename Fn>
GradCase unary_case(std::string name, Fn op, std::initializer_list<double> kinks = {}) {
  std::vector<double> k(kinks);
  return {std::move(name), [op, k](Rng& r, int) {
            Tensor x = random_param(r, random_shape(r));
            if (!k.empty()) {
              auto v = x.mutable_values();
              for (double& e : v)
                while (std::any_of(k.begin(), k.end(), [&](double kk) { return std::abs(e - kk) < 1e-3; }))
                  e = uniform(r, -1.0, 1.0);
            }
            return GradProblem{{x}, [=] { return op(x); }, nullptr};
          }};
}

template <typename Fn>
GradCase binary_case(std::string name, Fn op) {
  return {std::move(name), [op](Rng& r, int) {
            const Shape s = random_shape(r);
            Tensor a = random_param(r, s), b = random_param(r, s);
            return GradProblem{{a, b}, [=] { return op(a, b); }, nullptr};
          }};
}

/// Random sparse rows over `cols` columns, some rows empty.
std::shared_ptr<const SparseRows> random_rows(Rng& r, int rows, int cols) {
  auto plan = std::make_shared<SparseRows>();
  plan->num_cols = static_cast<std::size_t>(cols);
  std::vector<std::pair<std::size_t, double>> row;
  for (int i = 0; i < rows; ++i) {
    row.clear();
    const int taps = uniform_int(r, 0, 4);
    for (int k = 0; k < taps; ++k)
      row.emplace_back(static_cast<std::size_t>(uniform_int(r, 0, cols - 1)), uniform(r, -1.0, 1.0));
    plan->add_row(row);
  }
  return plan;
}

Faces random_faces(Rng& r, int vertices, int count) {
  Faces f(count, 3);
  for (int i = 0; i < count; ++i) {
    int a = uniform_int(r, 0, vertices - 1), b, c;
    do b = uniform_int(r, 0, vertices - 1);
    while (b == a);
    do c = uniform_int(r, 0, vertices - 1);
    while (c == a || c == b);
    f.row(i) << a, b, c;
  }
  return f;
}

std::vector<GradCase> op_cases() {
  using namespace ad;
  std::vector<GradCase> c;
  c.push_back(binary_case("add", [](const Tensor& a, const Tensor& b) { return add(a, b); }));
  c.push_back(binary_case("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }));
  c.push_back(binary_case("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }));
  c.push_back(unary_case("add_scalar", [](const Tensor& x) { return add_scalar(x, 0.37); }));
  c.push_back(unary_case("scale", [](const Tensor& x) { return scale(x, -1.7); }));
  c.push_back({"add_bias", [](Rng& r, int) {
                 Shape s = random_shape(r);
                 Tensor x = random_param(r, s), b = random_param(r, {s.back()});
                 return GradProblem{{x, b}, [=] { return add_bias(x, b); }, nullptr};
               }});
  c.push_back(unary_case("sigmoid", [](const Tensor& x) { return sigmoid(scale(x, 3.0)); }));
  c.push_back(unary_case("tanh", [](const Tensor& x) { return ad::tanh(scale(x, 2.0)); }));
  c.push_back(unary_case("relu", [](const Tensor& x) { return relu(x); }, {0.0}));
  c.push_back(unary_case("sin", [](const Tensor& x) { return ad::sin(scale(x, 3.0)); }));
  c.push_back(unary_case("cos", [](const Tensor& x) { return ad::cos(scale(x, 3.0)); }));
  c.push_back({"matmul", [](Rng& r, int) {
                 const int m = uniform_int(r, 1, 6), k = uniform_int(r, 1, 6), n = uniform_int(r, 1, 6);
                 Tensor a = random_param(r, {m, k}), b = random_param(r, {k, n});
                 return GradProblem{{a, b}, [=] { return matmul(a, b); }, nullptr};
               }});
  c.push_back({"transpose", [](Rng& r, int) {
                 Tensor a = random_param(r, {uniform_int(r, 1, 6), uniform_int(r, 1, 6)});
                 return GradProblem{{a}, [=] { return mul(transpose(a), transpose(a)); }, nullptr};
               }});
  c.push_back({"reshape", [](Rng& r, int) {
                 const int m = uniform_int(r, 1, 4), n = uniform_int(r, 1, 4), k = uniform_int(r, 1, 3);
                 Tensor a = random_param(r, {m, n, k});
                 return GradProblem{{a}, [=] { return ad::sin(reshape(a, {n, m * k})); }, nullptr};
               }});
  c.push_back({"softmax", [](Rng& r, int) {
                 const Shape s = random_shape(r);
                 Tensor a = random_param(r, s, -2.0, 2.0);
                 const int axis = uniform_int(r, 0, static_cast<int>(s.size()) - 1);
                 return GradProblem{{a}, [=] { return softmax(a, axis); }, nullptr};
               }});
  c.push_back({"concat", [](Rng& r, int) {
                 Shape s = random_shape(r);
                 const int axis = uniform_int(r, 0, static_cast<int>(s.size()) - 1);
                 std::vector<Tensor> parts;
                 const int count = uniform_int(r, 1, 3);
                 for (int i = 0; i < count; ++i) {
                   s[static_cast<std::size_t>(axis)] = uniform_int(r, 1, 4);
                   parts.push_back(random_param(r, s));
                 }
                 return GradProblem{parts, [=] { return concat(parts, axis); }, nullptr};
               }});
  c.push_back({"slice", [](Rng& r, int) {
                 const Shape s = random_shape(r);
                 const int axis = uniform_int(r, 0, static_cast<int>(s.size()) - 1);
                 const int extent = s[static_cast<std::size_t>(axis)];
                 const int start = uniform_int(r, 0, extent - 1), length = uniform_int(r, 1, extent - start);
                 Tensor a = random_param(r, s);
                 return GradProblem{{a}, [=] { return slice(a, axis, start, length); }, nullptr};
               }});
  c.push_back(unary_case("sum", [](const Tensor& x) { return sum(mul(x, x)); }));
  c.push_back(unary_case("mean", [](const Tensor& x) { return mean(ad::sin(x)); }));
  c.push_back(binary_case("mse", [](const Tensor& a, const Tensor& b) { return mse(a, b); }));
  c.push_back({"weighted_mse", [](Rng& r, int) {
                 const Shape s = random_shape(r);
                 Tensor a = random_param(r, s), b = random_param(r, s);
                 std::vector<double> w = random_values(r, a.size(), 0.0, 1.0);
                 for (double& x : w)
                   if (uniform(r, 0.0, 1.0) < 0.3) x = 0.0;
                 return GradProblem{{a, b}, [=] { return weighted_mse(a, b, w); }, nullptr};
               }});
  c.push_back({"conv2d", [](Rng& r, int i) {
                 const int h = uniform_int(r, 1, 6), w = uniform_int(r, 1, 6), ci = uniform_int(r, 1, 3),
                           co = uniform_int(r, 1, 3), k = i % 2 == 0 ? 3 : uniform_int(r, 0, 2) * 2 + 1;
                 const Padding pad = i % 2 == 0 ? Padding::kZero : Padding::kReplicate;
                 Tensor x = random_param(r, {h, w, ci}), kern = random_param(r, {k, k, ci, co});
                 if (i % 3 == 0) return GradProblem{{x, kern}, [=] { return conv2d(x, kern, {}, pad); }, nullptr};
                 Tensor b = random_param(r, {co});
                 return GradProblem{{x, kern, b}, [=] { return conv2d(x, kern, b, pad); }, nullptr};
               }});
  c.push_back({"patchify", [](Rng& r, int) {
                 const int p = uniform_int(r, 1, 3);
                 Tensor x = random_param(r, {p * uniform_int(r, 1, 3), p * uniform_int(r, 1, 3), uniform_int(r, 1, 3)});
                 return GradProblem{{x}, [=] { return patchify(x, p); }, nullptr};
               }});
  c.push_back({"upsample_nearest", [](Rng& r, int) {
                 const int f = uniform_int(r, 1, 3);
                 Tensor x = random_param(r, {uniform_int(r, 1, 4), uniform_int(r, 1, 4), uniform_int(r, 1, 3)});
                 return GradProblem{{x}, [=] { return ad::sin(upsample_nearest(x, f)); }, nullptr};
               }});
  c.push_back({"gather", [](Rng& r, int) {
                 const int n = uniform_int(r, 1, 6), ch = uniform_int(r, 1, 3);
                 Tensor x = random_param(r, {n, ch});
                 const auto rows = random_rows(r, uniform_int(r, 1, 8), n);
                 return GradProblem{{x}, [=] { return gather(x, rows); }, nullptr};
               }});
  c.push_back({"clamp", [](Rng& r, int) {
                 const Shape s = random_shape(r);
                 const std::size_t n = ad::numel(s);
                 std::vector<double> lo(n), hi(n), v(n);
                 for (std::size_t i = 0; i < n; ++i) {
                   lo[i] = uniform(r, -0.6, -0.2);
                   hi[i] = uniform(r, 0.2, 0.6);
                   do v[i] = uniform(r, -1.0, 1.0);
                   while (std::abs(v[i] - lo[i]) < 1e-3 || std::abs(v[i] - hi[i]) < 1e-3);
                 }
                 Tensor x = Tensor::parameter(s, v);
                 return GradProblem{{x}, [=] { return clamp(x, lo, hi); }, nullptr};
               }});
  c.push_back({"affine_rows", [](Rng& r, int) {
                 const int n = uniform_int(r, 1, 6);
                 std::vector<Eigen::Matrix<double, 3, 4>> tf(static_cast<std::size_t>(n));
                 for (auto& m : tf)
                   for (int i = 0; i < 12; ++i) m.data()[i] = uniform(r, -1.0, 1.0);
                 Tensor x = random_param(r, {n, 3});
                 return GradProblem{{x}, [=] { return affine_rows(x, tf); }, nullptr};
               }});
  c.push_back({"face_normal_sum", [](Rng& r, int) {
                 const int n = uniform_int(r, 3, 8);
                 const Faces f = random_faces(r, n, uniform_int(r, 1, 10));
                 Tensor x = random_param(r, {n, 3});
                 return GradProblem{{x}, [=] { return face_normal_sum(x, f); }, nullptr};
               }});
  c.push_back({"normalize_rows", [](Rng& r, int) {
                 const int n = uniform_int(r, 1, 6), ch = uniform_int(r, 1, 4);
                 Tensor x = random_param(r, {n, ch});
                 auto v = x.mutable_values();
                 for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i * ch)] += 1.5;  // rows away from zero
                 return GradProblem{{x}, [=] { return normalize_rows(x); }, nullptr};
               }});
  c.push_back({"composite", [](Rng& r, int) {
                 const int n = uniform_int(r, 2, 5), d = uniform_int(r, 2, 5);
                 Tensor x = random_param(r, {n, d}), w1 = random_param(r, {d, d}), w2 = random_param(r, {2 * d, d});
                 Tensor b = random_param(r, {d});
                 const int variant = uniform_int(r, 0, 2);
                 return GradProblem{{x, w1, w2, b}, [=] {
                                      Tensor h = ad::tanh(add_bias(matmul(x, w1), b));
                                      Tensor y = concat({h, ad::sin(x)}, 1);
                                      y = matmul(y, w2);
                                      if (variant == 0) y = softmax(y, 1);
                                      if (variant == 1) y = mul(sigmoid(y), add(y, x));
                                      if (variant == 2) y = normalize_rows(add_scalar(y, 2.0));
                                      return add(y, add(y, x));  // fan-out
                                    },
                                    nullptr};
               }});
  c.push_back({"losses", [](Rng& r, int i) {
                 Tensor a = random_param(r, {8, 8, 3}, 0.0, 1.0), b = random_param(r, {8, 8, 3}, 0.0, 1.0);
                 std::vector<double> mask(64);
                 for (double& m : mask) m = uniform(r, 0.0, 1.0) < 0.7 ? 1.0 : 0.0;
                 if (i % 2 == 0)
                   return GradProblem{{a, b}, [=] { return add(loss_img(a, b, mask), loss_normal(a, b, mask)); }, nullptr};
                 Points pts(12, 3);
                 for (Eigen::Index k = 0; k < pts.size(); ++k) pts.data()[k] = uniform(r, -1.0, 1.0);
                 const auto umbrella = std::make_shared<SparseRows>(umbrella_operator(pts, random_faces(r, 12, 14)));
                 Tensor v = Tensor::parameter({12, 3}, std::vector<double>(pts.data(), pts.data() + pts.size()));
                 return GradProblem{{v}, [=] { return loss_laplacian(v, *umbrella); }, nullptr};
               }});
  return c;
}

std::vector<GradCase> block_cases() {
  std::vector<GradCase> c;
  auto with_store = [](auto build) {
    return [build](Rng& r, int i) {
      auto store = std::make_shared<ad::ParamStore>();
      nn::InitRng init(r());
      GradProblem p = build(r, i, *store, init);
      // Zero biases would put relus exactly on their kink whenever an upstream channel is dead.
      for (const auto& [name, t] : store->entries()) {
        if (!name.ends_with(".bias")) continue;
        Tensor b = t;
        for (double& v : b.mutable_values()) v = uniform(r, 0.1, 0.5) * (r() % 2 ? 1.0 : -1.0);
      }
      for (const Tensor& t : store_leaves(*store)) p.leaves.push_back(t);
      p.store = store;
      return p;
    };
  };
  c.push_back({"positional_encoding", [](Rng& r, int i) {
                 Tensor x = random_param(r, {uniform_int(r, 1, 5), 3});
                 const int freq = 1 + i % 4;
                 return GradProblem{{x}, [=] { return nn::positional_encoding(x, freq); }, nullptr};
               }});
  c.push_back({"linear", with_store([](Rng& r, int, ad::ParamStore& s, nn::InitRng& init) {
                 const int in = uniform_int(r, 1, 6), out = uniform_int(r, 1, 6);
                 const auto layer = nn::Linear::create(s, "lin", in, out, init);
                 Tensor x = random_param(r, {uniform_int(r, 1, 5), in});
                 return GradProblem{{x}, [=] { return layer(x); }, nullptr};
               })});
  c.push_back({"mlp", with_store([](Rng& r, int, ad::ParamStore& s, nn::InitRng& init) {
                 const std::vector<int> dims{uniform_int(r, 1, 5), uniform_int(r, 2, 6), uniform_int(r, 1, 5)};
                 const auto mlp = nn::Mlp::create(s, "mlp", dims, init);
                 Tensor x = random_param(r, {uniform_int(r, 1, 5), dims[0]});
                 return GradProblem{{x}, [=] { return mlp(x); }, nullptr};
               })});
  c.push_back({"conv", with_store([](Rng& r, int i, ad::ParamStore& s, nn::InitRng& init) {
                 const int ci = uniform_int(r, 1, 3), co = uniform_int(r, 1, 3);
                 auto conv = nn::Conv::create(s, "conv", ci, co, init);
                 if (i % 2) conv.padding = ad::Padding::kReplicate;
                 Tensor x = random_param(r, {uniform_int(r, 2, 5), uniform_int(r, 2, 5), ci});
                 return GradProblem{{x}, [=] { return conv(x); }, nullptr};
               })});
  c.push_back({"cross_attention", with_store([](Rng& r, int, ad::ParamStore& s, nn::InitRng& init) {
                 const int heads = uniform_int(r, 1, 2), dim = heads * uniform_int(r, 1, 3);
                 const auto attn = nn::CrossAttention::create(s, "attn", dim, heads, init);
                 Tensor q = random_param(r, {uniform_int(r, 1, 5), dim}), ctx = random_param(r, {uniform_int(r, 1, 5), dim});
                 return GradProblem{{q, ctx}, [=] { return attn(q, ctx); }, nullptr};
               })});
  c.push_back({"vec_gru", with_store([](Rng& r, int, ad::ParamStore& s, nn::InitRng& init) {
                 const int in = uniform_int(r, 1, 4), hidden = uniform_int(r, 1, 4), n = uniform_int(r, 1, 4);
                 const auto gru = nn::VecGru::create(s, "gru", in, hidden, init);
                 Tensor x = random_param(r, {n, in}), h = random_param(r, {n, hidden});
                 return GradProblem{{x, h}, [=] { return gru(x, h); }, nullptr};
               })});
  c.push_back({"conv_gru", with_store([](Rng& r, int, ad::ParamStore& s, nn::InitRng& init) {
                 const int in = uniform_int(r, 1, 2), hidden = uniform_int(r, 1, 2);
                 const int h = uniform_int(r, 2, 4), w = uniform_int(r, 2, 4);
                 const auto gru = nn::ConvGru::create(s, "gru", in, hidden, init);
                 Tensor x = random_param(r, {h, w, in}), st = random_param(r, {h, w, hidden});
                 return GradProblem{{x, st}, [=] { return gru(x, st); }, nullptr};
               })});
  c.push_back({"patch_encoder", with_store([](Rng& r, int i, ad::ParamStore& s, nn::InitRng& init) {
                 const int patch = i % 2 == 0 ? 4 : 8, dim = uniform_int(r, 2, 6);
                 const auto enc = nn::PatchEncoder::create(s, "enc", patch, 3, dim, init);
                 Tensor x = random_param(r, {16, 16, 3}, 0.0, 1.0);
                 return GradProblem{{x}, [=] { return enc(x); }, nullptr};
               })});
  c.push_back({"tex_decoder", with_store([](Rng& r, int i, ad::ParamStore& s, nn::InitRng& init) {
                 const int dim = uniform_int(r, 2, 6), out = i % 2 == 0 ? 16 : 8, feat = uniform_int(r, 1, 3);
                 const auto dec = nn::TexDecoder::create(s, "dec", 4, dim, out, feat, init);
                 Tensor tokens = random_param(r, {16, dim});
                 return GradProblem{{tokens}, [=] {
                                      const auto o = dec(tokens);
                                      return ad::concat({o.texture, o.features}, 2);
                                    },
                                    nullptr};
               })});
  return c;
}

}  // namespace

GradCheckResult finite_difference_check(const std::vector<Tensor>& leaves, const std::function<Tensor()>& forward,
                                        Rng& rng, double h, std::size_t coords_per_leaf) {
  std::vector<double> weights;
  {
    ad::NoGradGuard guard;
    weights = random_values(rng, forward().size());
  }
  std::vector<std::uint8_t> base_signs, signs;
  auto projected = [&](std::vector<std::uint8_t>& pattern) {
    ad::NoGradGuard guard;
    pattern.clear();
    ad::ReluSignRecorder recorder(pattern);
    const Tensor y = forward();
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * weights[i];
    return s;
  };
  for (Tensor leaf : leaves) leaf.zero_grad();
  const Tensor y = [&] {
    ad::ReluSignRecorder recorder(base_signs);
    return forward();
  }();
  ad::backward(ad::sum(ad::mul(y, Tensor::constant(y.shape(), weights))));

  GradCheckResult result;
  for (Tensor leaf : leaves) {
    const std::vector<double> grad = leaf.has_grad() ? leaf.grad() : std::vector<double>(leaf.size(), 0.0);
    std::vector<std::size_t> coords(leaf.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > coords_per_leaf) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(coords_per_leaf);
    }
    auto values = leaf.mutable_values();
    for (std::size_t c : coords) {
      const double old = values[c];
      values[c] = old + h;
      const double fp = projected(signs);
      const bool kink_plus = signs != base_signs;
      values[c] = old - h;
      const double fm = projected(signs);
      values[c] = old;
      if (kink_plus || signs != base_signs) {
        ++result.skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom = std::max({std::abs(grad[c]), std::abs(numeric), kGradFloor});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(grad[c] - numeric) / denom);
      ++result.coordinates;
    }
  }
  return result;
}

SuiteReport run_grad_suite(std::uint64_t seed, int shapes) {
  const auto start = std::chrono::steady_clock::now();
  SuiteReport report{"grad", {}, 0.0};
  std::vector<GradCase> cases = op_cases();
  for (auto& c : block_cases()) cases.push_back(std::move(c));
  Rng rng(seed);
  for (const GradCase& gc : cases) {
    double worst = 0.0;
    std::size_t coords = 0, skipped = 0;
    std::string failure;
    for (int i = 0; i < shapes; ++i) {
      try {
        const GradProblem p = gc.make(rng, i);
        const GradCheckResult r = finite_difference_check(p.leaves, p.forward, rng);
        worst = std::max(worst, r.max_rel_error);
        coords += r.coordinates;
        skipped += r.skipped;
      } catch (const std::exception& e) {
        failure = e.what();
        break;
      }
    }
    const bool ok = failure.empty() && worst <= kGradTolerance;
    report.lines.push_back({gc.name, ok,
                            failure.empty()
                                ? fmt::format("{} shapes, {} coordinates ({} kink probes skipped), max rel err {:.3e}", shapes,
                                              coords, skipped, worst)
                                : failure});
  }
  report.seconds = elapsed(start);
  return report;
}

RiggedMesh random_fixture_mesh(Rng& r, int rings, int segments) {
  RiggedMesh m;
  const int n = 2 + (rings - 1) * segments;
  m.vertices.resize(n, 3);
  m.uv.resize(n, 2);
  const Eigen::Vector3d axes(uniform(r, 0.6, 1.8), uniform(r, 0.6, 1.8), uniform(r, 0.6, 1.8));
  auto put = [&](int v, double theta, double phi, double u, double vv) {
    const double rad = uniform(r, 0.9, 1.1);
    m.vertices.row(v) << axes.x() * rad * std::sin(theta) * std::cos(phi), axes.y() * rad * std::cos(theta),
        axes.z() * rad * std::sin(theta) * std::sin(phi);
    m.uv.row(v) << u, vv;
  };
  constexpr double kPi = 3.14159265358979323846;
  put(0, 0.0, 0.0, 0.5, 0.0);
  for (int i = 1; i < rings; ++i)
    for (int j = 0; j < segments; ++j)
      put(1 + (i - 1) * segments + j, kPi * i / rings, 2.0 * kPi * j / segments, static_cast<double>(j) / segments,
          static_cast<double>(i) / rings);
  put(n - 1, kPi, 0.0, 0.5, 1.0);

  std::vector<std::array<int, 3>> tris;
  auto ring_v = [&](int i, int j) { return 1 + (i - 1) * segments + (j % segments); };
  for (int j = 0; j < segments; ++j) tris.push_back({0, ring_v(1, j + 1), ring_v(1, j)});
  for (int i = 1; i < rings - 1; ++i)
    for (int j = 0; j < segments; ++j) {
      tris.push_back({ring_v(i, j), ring_v(i, j + 1), ring_v(i + 1, j)});
      tris.push_back({ring_v(i, j + 1), ring_v(i + 1, j + 1), ring_v(i + 1, j)});
    }
  for (int j = 0; j < segments; ++j) tris.push_back({n - 1, ring_v(rings - 1, j), ring_v(rings - 1, j + 1)});
  m.faces.resize(static_cast<Eigen::Index>(tris.size()), 3);
  for (std::size_t f = 0; f < tris.size(); ++f) m.faces.row(static_cast<Eigen::Index>(f)) << tris[f][0], tris[f][1], tris[f][2];

  constexpr int kJoints = 3;
  m.joint_parents = {-1, 0, 1};
  m.skin_weights.resize(n, kJoints);
  for (int v = 0; v < n; ++v) {
    for (int j = 0; j < kJoints; ++j) m.skin_weights(v, j) = uniform(r, 0.0, 1.0);
    m.skin_weights.row(v) /= m.skin_weights.row(v).sum();
  }
  m.joint_regressor = Matrix::Zero(kJoints, n);
  for (int j = 0; j < kJoints; ++j) {
    double total = 0.0;
    for (int k = 0; k < 4; ++k) {
      const double w = uniform(r, 0.1, 1.0);
      m.joint_regressor(j, uniform_int(r, 0, n - 1)) += w;
      total += w;
    }
    m.joint_regressor.row(j) /= total;
  }
  for (int b = 0; b < 2; ++b) {
    Points offsets(n, 3);
    for (Eigen::Index k = 0; k < offsets.size(); ++k) offsets.data()[k] = uniform(r, -0.05, 0.05);
    m.blendshapes.push_back(offsets);
  }
  m.part_labels.resize(static_cast<std::size_t>(n));
  for (auto& p : m.part_labels) p = static_cast<Part>(uniform_int(r, 0, kNumParts - 1));
  return m;
}

namespace {

/// Stretches the half-space beyond a random plane so that edges there exceed the split threshold.
void stretch(RiggedMesh& m, Rng& r) {
  Eigen::Vector3d dir(uniform(r, -1.0, 1.0), uniform(r, -1.0, 1.0), uniform(r, -1.0, 1.0));
  dir.normalize();
  const double gain = uniform(r, 0.5, 2.5), offset = uniform(r, -0.3, 0.3);
  for (Eigen::Index v = 0; v < m.num_vertices(); ++v) {
    const Eigen::Vector3d p = m.vertices.row(v);
    const double s = p.dot(dir) - offset;
    if (s > 0.0) m.vertices.row(v) += (gain * s * dir).transpose();
  }
}

void scramble_faces(RiggedMesh& m, Rng& r, bool add_invalid) {
  for (Eigen::Index f = 0; f < m.num_faces(); ++f)
    if (uniform(r, 0.0, 1.0) < 0.3) std::swap(m.faces(f, 1), m.faces(f, 2));
  if (!add_invalid) return;
  const Eigen::Index f0 = m.num_faces();
  m.faces.conservativeResize(f0 + 2, 3);
  const auto src = static_cast<Eigen::Index>(uniform_int(r, 0, static_cast<int>(f0) - 1));
  m.faces.row(f0) = m.faces.row(src);                       // duplicate face
  m.faces.row(f0 + 1) << m.faces(src, 0), m.faces(src, 0), m.faces(src, 1);  // repeated index
}

Points joints_of(const RiggedMesh& m) { return m.joint_regressor * m.vertices; }

}  // namespace

SuiteReport run_geometry_suite(std::uint64_t seed, int fixtures) {
  const auto start = std::chrono::steady_clock::now();
  SuiteReport report{"geometry", {}, 0.0};
  Rng rng(seed);
  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  int manifold = 0, oriented = 0, weights = 0, joints = 0, idempotent = 0, bounded = 0, valid = 0, grew = 0;
  double worst_weight = 0.0, worst_joint = 0.0;
  std::string errors;
  for (int k = 0; k < fixtures; ++k) {
    RiggedMesh m = k % 10 == 0 ? rig : random_fixture_mesh(rng, uniform_int(rng, 3, 10), uniform_int(rng, 4, 14));
    stretch(m, rng);
    scramble_faces(m, rng, k % 3 == 0);
    const double eps = mean_edge_length(m) * uniform(rng, 0.8, 1.6);
    try {
      const RemeshResult out = topology_correct(m, eps);
      const RiggedMesh& o = out.mesh;
      manifold += is_edge_manifold(o.faces);
      oriented += is_consistently_oriented(o.faces);
      double wdev = 0.0;
      for (Eigen::Index v = 0; v < o.num_vertices(); ++v) wdev = std::max(wdev, std::abs(o.skin_weights.row(v).sum() - 1.0));
      worst_weight = std::max(worst_weight, wdev);
      weights += wdev <= 1e-9;
      const double jdev = (joints_of(o) - joints_of(m)).cwiseAbs().maxCoeff();
      worst_joint = std::max(worst_joint, jdev);
      joints += jdev <= 1e-6;
      bounded += max_edge_length(o) <= eps * (1.0 + 1e-9);
      valid += !find_invariant_violation(o).has_value();
      grew += o.num_vertices() > m.num_vertices();
      const RemeshResult again = topology_correct(o, eps);
      idempotent += !again.changed && again.mesh.faces == o.faces && again.mesh.vertices == o.vertices;
    } catch (const std::exception& e) {
      errors += fmt::format("fixture {}: {}; ", k, e.what());
    }
  }
  auto line = [&](const std::string& name, int count, std::string extra = {}) {
    report.lines.push_back({name, count == fixtures && errors.empty(),
                            fmt::format("{}/{} fixtures{}{}", count, fixtures, extra, errors.empty() ? "" : " | " + errors)});
  };
  line("edge_manifold", manifold);
  line("consistently_oriented", oriented);
  line("weight_rows_sum_to_one", weights, fmt::format(", max |sum - 1| {:.2e}", worst_weight));
  line("joints_preserved", joints, fmt::format(", max joint drift {:.2e}", worst_joint));
  line("idempotent", idempotent);
  line("edges_within_epsilon", bounded);
  line("rig_invariants", valid);
  report.lines.push_back({"fixtures_exercise_splitting", grew > fixtures / 2, fmt::format("{}/{} fixtures grew", grew, fixtures)});
  report.seconds = elapsed(start);
  return report;
}

std::vector<std::uint8_t> brute_force_coverage(const RiggedMesh& mesh, const Camera& camera, int width, int height) {
  std::vector<std::uint8_t> covered(static_cast<std::size_t>(width) * height, 0);
  for (Eigen::Index f = 0; f < mesh.num_faces(); ++f) {
    Eigen::Vector3d c[3];
    for (int k = 0; k < 3; ++k) c[k] = camera.to_camera(mesh.vertices.row(mesh.faces(f, k)).transpose());
    if (c[0].z() <= 1e-9 || c[1].z() <= 1e-9 || c[2].z() <= 1e-9) continue;
    if (c[0].dot(c[1].cross(c[2])) >= 0.0) continue;  // facing away
    double px[3], py[3];
    for (int k = 0; k < 3; ++k) {
      px[k] = camera.fx * c[k].x() / c[k].z() + camera.cx;
      py[k] = camera.fy * c[k].y() / c[k].z() + camera.cy;
    }
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double qx = x + 0.5, qy = y + 0.5;
        int pos = 0, neg = 0;
        for (int k = 0; k < 3; ++k) {
          const int l = (k + 1) % 3;
          const double e = (px[l] - px[k]) * (qy - py[k]) - (py[l] - py[k]) * (qx - px[k]);
          pos += e > 0.0;
          neg += e < 0.0;
        }
        if (pos == 3 || neg == 3) covered[static_cast<std::size_t>(y) * width + x] = 1;
      }
  }
  return covered;
}

namespace {

Camera random_camera(Rng& r, int width, int height, double distance, double focal) {
  const double yaw = uniform(r, -3.14159, 3.14159), pitch = uniform(r, -0.6, 0.6);
  const Eigen::Vector3d eye(distance * std::cos(pitch) * std::sin(yaw), distance * std::sin(pitch),
                            distance * std::cos(pitch) * std::cos(yaw));
  return Camera::look_at(eye, Eigen::Vector3d(uniform(r, -0.2, 0.2), uniform(r, -0.2, 0.2), 0.0),
                         Eigen::Vector3d::UnitY(), focal, width, height);
}

/// Smooth texture: a few low-frequency plane waves, values in [0.1, 0.9].
Image smooth_texture(Rng& r, int res) {
  Image t(res, res, 3);
  for (int c = 0; c < 3; ++c) {
    double fx[3], fy[3], ph[3], amp[3];
    for (int k = 0; k < 3; ++k) {
      fx[k] = uniform(r, -3.0, 3.0);
      fy[k] = uniform(r, -3.0, 3.0);
      ph[k] = uniform(r, 0.0, 6.283);
      amp[k] = uniform(r, 0.05, 0.13);
    }
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) {
        const double u = (x + 0.5) / res, v = (y + 0.5) / res;
        double val = 0.5;
        for (int k = 0; k < 3; ++k) val += amp[k] * std::sin(6.283185307 * (fx[k] * u + fy[k] * v) + ph[k]);
        t.at(y, x, c) = val;
      }
  }
  return t;
}

/// Independent random triangles (overlapping, both windings) with attributes sized for rasterization.
RiggedMesh triangle_soup(Rng& r, int count) {
  RiggedMesh m;
  const int n = 3 * count;
  m.vertices.resize(n, 3);
  m.uv.resize(n, 2);
  for (Eigen::Index k = 0; k < m.vertices.size(); ++k) m.vertices.data()[k] = uniform(r, -1.0, 1.0);
  for (Eigen::Index k = 0; k < m.uv.size(); ++k) m.uv.data()[k] = uniform(r, 0.0, 1.0);
  m.faces.resize(count, 3);
  for (int f = 0; f < count; ++f) m.faces.row(f) << 3 * f, 3 * f + 1, 3 * f + 2;
  m.part_labels.assign(static_cast<std::size_t>(n), Part::kFace);
  m.skin_weights = Matrix::Ones(n, 1);
  m.joint_regressor = Matrix::Constant(1, n, 1.0 / n);
  m.joint_parents = {-1};
  return m;
}

}  // namespace

SuiteReport run_roundtrip_suite(std::uint64_t seed, int triples) {
  const auto start = std::chrono::steady_clock::now();
  SuiteReport report{"roundtrip", {}, 0.0};
  Rng rng(seed);
  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  constexpr int kRender = 128, kTexture = 256;

  int psnr_ok = 0;
  double worst = kPsnrCap;
  std::size_t fewest_valid = std::numeric_limits<std::size_t>::max();
  for (int i = 0; i < triples; ++i) {
    PoseParams params = PoseParams::zeros(rig, kMiniRigShapeCount);
    for (Eigen::Index k = 0; k < params.shape_coeffs.size(); ++k) params.shape_coeffs[k] = uniform(rng, -1.0, 1.0);
    for (Eigen::Index k = 0; k < params.expr_coeffs.size(); ++k) params.expr_coeffs[k] = uniform(rng, 0.0, 1.0);
    for (std::size_t j = 1; j < params.joint_rotations.size(); ++j)
      params.joint_rotations[j] = Eigen::Vector3d(uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1), 0.0);
    params.camera = random_camera(rng, kRender, kRender, uniform(rng, 2.8, 3.6), 1.35 * kRender);
    const RiggedMesh posed = animate(add_blendshapes(rig.vertices, rig.blendshapes, 0, params.shape_coeffs), rig, params);
    const Image texture = smooth_texture(rng, kTexture);
    const Image image = shade_texture(rasterize(posed, params.camera, kRender, kRender), texture);
    const UvImage back = unwrap(image, posed, params.camera, kTexture, kTexture);
    std::vector<double> mask(back.valid.begin(), back.valid.end());
    const double p = psnr(back.values, texture, mask);
    worst = std::min(worst, p);
    fewest_valid = std::min(fewest_valid, back.valid_count());
    psnr_ok += p >= 40.0 && back.valid_count() > 1000;
  }
  report.lines.push_back({"render_unwrap_psnr", psnr_ok == triples,
                          fmt::format("{}/{} triples >= 40 dB, worst {:.2f} dB, fewest valid texels {}", psnr_ok,
                                      triples, worst, fewest_valid)});

  int exact = 0, cases = 0;
  std::size_t mismatched = 0, covered_total = 0;
  for (int i = 0; i < 2 * triples; ++i, ++cases) {
    RiggedMesh m;
    if (i % 2 == 0) {
      m = random_fixture_mesh(rng, uniform_int(rng, 3, 8), uniform_int(rng, 4, 12));
    } else {
      m = triangle_soup(rng, uniform_int(rng, 20, 200));
    }
    const int w = uniform_int(rng, 24, 80), h = uniform_int(rng, 24, 80);
    const Camera cam = random_camera(rng, w, h, uniform(rng, 2.5, 5.0), uniform(rng, 0.8, 1.6) * w);
    const RasterMap rmap = rasterize(m, cam, w, h);
    const auto oracle = brute_force_coverage(m, cam, w, h);
    std::size_t diff = 0;
    for (std::size_t p = 0; p < oracle.size(); ++p) {
      diff += (rmap.face_id[p] >= 0) != (oracle[p] != 0);
      covered_total += oracle[p];
    }
    mismatched += diff;
    exact += diff == 0;
  }
  report.lines.push_back({"coverage_matches_oracle", exact == cases,
                          fmt::format("{}/{} meshes exact, {} mismatched pixels of {} covered", exact, cases,
                                      mismatched, covered_total)});
  report.seconds = elapsed(start);
  return report;
}

}  // namespace avatarforge
