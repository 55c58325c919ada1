#include "avatarforge/neural.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace avatarforge::nn {

using namespace ad;

std::vector<double> InitRng::kaiming_uniform(std::size_t count, int fan_in, double gain) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> out(count);
  for (double& v : out) v = uniform(-bound, bound);
  return out;
}

Tensor positional_encoding(const Tensor& points, int n_freq) {
  if (points.rank() != 2 || points.dim(1) != 3)
    throw Error(ErrorCode::kShapeMismatch, fmt::format("positional_encoding: {}", shape_str(points.shape())));
  std::vector<Tensor> parts{points};
  for (int k = 0; k < n_freq; ++k) {
    const Tensor arg = scale(points, std::ldexp(std::numbers::pi, k));
    parts.push_back(ad::sin(arg));
    parts.push_back(ad::cos(arg));
  }
  return concat(parts, 1);
}

Linear Linear::create(ParamStore& store, const std::string& name, int in, int out, InitRng& rng, double gain) {
  Linear l;
  l.weight = store.add(name + ".weight", {in, out}, rng.kaiming_uniform(static_cast<std::size_t>(in) * out, in, gain));
  l.bias = store.add(name + ".bias", {out}, std::vector<double>(static_cast<std::size_t>(out), 0.0));
  return l;
}

Tensor Linear::operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }

Mlp Mlp::create(ParamStore& store, const std::string& name, const std::vector<int>& dims, InitRng& rng) {
  Mlp m;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i)
    m.layers.push_back(Linear::create(store, fmt::format("{}.{}", name, i), dims[i], dims[i + 1], rng));
  return m;
}

Tensor Mlp::operator()(const Tensor& x) const {
  Tensor y = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    y = layers[i](y);
    if (i + 1 < layers.size()) y = relu(y);
  }
  return y;
}

Conv Conv::create(ParamStore& store, const std::string& name, int in, int out, InitRng& rng, int k, double gain) {
  Conv c;
  const std::size_t count = static_cast<std::size_t>(k) * k * in * out;
  c.kernel = store.add(name + ".kernel", {k, k, in, out}, rng.kaiming_uniform(count, k * k * in, gain));
  c.bias = store.add(name + ".bias", {out}, std::vector<double>(static_cast<std::size_t>(out), 0.0));
  return c;
}

Tensor Conv::operator()(const Tensor& x) const { return conv2d(x, kernel, bias, padding); }

CrossAttention CrossAttention::create(ParamStore& store, const std::string& name, int dim, int heads, InitRng& rng) {
  if (heads <= 0 || dim % heads != 0)
    throw Error(ErrorCode::kShapeMismatch, fmt::format("attention: dim {} not divisible by {} heads", dim, heads));
  CrossAttention a;
  a.heads = heads;
  a.q_proj = Linear::create(store, name + ".q_proj", dim, dim, rng);
  a.k_proj = Linear::create(store, name + ".k_proj", dim, dim, rng);
  a.v_proj = Linear::create(store, name + ".v_proj", dim, dim, rng);
  a.out_proj = Linear::create(store, name + ".out_proj", dim, dim, rng);
  a.ffn = Mlp::create(store, name + ".ffn", {dim, 2 * dim, dim}, rng);
  return a;
}

Tensor CrossAttention::operator()(const Tensor& queries, const Tensor& context, std::vector<Tensor>* weights) const {
  const int dim = q_proj.weight.dim(0);
  if (queries.rank() != 2 || context.rank() != 2 || queries.dim(1) != dim || context.dim(1) != dim)
    throw Error(ErrorCode::kShapeMismatch, fmt::format("attention: queries {} context {} for dim {}",
                                                       shape_str(queries.shape()), shape_str(context.shape()), dim));
  const int head_dim = dim / heads;
  const Tensor q = q_proj(queries), k = k_proj(context), v = v_proj(context);
  std::vector<Tensor> outputs;
  for (int h = 0; h < heads; ++h) {
    const Tensor qh = slice(q, 1, h * head_dim, head_dim);
    const Tensor kh = slice(k, 1, h * head_dim, head_dim);
    const Tensor vh = slice(v, 1, h * head_dim, head_dim);
    const Tensor attn = softmax(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(head_dim))), 1);
    if (weights) weights->push_back(attn);
    outputs.push_back(matmul(attn, vh));
  }
  const Tensor x = add(queries, out_proj(heads == 1 ? outputs[0] : concat(outputs, 1)));
  return add(x, ffn(x));
}

VecGru VecGru::create(ParamStore& store, const std::string& name, int in, int hidden, InitRng& rng) {
  VecGru g;
  g.z = Linear::create(store, name + ".z", in + hidden, hidden, rng);
  g.r = Linear::create(store, name + ".r", in + hidden, hidden, rng);
  g.h = Linear::create(store, name + ".h", in + hidden, hidden, rng);
  std::fill(g.z.bias.mutable_values().begin(), g.z.bias.mutable_values().end(), kUpdateGateBias);
  return g;
}

Tensor VecGru::operator()(const Tensor& x, const Tensor& state) const {
  const Tensor xh = concat({x, state}, 1);
  const Tensor zt = sigmoid(z(xh));
  const Tensor rt = sigmoid(r(xh));
  const Tensor cand = ad::tanh(h(concat({x, mul(rt, state)}, 1)));
  return add(state, mul(zt, sub(cand, state)));
}

ConvGru ConvGru::create(ParamStore& store, const std::string& name, int in, int hidden, InitRng& rng) {
  ConvGru g;
  g.z = Conv::create(store, name + ".z", in + hidden, hidden, rng);
  g.r = Conv::create(store, name + ".r", in + hidden, hidden, rng);
  g.h = Conv::create(store, name + ".h", in + hidden, hidden, rng);
  std::fill(g.z.bias.mutable_values().begin(), g.z.bias.mutable_values().end(), kUpdateGateBias);
  return g;
}

Tensor ConvGru::operator()(const Tensor& x, const Tensor& state) const {
  if (x.rank() != 3 || state.rank() != 3 || x.dim(0) != state.dim(0) || x.dim(1) != state.dim(1))
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("conv_gru: input {} vs state {}", shape_str(x.shape()), shape_str(state.shape())));
  const Tensor xh = concat({x, state}, 2);
  const Tensor zt = sigmoid(z(xh));
  const Tensor rt = sigmoid(r(xh));
  const Tensor cand = ad::tanh(h(concat({x, mul(rt, state)}, 2)));
  return add(state, mul(zt, sub(cand, state)));
}

PatchEncoder PatchEncoder::create(ParamStore& store, const std::string& name, int patch, int in_channels, int dim,
                                  InitRng& rng) {
  PatchEncoder e;
  e.patch = patch;
  e.embed = Linear::create(store, name + ".embed", patch * patch * in_channels, dim, rng);
  e.stage1 = Conv::create(store, name + ".stage1", dim, dim, rng);
  e.stage2 = Conv::create(store, name + ".stage2", dim, dim, rng);
  e.stage1.padding = e.stage2.padding = Padding::kReplicate;
  e.fuse = Mlp::create(store, name + ".fuse", {2 * dim, dim, dim}, rng);
  return e;
}

Tensor PatchEncoder::operator()(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) % patch != 0 || image.dim(1) % patch != 0)
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("patch_encoder: {} not divisible by patch {}", shape_str(image.shape()), patch));
  const int gh = image.dim(0) / patch, gw = image.dim(1) / patch;
  const int dim = embed.weight.dim(1);
  const Tensor tokens = embed(patchify(image, patch));
  const Tensor s1 = relu(stage1(reshape(tokens, {gh, gw, dim})));
  const Tensor s2 = relu(stage2(s1));
  const Tensor stacked = concat({reshape(s1, {gh * gw, dim}), reshape(s2, {gh * gw, dim})}, 1);
  return fuse(stacked);
}

TexDecoder TexDecoder::create(ParamStore& store, const std::string& name, int grid, int dim, int out_resolution,
                              int feature_channels, InitRng& rng) {
  if (grid <= 0 || out_resolution % grid != 0 || ((out_resolution / grid) & (out_resolution / grid - 1)) != 0)
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("tex_decoder: {} -> {} is not a power-of-two upsampling", grid, out_resolution));
  TexDecoder d;
  d.grid = grid;
  int channels = dim;
  for (int res = grid, i = 0; res < out_resolution; res *= 2, ++i) {
    const int next = std::max(16, channels / 2);
    d.stages.push_back(Conv::create(store, fmt::format("{}.stage.{}", name, i), channels, next, rng));
    channels = next;
  }
  d.color_head = Conv::create(store, name + ".color_head", channels, 3, rng);
  d.feature_head = Conv::create(store, name + ".feature_head", channels, feature_channels, rng);
  return d;
}

TexDecoder::Output TexDecoder::operator()(const Tensor& tokens) const {
  const int dim = stages.empty() ? color_head.kernel.dim(2) : stages.front().kernel.dim(2);
  if (tokens.rank() != 2 || tokens.dim(0) != grid * grid || tokens.dim(1) != dim)
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("tex_decoder: tokens {} for a {}x{}x{} grid", shape_str(tokens.shape()), grid, grid, dim));
  Tensor x = reshape(tokens, {grid, grid, dim});
  for (const Conv& stage : stages) x = relu(stage(upsample_nearest(x, 2)));
  Output out;
  out.logits = color_head(x);
  out.texture = sigmoid(out.logits);
  out.features = feature_head(x);
  return out;
}

}  // namespace avatarforge::nn
