#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "avatarforge/ops.hpp"
#include "avatarforge/optim.hpp"

namespace avatarforge::nn {

using ad::ParamStore;
using ad::Shape;
using ad::Tensor;

/// Seeded source of initial weights; independent of the standard library's distribution implementations.
class InitRng {
 public:
  explicit InitRng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  std::vector<double> kaiming_uniform(std::size_t count, int fan_in, double gain = 1.0);

 private:
  std::mt19937_64 engine_;
};

/// [p, sin(2^k pi p), cos(2^k pi p)] for k < n_freq; points N x 3 -> N x (3 + 6 n_freq).
Tensor positional_encoding(const Tensor& points, int n_freq);
inline int positional_width(int n_freq) { return 3 + 6 * n_freq; }

/// y = x W + b, W stored [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;
  static Linear create(ParamStore& store, const std::string& name, int in, int out, InitRng& rng,
                       double gain = 1.0);
  Tensor operator()(const Tensor& x) const;
};

/// Linear layers with relu between them and none on the output.
struct Mlp {
  std::vector<Linear> layers;
  static Mlp create(ParamStore& store, const std::string& name, const std::vector<int>& dims, InitRng& rng);
  Tensor operator()(const Tensor& x) const;
};

/// 3x3 (by default) same-size convolution on H x W x C images.
struct Conv {
  Tensor kernel;
  Tensor bias;
  ad::Padding padding = ad::Padding::kZero;
  static Conv create(ParamStore& store, const std::string& name, int in, int out, InitRng& rng, int k = 3,
                     double gain = 1.0);
  Tensor operator()(const Tensor& x) const;
};

/// Multi-head cross-attention (queries from F_q, keys/values from the context), residual,
/// then a per-token two-layer MLP with residual. No normalization.
struct CrossAttention {
  int heads = 1;
  Linear q_proj, k_proj, v_proj, out_proj;
  Mlp ffn;
  static CrossAttention create(ParamStore& store, const std::string& name, int dim, int heads, InitRng& rng);
  /// `weights`, when given, receives one N_q x N_c probability matrix per head.
  Tensor operator()(const Tensor& queries, const Tensor& context, std::vector<Tensor>* weights = nullptr) const;
};

/// z = s(W_z[x,h]), r = s(W_r[x,h]), h~ = tanh(W_h[x, r*h]), h' = (1 - z) h + z h~.
struct VecGru {
  Linear z, r, h;
  static VecGru create(ParamStore& store, const std::string& name, int in, int hidden, InitRng& rng);
  Tensor operator()(const Tensor& x, const Tensor& state) const;
};

/// VecGru with 3x3 convolutions over H x W x C maps.
struct ConvGru {
  Conv z, r, h;
  static ConvGru create(ParamStore& store, const std::string& name, int in, int hidden, InitRng& rng);
  Tensor operator()(const Tensor& x, const Tensor& state) const;
};

inline constexpr double kUpdateGateBias = -2.0;

/// Patch-embedding image encoder: patchify + linear, two conv stages, stage concat, MLP fuse.
struct PatchEncoder {
  int patch = 8;
  Linear embed;
  Conv stage1, stage2;
  Mlp fuse;
  static PatchEncoder create(ParamStore& store, const std::string& name, int patch, int in_channels, int dim,
                             InitRng& rng);
  /// H x W x C image -> (H/p)(W/p) x dim tokens. Throws kShapeMismatch when H or W is not a multiple of p.
  Tensor operator()(const Tensor& image) const;
};

/// Token grid -> texture and texture-aligned features through upsample + conv stages.
struct TexDecoder {
  int grid = 16;
  std::vector<Conv> stages;
  Conv color_head, feature_head;
  static TexDecoder create(ParamStore& store, const std::string& name, int grid, int dim, int out_resolution,
                           int feature_channels, InitRng& rng);
  struct Output {
    Tensor logits;    // H_a x W_a x 3, pre-sigmoid
    Tensor texture;   // sigmoid(logits)
    Tensor features;  // H_a x W_a x C_a
  };
  /// tokens: grid^2 x dim in raster order.
  Output operator()(const Tensor& tokens) const;
};

}  // namespace avatarforge::nn
