#pragma once

#include <Eigen/Core>
#include <memory>
#include <span>
#include <vector>

#include "avatarforge/mesh.hpp"
#include "avatarforge/sparse.hpp"
#include "avatarforge/tensor.hpp"

namespace avatarforge::ad {

// Elementwise; operands must have identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor scale(const Tensor& a, double s);
/// x[..., c] + b[c].
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sin(const Tensor& x);

/// While alive, every relu on this thread appends (x > 0) for each input element to `signs`.
/// Finite-difference checks use it to skip probes that straddle a kink.
class ReluSignRecorder {
 public:
  explicit ReluSignRecorder(std::vector<std::uint8_t>& signs);
  ~ReluSignRecorder();
  ReluSignRecorder(const ReluSignRecorder&) = delete;
  ReluSignRecorder& operator=(const ReluSignRecorder&) = delete;

 private:
  std::vector<std::uint8_t>* previous_;
};
Tensor cos(const Tensor& x);

/// [M, K] x [K, N] -> [M, N].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // rank 2
Tensor reshape(const Tensor& a, Shape shape);

Tensor softmax(const Tensor& x, int axis);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int length);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// mean((a - b)^2).
Tensor mse(const Tensor& a, const Tensor& b);
/// sum(w (a - b)^2) / sum(w) with constant per-element weights; 0 when sum(w) == 0.
Tensor weighted_mse(const Tensor& a, const Tensor& b, std::span<const double> weights);

enum class Padding { kZero, kReplicate };

/// Cross-correlation on an H x W x C_in image with a [k, k, C_in, C_out] kernel, stride 1, "same" size.
/// `bias` may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias = {}, Padding padding = Padding::kZero);

/// Non-overlapping p x p patches of an H x W x C image -> [(H/p)(W/p), p*p*C], patches in raster order.
Tensor patchify(const Tensor& x, int patch);

/// Nearest-neighbour upsampling of an H x W x C image by an integer factor.
Tensor upsample_nearest(const Tensor& x, int factor);

/// out[r, ...] = sum_k w_k x[col_k, ...]; backward scatters. Rows index the first axis.
Tensor gather(const Tensor& x, std::shared_ptr<const SparseRows> rows);
Tensor gather(const Tensor& x, const SparseRows& rows);

/// Elementwise clamp to [lo_i, hi_i]; gradient passes where lo_i <= x_i <= hi_i and is zero elsewhere.
Tensor clamp(const Tensor& x, std::span<const double> lo, std::span<const double> hi);

/// Per-row affine map of an N x 3 tensor: out_v = A_v[:, :3] x_v + A_v[:, 3], A constant.
Tensor affine_rows(const Tensor& points, std::span<const Eigen::Matrix<double, 3, 4>> transforms);

/// Area-weighted (unnormalized) vertex normals: sum of (b - a) x (c - a) over incident faces.
Tensor face_normal_sum(const Tensor& points, const Faces& faces);

/// Rows scaled to unit length; zero rows stay zero.
Tensor normalize_rows(const Tensor& x);

}  // namespace avatarforge::ad
