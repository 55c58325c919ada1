#pragma once

#include <array>
#include <span>
#include <vector>

#include "avatarforge/image.hpp"
#include "avatarforge/mesh.hpp"
#include "avatarforge/ops.hpp"

namespace avatarforge {

using ad::Tensor;

Tensor image_to_tensor(const Image& image);  // H x W x C constant
Image tensor_to_image(const Tensor& t);       // rank-3 tensor

/// Mean over a k x k block of an H x W x C map, as a gather plan over H*W rows (H, W divisible by k).
SparseRows avgpool_plan(int height, int width, int k);

/// Pixel MSE plus the 3-level average-pool pyramid proxy for the perceptual term, restricted to
/// pixels with nonzero `pixel_mask` (H*W entries; empty means all pixels).
Tensor loss_img(const Tensor& rendered, const Tensor& gt, std::span<const double> pixel_mask = {});
inline constexpr int kPyramidLevels = 3;

/// Mean-squared silhouette error over all pixels.
Tensor loss_mask(const Tensor& rendered, const Tensor& gt);

/// Squared normal difference summed over the 3 channels, averaged over masked pixels.
Tensor loss_normal(const Tensor& rendered, const Tensor& gt, std::span<const double> pixel_mask);

/// Mean-squared error over part channels and masked pixels.
Tensor loss_part(const Tensor& rendered, const Tensor& gt, std::span<const double> pixel_mask = {});

/// Uniform umbrella operator on the welded mesh: row i = v_i - mean of its one-ring, for one representative per
/// group of coincident vertices. Vertices without neighbours get no row and are counted in `isolated`.
SparseRows umbrella_operator(const Points& vertices, const Faces& faces, std::size_t* isolated = nullptr);

/// Sum over vertices of |v_i - mean_{j in N(i)} v_j|^2.
Tensor loss_laplacian(const Tensor& vertices, const SparseRows& umbrella);
double loss_laplacian(const Points& vertices, const Faces& faces);

struct LossWeights {
  double img = 1.0;
  double mask = 1.0;
  double normal = 1.0;
  double part = 0.5;
  double lap = 2.0;
};

struct LossTerms {
  Tensor img, mask, normal, part, lap;
};

/// lambda_i L_img + lambda_m L_mask + lambda_n L_normal + lambda_p L_part + lambda_l L_lap.
Tensor per_iteration_loss(const LossTerms& terms, const LossWeights& weights);

/// sum_{t=1..N} gamma^(N - t) L_t. Throws kShapeMismatch when the list length differs from n.
Tensor total_loss(const std::vector<Tensor>& per_iteration, double gamma, int n);

}  // namespace avatarforge
