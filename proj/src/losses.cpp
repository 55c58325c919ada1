#include "avatarforge/losses.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "avatarforge/raster.hpp"

namespace avatarforge {

using namespace ad;

Tensor image_to_tensor(const Image& image) {
  return Tensor::constant({image.height, image.width, image.channels}, image.data);
}

Image tensor_to_image(const Tensor& t) {
  if (t.rank() != 3) throw Error(ErrorCode::kShapeMismatch, fmt::format("not an image tensor: {}", shape_str(t.shape())));
  Image img(t.dim(0), t.dim(1), t.dim(2));
  std::copy(t.values().begin(), t.values().end(), img.data.begin());
  return img;
}

SparseRows avgpool_plan(int height, int width, int k) {
  if (k <= 0 || height % k != 0 || width % k != 0)
    throw Error(ErrorCode::kShapeMismatch, fmt::format("avgpool: {}x{} not divisible by {}", height, width, k));
  SparseRows plan;
  plan.num_cols = static_cast<std::size_t>(height) * width;
  const double w = 1.0 / (k * k);
  std::vector<std::pair<std::size_t, double>> row;
  for (int y = 0; y < height / k; ++y) {
    for (int x = 0; x < width / k; ++x) {
      row.clear();
      for (int dy = 0; dy < k; ++dy)
        for (int dx = 0; dx < k; ++dx)
          row.emplace_back(static_cast<std::size_t>(y * k + dy) * width + (x * k + dx), w);
      plan.add_row(row);
    }
  }
  return plan;
}

namespace {

std::vector<double> broadcast(std::span<const double> pixel_mask, std::size_t pixels, std::size_t channels) {
  std::vector<double> w(pixels * channels, 1.0);
  if (pixel_mask.empty()) return w;
  if (pixel_mask.size() != pixels)
    throw Error(ErrorCode::kShapeMismatch, fmt::format("mask has {} entries for {} pixels", pixel_mask.size(), pixels));
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t c = 0; c < channels; ++c) w[p * channels + c] = pixel_mask[p];
  return w;
}

void require_image_pair(const Tensor& a, const Tensor& b, const char* what) {
  if (a.rank() != 3 || a.shape() != b.shape())
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("{}: {} vs {}", what, shape_str(a.shape()), shape_str(b.shape())));
}

}  // namespace

Tensor loss_img(const Tensor& rendered, const Tensor& gt, std::span<const double> pixel_mask) {
  require_image_pair(rendered, gt, "loss_img");
  int h = rendered.dim(0), w = rendered.dim(1);
  const int c = rendered.dim(2);
  std::vector<double> weights = broadcast(pixel_mask, static_cast<std::size_t>(h) * w, static_cast<std::size_t>(c));
  Tensor r = rendered, g = gt;
  if (!pixel_mask.empty()) {
    const Tensor m = Tensor::constant(rendered.shape(), weights);
    r = mul(r, m);
    g = mul(g, m);
  }
  Tensor total = weighted_mse(r, g, weights);
  std::vector<double> level_mask(pixel_mask.begin(), pixel_mask.end());
  for (int level = 1; level <= kPyramidLevels; ++level) {
    const auto plan = std::make_shared<const SparseRows>(avgpool_plan(h, w, 2));
    h /= 2;
    w /= 2;
    r = reshape(gather(reshape(r, {2 * h * 2 * w, c}), plan), {h, w, c});
    g = reshape(gather(reshape(g, {2 * h * 2 * w, c}), plan), {h, w, c});
    if (!level_mask.empty()) {
      std::vector<double> pooled(static_cast<std::size_t>(h) * w);
      apply_rows(*plan, level_mask, 1, pooled);
      for (double& v : pooled) v = v > 0.0 ? 1.0 : 0.0;
      level_mask = std::move(pooled);
    }
    weights = broadcast(level_mask, static_cast<std::size_t>(h) * w, static_cast<std::size_t>(c));
    total = add(total, weighted_mse(r, g, weights));
  }
  return total;
}

Tensor loss_mask(const Tensor& rendered, const Tensor& gt) {
  require_image_pair(rendered, gt, "loss_mask");
  return mse(rendered, gt);
}

Tensor loss_normal(const Tensor& rendered, const Tensor& gt, std::span<const double> pixel_mask) {
  require_image_pair(rendered, gt, "loss_normal");
  const std::size_t pixels = static_cast<std::size_t>(rendered.dim(0)) * rendered.dim(1);
  const int c = rendered.dim(2);
  return scale(weighted_mse(rendered, gt, broadcast(pixel_mask, pixels, static_cast<std::size_t>(c))), c);
}

Tensor loss_part(const Tensor& rendered, const Tensor& gt, std::span<const double> pixel_mask) {
  require_image_pair(rendered, gt, "loss_part");
  const std::size_t pixels = static_cast<std::size_t>(rendered.dim(0)) * rendered.dim(1);
  return weighted_mse(rendered, gt, broadcast(pixel_mask, pixels, static_cast<std::size_t>(rendered.dim(2))));
}

SparseRows umbrella_operator(const Points& vertices, const Faces& faces, std::size_t* isolated) {
  const auto n = static_cast<std::size_t>(vertices.rows());
  const std::vector<int> rep = weld_map(vertices);
  std::vector<std::set<int>> ring(n);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int a = rep[static_cast<std::size_t>(faces(f, k))], b = rep[static_cast<std::size_t>(faces(f, (k + 1) % 3))];
      if (a == b) continue;
      ring[static_cast<std::size_t>(a)].insert(b);
      ring[static_cast<std::size_t>(b)].insert(a);
    }
  }
  SparseRows op;
  op.num_cols = n;
  std::size_t lonely = 0;
  std::vector<std::pair<std::size_t, double>> row;
  for (std::size_t v = 0; v < n; ++v) {
    if (rep[v] != static_cast<int>(v)) continue;
    if (ring[v].empty()) {
      ++lonely;
      continue;
    }
    row.clear();
    row.emplace_back(v, 1.0);
    const double w = -1.0 / static_cast<double>(ring[v].size());
    for (int u : ring[v]) row.emplace_back(static_cast<std::size_t>(u), w);
    op.add_row(row);
  }
  if (isolated) *isolated = lonely;
  return op;
}

Tensor loss_laplacian(const Tensor& vertices, const SparseRows& umbrella) {
  const Tensor d = gather(vertices, umbrella);
  return sum(mul(d, d));
}

double loss_laplacian(const Points& vertices, const Faces& faces) {
  NoGradGuard guard;
  const Tensor v = Tensor::constant({static_cast<int>(vertices.rows()), 3},
                                    std::vector<double>(vertices.data(), vertices.data() + vertices.size()));
  return loss_laplacian(v, umbrella_operator(vertices, faces)).item();
}

Tensor per_iteration_loss(const LossTerms& t, const LossWeights& w) {
  Tensor total = scale(t.img, w.img);
  total = add(total, scale(t.mask, w.mask));
  total = add(total, scale(t.normal, w.normal));
  total = add(total, scale(t.part, w.part));
  return add(total, scale(t.lap, w.lap));
}

Tensor total_loss(const std::vector<Tensor>& per_iteration, double gamma, int n) {
  if (static_cast<int>(per_iteration.size()) != n || n < 1)
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("total_loss: {} iteration losses for N = {}", per_iteration.size(), n));
  Tensor total = scale(per_iteration[0], std::pow(gamma, n - 1));
  for (int t = 2; t <= n; ++t) total = add(total, scale(per_iteration[static_cast<std::size_t>(t - 1)], std::pow(gamma, n - t)));
  return total;
}

}  // namespace avatarforge
