#include "avatarforge/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "avatarforge/error.hpp"

namespace avatarforge {

namespace {

void check_pair(const Image& a, const Image& b, std::span<const double> mask) {
  if (!a.same_shape(b))
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("metric inputs {}x{}x{} vs {}x{}x{}", a.height, a.width, a.channels, b.height, b.width,
                            b.channels));
  if (!mask.empty() && mask.size() != a.num_pixels())
    throw Error(ErrorCode::kShapeMismatch, fmt::format("mask has {} entries for {} pixels", mask.size(), a.num_pixels()));
}

bool in_mask(std::span<const double> mask, std::size_t p) { return mask.empty() || mask[p] > 0.5; }

constexpr int kRadius = 5;

std::array<double, 2 * kRadius + 1> gaussian_taps() {
  std::array<double, 2 * kRadius + 1> g{};
  double total = 0.0;
  for (int i = -kRadius; i <= kRadius; ++i) total += g[static_cast<std::size_t>(i + kRadius)] = std::exp(-(i * i) / (2.0 * 1.5 * 1.5));
  for (double& v : g) v /= total;
  return g;
}

/// Separable Gaussian blur of one channel with border-truncated, renormalized windows.
std::vector<double> blur(const std::vector<double>& src, int h, int w) {
  static const auto taps = gaussian_taps();
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0, wsum = 0.0;
      for (int k = -kRadius; k <= kRadius; ++k) {
        const int xx = x + k;
        if (xx < 0 || xx >= w) continue;
        const double t = taps[static_cast<std::size_t>(k + kRadius)];
        acc += t * src[static_cast<std::size_t>(y) * w + xx];
        wsum += t;
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc / wsum;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0, wsum = 0.0;
      for (int k = -kRadius; k <= kRadius; ++k) {
        const int yy = y + k;
        if (yy < 0 || yy >= h) continue;
        const double t = taps[static_cast<std::size_t>(k + kRadius)];
        acc += t * tmp[static_cast<std::size_t>(yy) * w + x];
        wsum += t;
      }
      out[static_cast<std::size_t>(y) * w + x] = acc / wsum;
    }
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b, std::span<const double> mask) {
  check_pair(a, b, mask);
  double sq = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < a.num_pixels(); ++p) {
    if (!in_mask(mask, p)) continue;
    for (int c = 0; c < a.channels; ++c) {
      const double d = a.data[p * a.channels + c] - b.data[p * b.channels + c];
      sq += d * d;
      ++count;
    }
  }
  if (count == 0 || sq == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(sq / static_cast<double>(count)));
}

double ssim(const Image& a, const Image& b, std::span<const double> mask) {
  check_pair(a, b, mask);
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int h = a.height, w = a.width;
  const std::size_t n = a.num_pixels();
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (int c = 0; c < a.channels; ++c) {
    for (std::size_t p = 0; p < n; ++p) {
      x[p] = a.data[p * a.channels + c];
      y[p] = b.data[p * b.channels + c];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mx = blur(x, h, w), my = blur(y, h, w), sxx = blur(xx, h, w), syy = blur(yy, h, w),
               sxy = blur(xy, h, w);
    for (std::size_t p = 0; p < n; ++p) {
      if (!in_mask(mask, p)) continue;
      const double vx = sxx[p] - mx[p] * mx[p], vy = syy[p] - my[p] * my[p], cov = sxy[p] - mx[p] * my[p];
      total += ((2.0 * mx[p] * my[p] + c1) * (2.0 * cov + c2)) /
               ((mx[p] * mx[p] + my[p] * my[p] + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return count == 0 ? 1.0 : total / static_cast<double>(count);
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  f << "step,L_img,L_mask,L_normal,L_part,L_lap,L_total,psnr,ssim\n";
  for (const auto& r : rows)
    f << fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.6f},{:.6f}\n", r.step, r.l_img, r.l_mask,
                     r.l_normal, r.l_part, r.l_lap, r.l_total, r.psnr, r.ssim);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("write failed for {}", path.string()));
}

}  // namespace avatarforge
