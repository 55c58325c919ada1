#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "avatarforge/image.hpp"

namespace avatarforge {

inline constexpr double kPsnrCap = 99.0;

/// PSNR with peak 1.0 over pixels where mask > 0.5 (empty mask = all pixels); identical inputs give kPsnrCap.
double psnr(const Image& a, const Image& b, std::span<const double> mask = {});

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2) over masked pixels and channels.
/// Windows are truncated at the border and renormalized.
double ssim(const Image& a, const Image& b, std::span<const double> mask = {});

struct MetricsRow {
  long step = 0;
  double l_img = 0, l_mask = 0, l_normal = 0, l_part = 0, l_lap = 0, l_total = 0;
  double psnr = 0, ssim = 0;
};

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);

}  // namespace avatarforge
