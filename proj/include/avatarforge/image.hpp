#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace avatarforge {

/// Dense H x W x C float image, row-major, channels interleaved.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t index(int y, int x, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int y, int x, int c = 0) { return data[index(y, x, c)]; }
  double at(int y, int x, int c = 0) const { return data[index(y, x, c)]; }
  std::size_t num_pixels() const { return static_cast<std::size_t>(height) * width; }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

/// Texture-space image with a per-texel validity mask.
struct UvImage {
  Image values;
  std::vector<std::uint8_t> valid;  // H x W, 0 or 1

  UvImage() = default;
  UvImage(int h, int w, int c) : values(h, w, c), valid(static_cast<std::size_t>(h) * w, 0) {}
  bool is_valid(int y, int x) const { return valid[static_cast<std::size_t>(y) * values.width + x] != 0; }
  std::size_t valid_count() const;
};

/// Format is chosen by extension: .png (8-bit, 1/3/4 channels) or .pfm (float32, 1/3 channels).
Image load_image(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path);

Image load_png(const std::filesystem::path& path);
void save_png(const Image& image, const std::filesystem::path& path);
Image load_pfm(const std::filesystem::path& path);
void save_pfm(const Image& image, const std::filesystem::path& path);

/// Bilinear sample at continuous pixel coordinates (pixel centres at integer + 0.5), clamp-to-edge.
void sample_bilinear(const Image& image, double px, double py, double* out);

}  // namespace avatarforge
