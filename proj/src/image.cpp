#include "avatarforge/image.hpp"

#include <png.h>

#include <csetjmp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "avatarforge/error.hpp"

namespace avatarforge {

std::size_t UvImage::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

namespace {

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_error_handler(png_structp png, png_const_charp) { png_longjmp(png, 1); }
void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace

Image load_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw Error(ErrorCode::kIo, fmt::format("cannot open {}", path.string()));
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8) throw Error(ErrorCode::kTruncated, path.string());
  if (png_sig_cmp(sig, 0, 8) != 0)
    throw Error(ErrorCode::kUnsupportedFormat, fmt::format("{} is not a PNG", path.string()));

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler,
                                           png_warning_handler);
  png_infop info = png_create_info_struct(png);
  std::vector<unsigned char> raw;
  std::vector<png_bytep> rows;
  int width = 0, height = 0, channels = 0;
  // Nothing with a destructor may be constructed between setjmp and the last libpng call.
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::kTruncated, fmt::format("{}: corrupt or truncated PNG", path.string()));
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  {
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);
  channels = png_get_channels(png, info);
  raw.resize(static_cast<std::size_t>(width) * height * channels);
  rows.resize(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[y] = raw.data() + static_cast<std::size_t>(y) * width * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image image(height, width, channels);
  for (std::size_t i = 0; i < raw.size(); ++i) image.data[i] = raw[i] / 255.0;
  return image;
}

void save_png(const Image& image, const std::filesystem::path& path) {
  const int color_type = image.channels == 1   ? PNG_COLOR_TYPE_GRAY
                         : image.channels == 3 ? PNG_COLOR_TYPE_RGB
                         : image.channels == 4 ? PNG_COLOR_TYPE_RGBA
                                               : -1;
  if (color_type < 0) throw Error(ErrorCode::kUnsupportedFormat, fmt::format("png with {} channels", image.channels));
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));

  std::vector<unsigned char> raw(image.data.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double v = std::clamp(image.data[i], 0.0, 1.0);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler,
                                            png_warning_handler);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::kIo, fmt::format("png encoding failed for {}", path.string()));
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y)
    png_write_row(png, raw.data() + static_cast<std::size_t>(y) * image.width * image.channels);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(fp.get()) != 0) throw Error(ErrorCode::kIo, fmt::format("flush failed on {}", path.string()));
}

Image load_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open {}", path.string()));
  std::string magic;
  int width = 0, height = 0;
  double scale = 0.0;
  if (!(in >> magic >> width >> height >> scale)) throw Error(ErrorCode::kTruncated, path.string());
  in.get();  // single whitespace before the payload
  int channels = 0;
  if (magic == "PF") channels = 3;
  else if (magic == "Pf") channels = 1;
  else throw Error(ErrorCode::kUnsupportedFormat, fmt::format("{} is not a PFM", path.string()));
  if (width <= 0 || height <= 0) throw Error(ErrorCode::kParse, "pfm dimensions");

  const bool little = scale < 0.0;
  const std::size_t count = static_cast<std::size_t>(width) * height * channels;
  std::vector<std::uint32_t> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * 4));
  if (static_cast<std::size_t>(in.gcount()) != count * 4)
    throw Error(ErrorCode::kTruncated, fmt::format("{}: payload too short", path.string()));
  const bool native_little = std::endian::native == std::endian::little;

  Image image(height, width, channels);
  for (int row = 0; row < height; ++row) {
    const int y = height - 1 - row;  // PFM stores bottom row first
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < channels; ++c) {
        std::uint32_t bits = raw[(static_cast<std::size_t>(row) * width + x) * channels + c];
        if (little != native_little) bits = __builtin_bswap32(bits);
        image.at(y, x, c) = static_cast<double>(std::bit_cast<float>(bits));
      }
    }
  }
  return image;
}

void save_pfm(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3)
    throw Error(ErrorCode::kUnsupportedFormat, fmt::format("pfm with {} channels", image.channels));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  out << (image.channels == 3 ? "PF" : "Pf") << "\n" << image.width << " " << image.height << "\n-1.0\n";
  std::vector<std::uint32_t> raw(image.data.size());
  for (int row = 0; row < image.height; ++row) {
    const int y = image.height - 1 - row;
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(image.at(y, x, c)));
        if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
        raw[(static_cast<std::size_t>(row) * image.width + x) * image.channels + c] = bits;
      }
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  if (!out) throw Error(ErrorCode::kIo, fmt::format("write failed on {}", path.string()));
}

Image load_image(const std::filesystem::path& path) {
  const auto ext = lower_extension(path);
  if (ext == ".png") return load_png(path);
  if (ext == ".pfm") return load_pfm(path);
  throw Error(ErrorCode::kUnsupportedFormat, fmt::format("extension '{}'", ext));
}

void save_image(const Image& image, const std::filesystem::path& path) {
  const auto ext = lower_extension(path);
  if (ext == ".png") return save_png(image, path);
  if (ext == ".pfm") return save_pfm(image, path);
  throw Error(ErrorCode::kUnsupportedFormat, fmt::format("extension '{}'", ext));
}

void sample_bilinear(const Image& image, double px, double py, double* out) {
  const double fx = std::clamp(px - 0.5, 0.0, static_cast<double>(image.width - 1));
  const double fy = std::clamp(py - 0.5, 0.0, static_cast<double>(image.height - 1));
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const int x1 = std::min(x0 + 1, image.width - 1);
  const int y1 = std::min(y0 + 1, image.height - 1);
  const double ax = fx - x0, ay = fy - y0;
  for (int c = 0; c < image.channels; ++c) {
    const double top = (1.0 - ax) * image.at(y0, x0, c) + ax * image.at(y0, x1, c);
    const double bottom = (1.0 - ax) * image.at(y1, x0, c) + ax * image.at(y1, x1, c);
    out[c] = (1.0 - ay) * top + ay * bottom;
  }
}

}  // namespace avatarforge
