#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "forgeseg/errors.hpp"
#include "forgeseg/image.hpp"

namespace forgeseg {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

struct RawPng {
  int h = 0, w = 0, c = 0;
  std::vector<std::uint8_t> pixels;
};

RawPng read_raw(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  RawPng raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("'" + path.string() + "' is not a readable PNG");
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  raw.w = static_cast<int>(png_get_image_width(png, info));
  raw.h = static_cast<int>(png_get_image_height(png, info));
  raw.c = static_cast<int>(png_get_channels(png, info));
  raw.pixels.resize(static_cast<std::size_t>(raw.h) * raw.w * raw.c);
  rows.resize(raw.h);
  for (int i = 0; i < raw.h; ++i) rows[i] = raw.pixels.data() + static_cast<std::size_t>(i) * raw.w * raw.c;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

}  // namespace

ManipulationMask::ManipulationMask(int h, int w, std::vector<std::uint8_t> values)
    : h_(h), w_(w), data_(std::move(values)) {
  if (data_.size() != static_cast<std::size_t>(h) * w)
    throw DimensionError("mask data size does not match " + std::to_string(h) + "x" +
                         std::to_string(w));
  for (auto v : data_)
    if (v > 1) throw ValidationError("mask value " + std::to_string(v) + " is not 0 or 1");
}

std::size_t ManipulationMask::popcount() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

void ManipulationMask::merge(const ManipulationMask& other) {
  if (other.h_ != h_ || other.w_ != w_) throw DimensionError("mask merge: shape mismatch");
  for (std::size_t k = 0; k < data_.size(); ++k) data_[k] |= other.data_[k];
}

std::uint8_t quantize_u8(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

void write_png_u8(const std::filesystem::path& path, int h, int w, int c,
                  std::span<const std::uint8_t> pixels) {
  if (c != 1 && c != 3) throw ValidationError("write_png: only 1 or 3 channels are supported");
  if (pixels.size() != static_cast<std::size_t>(h) * w * c)
    throw DimensionError("write_png: pixel buffer size mismatch");
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, w, h, 8, c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int i = 0; i < h; ++i)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(i) * w * c));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const Shape s = image.shape();
  if (s.n != 1) throw DimensionError("write_png: expected a single image, got " + s.str());
  std::vector<std::uint8_t> px(static_cast<std::size_t>(s.h) * s.w * s.c);
  for (int c = 0; c < s.c; ++c)
    for (int i = 0; i < s.h; ++i)
      for (int j = 0; j < s.w; ++j)
        px[(static_cast<std::size_t>(i) * s.w + j) * s.c + c] = quantize_u8(image.at(0, c, i, j));
  write_png_u8(path, s.h, s.w, s.c, px);
}

Image read_png(const std::filesystem::path& path) {
  RawPng raw = read_raw(path);
  Image img = make_image(raw.h, raw.w, raw.c);
  for (int c = 0; c < raw.c; ++c)
    for (int i = 0; i < raw.h; ++i)
      for (int j = 0; j < raw.w; ++j)
        img.at(0, c, i, j) =
            raw.pixels[(static_cast<std::size_t>(i) * raw.w + j) * raw.c + c] / 255.0f;
  return img;
}

void write_mask_png(const std::filesystem::path& path, const ManipulationMask& mask) {
  std::vector<std::uint8_t> px(mask.size());
  for (std::size_t k = 0; k < px.size(); ++k) px[k] = mask[k] ? 255 : 0;
  write_png_u8(path, mask.height(), mask.width(), 1, px);
}

ManipulationMask read_mask_png(const std::filesystem::path& path) {
  RawPng raw = read_raw(path);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(raw.h) * raw.w);
  for (std::size_t k = 0; k < bits.size(); ++k) bits[k] = raw.pixels[k * raw.c] >= 128 ? 1 : 0;
  return ManipulationMask(raw.h, raw.w, std::move(bits));
}

}  // namespace forgeseg
