#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "forgeseg/tensor.hpp"

namespace forgeseg {

// Planar image, shape 1 x C x H x W, intensities in [0, 1].
using Image = Tensor<float>;

inline Image make_image(int h, int w, int c, float fill = 0.0f) { return Image({1, c, h, w}, fill); }

// Binary map marking manipulated pixels. Row-major, one byte per pixel,
// every element 0 or 1.
class ManipulationMask {
 public:
  ManipulationMask() = default;
  ManipulationMask(int h, int w) : h_(h), w_(w), data_(static_cast<std::size_t>(h) * w, 0) {}
  // Throws ValidationError if any value is not 0 or 1.
  ManipulationMask(int h, int w, std::vector<std::uint8_t> values);

  int height() const { return h_; }
  int width() const { return w_; }
  std::size_t size() const { return data_.size(); }

  std::uint8_t operator()(int i, int j) const { return data_[static_cast<std::size_t>(i) * w_ + j]; }
  void set(int i, int j, bool v) { data_[static_cast<std::size_t>(i) * w_ + j] = v ? 1 : 0; }
  std::uint8_t operator[](std::size_t k) const { return data_[k]; }

  std::span<const std::uint8_t> values() const { return data_; }
  std::size_t popcount() const;
  bool any() const { return popcount() > 0; }

  // Element-wise union with a same-shaped mask.
  void merge(const ManipulationMask& other);

  template <typename T>
  Tensor<T> to_tensor() const {
    Tensor<T> t({1, 1, h_, w_});
    for (std::size_t k = 0; k < data_.size(); ++k) t[k] = static_cast<T>(data_[k]);
    return t;
  }

  bool operator==(const ManipulationMask&) const = default;

 private:
  int h_ = 0;
  int w_ = 0;
  std::vector<std::uint8_t> data_;
};

// 8-bit PNG. Grayscale images load as 1 channel, RGB as 3; alpha is dropped.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

// Raw interleaved 8-bit pixels (H x W x C).
void write_png_u8(const std::filesystem::path& path, int h, int w, int c,
                  std::span<const std::uint8_t> pixels);

// Masks are stored as single-channel 8-bit: 0 pristine, 255 manipulated.
// Loading thresholds at 128.
void write_mask_png(const std::filesystem::path& path, const ManipulationMask& mask);
ManipulationMask read_mask_png(const std::filesystem::path& path);

std::uint8_t quantize_u8(float v);

}  // namespace forgeseg
