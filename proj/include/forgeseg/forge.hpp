#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "forgeseg/image.hpp"

namespace forgeseg {

// Blends generated content into a target: M * generated + (1 - M) * target,
// per channel. Exact: output pixels are copies of one input or the other.
Image composite(const Image& generated, const Image& target, const ManipulationMask& mask);

struct BoundingBox {
  int x = 0;  // top-left column
  int y = 0;  // top-left row
  int w = 0;
  int h = 0;
  bool operator==(const BoundingBox&) const = default;
};

// Scales both side lengths by `factor` about the box centre. No clipping.
BoundingBox scale_box(const BoundingBox& box, double factor);

// scale_box followed by intersection with [0, bounds_w) x [0, bounds_h).
// Throws ValidationError for factor < 1 or an empty result.
BoundingBox enlarge_box(const BoundingBox& box, double factor, int bounds_h, int bounds_w);

// Copies the pixels under `box`; the box must lie inside the image.
Image crop(const Image& image, const BoundingBox& box);
ManipulationMask crop(const ManipulationMask& mask, const BoundingBox& box);

// Bilinear resampling with half-pixel centres.
Image resize_bilinear(const Image& image, int h, int w);

// ---------------------------------------------------------------- regions

// Coordinates are in pixels; pixel (i, j) has its centre at (j + 0.5, i + 0.5).
struct Ellipse {
  double cx, cy, rx, ry;
};
struct Rect {
  double x, y, w, h;
};
struct Polygon {
  std::vector<std::pair<double, double>> points;  // (x, y) vertices
};

struct RegionDescriptor {
  std::variant<Ellipse, Rect, Polygon> shape;
  // Maximum seeded displacement (pixels) applied to the region's position.
  double jitter = 0.0;
};

// Rasterizes the union of `components` into an h x w mask. Regions are
// displaced by seeded jitter (if any) and must lie inside the image.
ManipulationMask synth_component_mask(int h, int w, std::span<const RegionDescriptor> components,
                                      std::uint64_t seed);

// --------------------------------------------------------------- sampling

struct FrameGroup {
  std::string group_id;
  bool fake = false;
  std::vector<std::size_t> frames;
};

struct SelectedFrame {
  std::string group_id;
  bool fake = false;
  std::size_t frame = 0;
};

// Draws min(quota, |group|) frames from each group without replacement,
// real_quota for genuine groups and fake_quota for manipulated ones. Each
// group's draw depends only on (seed, group_id). Output keeps group order,
// and frames within a group keep their original order.
std::vector<SelectedFrame> quota_sample(std::span<const FrameGroup> groups, int real_quota,
                                        int fake_quota, std::uint64_t seed);

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split split);
Split split_from_string(const std::string& s);

// First n_train ranks -> train, last n_test -> test, the rest -> val.
std::vector<Split> split_by_rank(std::size_t n_samples, std::size_t n_train, std::size_t n_test);

}  // namespace forgeseg
