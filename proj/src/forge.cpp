#include "forgeseg/forge.hpp"

#include <algorithm>
#include <cmath>

#include "forgeseg/errors.hpp"
#include "forgeseg/rng.hpp"

namespace forgeseg {

Image composite(const Image& generated, const Image& target, const ManipulationMask& mask) {
  const Shape gs = generated.shape();
  const Shape ts = target.shape();
  if (!(gs == ts))
    throw DimensionError("composite: generated " + gs.str() + " vs target " + ts.str());
  if (gs.n != 1) throw DimensionError("composite: expected single images, got " + gs.str());
  if (mask.height() != gs.h || mask.width() != gs.w)
    throw DimensionError("composite: mask " + std::to_string(mask.height()) + "x" +
                         std::to_string(mask.width()) + " vs image " + std::to_string(gs.h) +
                         "x" + std::to_string(gs.w));
  for (auto m : mask.values())
    if (m > 1) throw ValidationError("composite: mask is not binary");

  Image out(gs);
  const std::size_t plane = gs.plane_size();
  for (int c = 0; c < gs.c; ++c) {
    auto g = generated.plane(0, c);
    auto t = target.plane(0, c);
    auto o = out.plane(0, c);
    // With M in {0,1} the blend reduces to a selection, which is also what
    // keeps it bit-exact (no 0 * x or 1 * x rounding, signed zeros intact).
    for (std::size_t k = 0; k < plane; ++k) o[k] = mask[k] ? g[k] : t[k];
  }
  return out;
}

BoundingBox scale_box(const BoundingBox& box, double factor) {
  const int w = static_cast<int>(std::lround(box.w * factor));
  const int h = static_cast<int>(std::lround(box.h * factor));
  // Centre preserved up to half a pixel when the growth is odd.
  const int dx = static_cast<int>(std::floor((w - box.w) / 2.0));
  const int dy = static_cast<int>(std::floor((h - box.h) / 2.0));
  return {box.x - dx, box.y - dy, w, h};
}

BoundingBox enlarge_box(const BoundingBox& box, double factor, int bounds_h, int bounds_w) {
  if (!(factor >= 1.0)) throw ValidationError("enlarge_box: factor must be >= 1");
  if (box.w <= 0 || box.h <= 0) throw ValidationError("enlarge_box: box sides must be positive");
  const BoundingBox s = scale_box(box, factor);
  const int x0 = std::max(0, s.x);
  const int y0 = std::max(0, s.y);
  const int x1 = std::min(bounds_w, s.x + s.w);
  const int y1 = std::min(bounds_h, s.y + s.h);
  if (x1 <= x0 || y1 <= y0)
    throw ValidationError("enlarge_box: box is empty after clipping to image bounds");
  return {x0, y0, x1 - x0, y1 - y0};
}

namespace {
void check_crop(int h, int w, const BoundingBox& b) {
  if (b.w <= 0 || b.h <= 0 || b.x < 0 || b.y < 0 || b.x + b.w > w || b.y + b.h > h)
    throw DimensionError("crop: box (" + std::to_string(b.x) + "," + std::to_string(b.y) + "," +
                         std::to_string(b.w) + "," + std::to_string(b.h) + ") exceeds " +
                         std::to_string(h) + "x" + std::to_string(w));
}
}  // namespace

Image crop(const Image& image, const BoundingBox& box) {
  const Shape s = image.shape();
  check_crop(s.h, s.w, box);
  Image out = make_image(box.h, box.w, s.c);
  for (int c = 0; c < s.c; ++c)
    for (int i = 0; i < box.h; ++i)
      for (int j = 0; j < box.w; ++j) out.at(0, c, i, j) = image.at(0, c, box.y + i, box.x + j);
  return out;
}

ManipulationMask crop(const ManipulationMask& mask, const BoundingBox& box) {
  check_crop(mask.height(), mask.width(), box);
  ManipulationMask out(box.h, box.w);
  for (int i = 0; i < box.h; ++i)
    for (int j = 0; j < box.w; ++j) out.set(i, j, mask(box.y + i, box.x + j));
  return out;
}

Image resize_bilinear(const Image& image, int h, int w) {
  const Shape s = image.shape();
  if (h <= 0 || w <= 0) throw ValidationError("resize_bilinear: target size must be positive");
  if (s.h == h && s.w == w) return image;
  Image out = make_image(h, w, s.c);
  const double sy = static_cast<double>(s.h) / h;
  const double sx = static_cast<double>(s.w) / w;
  for (int i = 0; i < h; ++i) {
    const double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, s.h - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, s.h - 1);
    const double wy = fy - y0;
    for (int j = 0; j < w; ++j) {
      const double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, s.w - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, s.w - 1);
      const double wx = fx - x0;
      for (int c = 0; c < s.c; ++c) {
        const double top = (1 - wx) * image.at(0, c, y0, x0) + wx * image.at(0, c, y0, x1);
        const double bot = (1 - wx) * image.at(0, c, y1, x0) + wx * image.at(0, c, y1, x1);
        out.at(0, c, i, j) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- regions

namespace {

struct Bounds {
  double x0, y0, x1, y1;
};

Bounds bounds_of(const Ellipse& e) { return {e.cx - e.rx, e.cy - e.ry, e.cx + e.rx, e.cy + e.ry}; }
Bounds bounds_of(const Rect& r) { return {r.x, r.y, r.x + r.w, r.y + r.h}; }
Bounds bounds_of(const Polygon& p) {
  Bounds b{1e300, 1e300, -1e300, -1e300};
  for (auto [x, y] : p.points) {
    b.x0 = std::min(b.x0, x);
    b.y0 = std::min(b.y0, y);
    b.x1 = std::max(b.x1, x);
    b.y1 = std::max(b.y1, y);
  }
  return b;
}

bool contains(const Ellipse& e, double x, double y) {
  const double dx = (x - e.cx) / e.rx;
  const double dy = (y - e.cy) / e.ry;
  return dx * dx + dy * dy <= 1.0;
}
bool contains(const Rect& r, double x, double y) {
  return x >= r.x && x < r.x + r.w && y >= r.y && y < r.y + r.h;
}
// Even-odd rule.
bool contains(const Polygon& p, double x, double y) {
  bool inside = false;
  const auto& pts = p.points;
  for (std::size_t i = 0, j = pts.size() - 1; i < pts.size(); j = i++) {
    const auto [xi, yi] = pts[i];
    const auto [xj, yj] = pts[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
  }
  return inside;
}

void translate(Ellipse& e, double dx, double dy) {
  e.cx += dx;
  e.cy += dy;
}
void translate(Rect& r, double dx, double dy) {
  r.x += dx;
  r.y += dy;
}
void translate(Polygon& p, double dx, double dy) {
  for (auto& [x, y] : p.points) {
    x += dx;
    y += dy;
  }
}

void validate_shape(const Ellipse& e) {
  if (!(e.rx > 0 && e.ry > 0)) throw ValidationError("ellipse radii must be positive");
}
void validate_shape(const Rect& r) {
  if (!(r.w > 0 && r.h > 0)) throw ValidationError("rectangle sides must be positive");
}
void validate_shape(const Polygon& p) {
  if (p.points.size() < 3) throw ValidationError("polygon needs at least 3 vertices");
}

}  // namespace

ManipulationMask synth_component_mask(int h, int w, std::span<const RegionDescriptor> components,
                                      std::uint64_t seed) {
  if (components.empty()) throw ValidationError("synth_component_mask: empty component list");
  if (h <= 0 || w <= 0) throw ValidationError("synth_component_mask: shape must be positive");
  ManipulationMask mask(h, w);
  for (std::size_t idx = 0; idx < components.size(); ++idx) {
    const RegionDescriptor& desc = components[idx];
    Rng rng(derive_seed(seed, idx));
    const double dx = desc.jitter > 0 ? rng.uniform(-desc.jitter, desc.jitter) : 0.0;
    const double dy = desc.jitter > 0 ? rng.uniform(-desc.jitter, desc.jitter) : 0.0;
    std::visit(
        [&](auto shape) {
          validate_shape(shape);
          translate(shape, dx, dy);
          const Bounds b = bounds_of(shape);
          if (b.x0 < 0 || b.y0 < 0 || b.x1 > w || b.y1 > h)
            throw ValidationError("synth_component_mask: region " + std::to_string(idx) +
                                  " extends outside the " + std::to_string(h) + "x" +
                                  std::to_string(w) + " image");
          const int i0 = std::max(0, static_cast<int>(std::floor(b.y0)));
          const int i1 = std::min(h - 1, static_cast<int>(std::ceil(b.y1)));
          const int j0 = std::max(0, static_cast<int>(std::floor(b.x0)));
          const int j1 = std::min(w - 1, static_cast<int>(std::ceil(b.x1)));
          for (int i = i0; i <= i1; ++i)
            for (int j = j0; j <= j1; ++j)
              if (contains(shape, j + 0.5, i + 0.5)) mask.set(i, j, true);
        },
        desc.shape);
  }
  return mask;
}

// --------------------------------------------------------------- sampling

std::vector<SelectedFrame> quota_sample(std::span<const FrameGroup> groups, int real_quota,
                                        int fake_quota, std::uint64_t seed) {
  if (real_quota < 0 || fake_quota < 0) throw ValidationError("quota_sample: negative quota");
  std::vector<SelectedFrame> out;
  for (const FrameGroup& g : groups) {
    const std::size_t quota = static_cast<std::size_t>(g.fake ? fake_quota : real_quota);
    const std::size_t take = std::min(quota, g.frames.size());
    if (take == 0) continue;
    std::vector<std::size_t> order(g.frames.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, g.group_id));
    // Partial Fisher-Yates: the first `take` slots are a uniform draw.
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + rng.index(order.size() - i);
      std::swap(order[i], order[j]);
    }
    order.resize(take);
    std::sort(order.begin(), order.end());
    for (std::size_t i : order) out.push_back({g.group_id, g.fake, g.frames[i]});
  }
  return out;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ValidationError("unknown split '" + s + "' (expected train, val or test)");
}

std::vector<Split> split_by_rank(std::size_t n_samples, std::size_t n_train, std::size_t n_test) {
  if (n_train + n_test > n_samples)
    throw ValidationError("split_by_rank: train " + std::to_string(n_train) + " + test " +
                          std::to_string(n_test) + " exceeds " + std::to_string(n_samples) +
                          " samples");
  std::vector<Split> out(n_samples, Split::kVal);
  std::fill_n(out.begin(), n_train, Split::kTrain);
  std::fill(out.end() - static_cast<std::ptrdiff_t>(n_test), out.end(), Split::kTest);
  return out;
}

}  // namespace forgeseg
