#include "forgeseg/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>

#include "forgeseg/errors.hpp"
#include "forgeseg/rng.hpp"

namespace forgeseg {

void CorpusConfig::validate() const {
  if (num_samples < 1) throw ValidationError("data.num_samples: must be positive");
  if (image_size < 8) throw ValidationError("data.image_size: must be at least 8");
  if (channels != 1 && channels != 3) throw ValidationError("data.channels: must be 1 or 3");
  if (!(fake_ratio >= 0.0 && fake_ratio <= 1.0))
    throw ValidationError("data.fake_ratio: must lie in [0, 1]");
  if (!(partial_ratio >= 0.0 && partial_ratio <= 1.0))
    throw ValidationError("data.partial_ratio: must lie in [0, 1]");
  if (val < 0 || test < 0 || val + test > num_samples)
    throw ValidationError("data.val/data.test: split sizes exceed data.num_samples");
  if (frames_per_group < 1) throw ValidationError("data.frames_per_group: must be positive");
  if (real_quota < 1 || fake_quota < 1)
    throw ValidationError("data.real_quota/data.fake_quota: must be positive");
  if (max_components < 1 || max_components > 4)
    throw ValidationError("data.max_components: must lie in [1, 4]");
  if (region_shapes.empty()) throw ValidationError("data.region_shapes: must not be empty");
  for (const auto& s : region_shapes)
    if (s != "ellipse" && s != "rectangle" && s != "polygon")
      throw ValidationError("data.region_shapes: unknown shape '" + s + "'");
  if (!(crop_factor >= 1.0)) throw ValidationError("data.crop_factor: must be >= 1");
  if (!(sensor_noise >= 0.0) || !(fingerprint >= 0.0))
    throw ValidationError("data.sensor_noise/data.fingerprint: must be non-negative");
}

std::string CorpusConfig::canonical() const {
  nlohmann::json j;  // keys sorted, so the dump is canonical
  j["num_samples"] = num_samples;
  j["image_size"] = image_size;
  j["channels"] = channels;
  j["fake_ratio"] = fake_ratio;
  j["partial_ratio"] = partial_ratio;
  j["val"] = val;
  j["test"] = test;
  j["frames_per_group"] = frames_per_group;
  j["real_quota"] = real_quota;
  j["fake_quota"] = fake_quota;
  j["max_components"] = max_components;
  j["region_shapes"] = region_shapes;
  j["crop_factor"] = crop_factor;
  j["sensor_noise"] = sensor_noise;
  j["fingerprint"] = fingerprint;
  return j.dump();
}

std::string CorpusConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(stable_hash(canonical())));
  return buf;
}

namespace {

using Rgb = std::array<float, 3>;

struct Identity {
  Rgb skin, eye, lip, hair, brow;
  double face_rx, face_ry;  // fractions of the face box side
  double eye_rx, eye_ry;
  double nose_w, nose_h;
  double mouth_rx, mouth_ry;
};

struct Palette {
  Rgb bg_top, bg_bottom;
  double noise_scale;
};

// Face box on the canvas plus per-frame photometric variation.
struct FrameGeometry {
  double cx, cy, side;
  double shade;  // horizontal illumination gradient
  double gain;
  int detect_dx, detect_dy;  // face-detector localisation error
};

enum class Zone { kLeftEye, kRightEye, kNose, kMouth };
constexpr std::array<Zone, 4> kZones = {Zone::kLeftEye, Zone::kRightEye, Zone::kNose,
                                        Zone::kMouth};

Rgb jitter_rgb(Rng& rng, Rgb base, double amount) {
  for (auto& v : base) v = static_cast<float>(std::clamp(v + rng.uniform(-amount, amount), 0.0, 1.0));
  return base;
}

Identity make_identity(Rng& rng) {
  Identity id;
  id.skin = jitter_rgb(rng, {0.78f, 0.60f, 0.48f}, 0.15);
  id.eye = jitter_rgb(rng, {0.25f, 0.30f, 0.35f}, 0.2);
  id.lip = jitter_rgb(rng, {0.70f, 0.32f, 0.35f}, 0.15);
  id.hair = jitter_rgb(rng, {0.25f, 0.18f, 0.12f}, 0.2);
  id.brow = jitter_rgb(rng, {0.22f, 0.16f, 0.12f}, 0.1);
  id.face_rx = rng.uniform(0.37, 0.42);
  id.face_ry = rng.uniform(0.47, 0.51);
  id.eye_rx = rng.uniform(0.08, 0.11);
  id.eye_ry = rng.uniform(0.04, 0.06);
  id.nose_w = rng.uniform(0.05, 0.08);
  id.nose_h = rng.uniform(0.10, 0.14);
  id.mouth_rx = rng.uniform(0.12, 0.17);
  id.mouth_ry = rng.uniform(0.04, 0.06);
  return id;
}

Palette palette_for(const std::string& family, Rng& rng) {
  if (family == tags::kRealA)
    return {jitter_rgb(rng, {0.75f, 0.65f, 0.50f}, 0.1), jitter_rgb(rng, {0.55f, 0.45f, 0.35f}, 0.1),
            1.0};
  return {jitter_rgb(rng, {0.45f, 0.55f, 0.70f}, 0.1), jitter_rgb(rng, {0.30f, 0.35f, 0.50f}, 0.1),
          1.4};
}

// Zone centre offsets from the face centre, in face-box sides.
std::pair<double, double> zone_offset(Zone z) {
  switch (z) {
    case Zone::kLeftEye:
      return {-0.19, -0.08};
    case Zone::kRightEye:
      return {0.19, -0.08};
    case Zone::kNose:
      return {0.0, 0.08};
    case Zone::kMouth:
      return {0.0, 0.27};
  }
  return {0.0, 0.0};
}

// Region that an edit of zone `z` replaces, in face-box sides.
std::pair<double, double> zone_radii(Zone z) {
  switch (z) {
    case Zone::kLeftEye:
    case Zone::kRightEye:
      return {0.15, 0.11};
    case Zone::kNose:
      return {0.10, 0.17};
    case Zone::kMouth:
      return {0.21, 0.10};
  }
  return {0.1, 0.1};
}

class Canvas {
 public:
  Canvas(int size, int channels) : img_(make_image(size, size, channels)) {}

  int size() const { return img_.shape().h; }
  Image& image() { return img_; }

  void set(int i, int j, const Rgb& c) {
    const int ch = img_.shape().c;
    if (ch == 1) {
      img_.at(0, 0, i, j) = 0.299f * c[0] + 0.587f * c[1] + 0.114f * c[2];
    } else {
      for (int k = 0; k < 3; ++k) img_.at(0, k, i, j) = c[k];
    }
  }

  template <typename ColorFn>
  void fill_ellipse(double cx, double cy, double rx, double ry, ColorFn color) {
    const int n = size();
    const int i0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
    const int i1 = std::min(n - 1, static_cast<int>(std::ceil(cy + ry)));
    const int j0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
    const int j1 = std::min(n - 1, static_cast<int>(std::ceil(cx + rx)));
    for (int i = i0; i <= i1; ++i)
      for (int j = j0; j <= j1; ++j) {
        const double dx = (j + 0.5 - cx) / rx;
        const double dy = (i + 0.5 - cy) / ry;
        if (dx * dx + dy * dy <= 1.0) set(i, j, color(i, j));
      }
  }

 private:
  Image img_;
};

Rgb scaled(const Rgb& c, double f) {
  return {static_cast<float>(c[0] * f), static_cast<float>(c[1] * f), static_cast<float>(c[2] * f)};
}

Image render_face(int canvas_size, int channels, const Identity& id, const Palette& pal,
                  const FrameGeometry& g) {
  Canvas cv(canvas_size, channels);
  const int n = canvas_size;
  for (int i = 0; i < n; ++i) {
    const double t = (i + 0.5) / n;
    Rgb row;
    for (int k = 0; k < 3; ++k)
      row[k] = static_cast<float>(g.gain * ((1 - t) * pal.bg_top[k] + t * pal.bg_bottom[k]));
    for (int j = 0; j < n; ++j) cv.set(i, j, row);
  }
  const double s = g.side;
  auto flat = [](const Rgb& c) { return [c](int, int) { return c; }; };
  cv.fill_ellipse(g.cx, g.cy - 0.22 * s, 0.50 * s, 0.40 * s, flat(scaled(id.hair, g.gain)));
  auto skin = [&](int, int j) {
    const double x = (j + 0.5 - g.cx) / s;
    return scaled(id.skin, g.gain * (1.0 + g.shade * x));
  };
  cv.fill_ellipse(g.cx, g.cy, id.face_rx * s, id.face_ry * s, skin);
  for (Zone z : {Zone::kLeftEye, Zone::kRightEye}) {
    const auto [ox, oy] = zone_offset(z);
    const double ex = g.cx + ox * s, ey = g.cy + oy * s;
    cv.fill_ellipse(ex, ey - 0.08 * s, id.eye_rx * s * 1.1, 0.018 * s + 0.6,
                    flat(scaled(id.brow, g.gain)));
    cv.fill_ellipse(ex, ey, id.eye_rx * s, id.eye_ry * s, flat(scaled({0.93f, 0.93f, 0.90f}, g.gain)));
    cv.fill_ellipse(ex, ey, id.eye_ry * s * 0.9, id.eye_ry * s * 0.9, flat(scaled(id.eye, g.gain)));
  }
  {
    const auto [ox, oy] = zone_offset(Zone::kNose);
    cv.fill_ellipse(g.cx + ox * s, g.cy + oy * s, id.nose_w * s, id.nose_h * s,
                    [&](int i, int j) { return scaled(skin(i, j), 0.85); });
  }
  {
    const auto [ox, oy] = zone_offset(Zone::kMouth);
    cv.fill_ellipse(g.cx + ox * s, g.cy + oy * s, id.mouth_rx * s, id.mouth_ry * s,
                    flat(scaled(id.lip, g.gain)));
  }
  return std::move(cv.image());
}

void add_sensor_noise(Image& img, double sigma, Rng& rng) {
  if (sigma <= 0) return;
  for (auto& v : img.values()) v = static_cast<float>(v + rng.normal(0.0, sigma));
}

// Generated content: smooth (3x3 box blur, no sensor noise) with a
// period-2 checkerboard trace, as left by stride-2 upsampling layers.
Image generator_output(const Image& clean, double amplitude) {
  const Shape s = clean.shape();
  Image out(s);
  for (int c = 0; c < s.c; ++c)
    for (int i = 0; i < s.h; ++i)
      for (int j = 0; j < s.w; ++j) {
        double acc = 0;
        int cnt = 0;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            const int y = i + di, x = j + dj;
            if (y < 0 || y >= s.h || x < 0 || x >= s.w) continue;
            acc += clean.at(0, c, y, x);
            ++cnt;
          }
        const double sign = ((i + j) % 2 == 0) ? 1.0 : -1.0;
        out.at(0, c, i, j) = static_cast<float>(acc / cnt + sign * amplitude);
      }
  return out;
}

void clamp_and_quantize(Image& img) {
  for (auto& v : img.values()) v = quantize_u8(v) / 255.0f;
}

ManipulationMask resize_nearest(const ManipulationMask& m, int h, int w) {
  if (m.height() == h && m.width() == w) return m;
  ManipulationMask out(h, w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      out.set(i, j, m(std::min(m.height() - 1, i * m.height() / h), std::min(m.width() - 1, j * m.width() / w)));
  return out;
}

RegionDescriptor zone_region(Zone z, const FrameGeometry& g, const std::string& shape) {
  const auto [ox, oy] = zone_offset(z);
  const auto [rx, ry] = zone_radii(z);
  const double cx = g.cx + ox * g.side, cy = g.cy + oy * g.side;
  const double ax = rx * g.side, ay = ry * g.side;
  RegionDescriptor d;
  d.jitter = 1.0;
  if (shape == "rectangle") {
    d.shape = Rect{cx - ax, cy - ay, 2 * ax, 2 * ay};
  } else if (shape == "polygon") {
    Polygon p;
    for (int k = 0; k < 6; ++k) {
      const double a = k * 3.14159265358979323846 / 3.0;
      p.points.emplace_back(cx + ax * std::cos(a), cy + ay * std::sin(a));
    }
    d.shape = std::move(p);
  } else {
    d.shape = Ellipse{cx, cy, ax, ay};
  }
  return d;
}

// Everything needed to render one group's frames.
struct GroupSpec {
  std::string group_id;
  bool fake = false;
  bool partial = false;
  std::string family;  // palette of the (target) footage
  std::uint64_t seed = 0;
};

FrameGeometry frame_geometry(const CorpusConfig& cfg, int canvas, std::uint64_t frame_seed) {
  Rng rng(frame_seed);
  FrameGeometry g;
  g.side = std::round(cfg.image_size / cfg.crop_factor);
  const double slack = std::max(0.0, (canvas - cfg.image_size) / 2.0 - 4.0);
  g.cx = canvas / 2.0 + rng.uniform(-slack, slack);
  g.cy = canvas / 2.0 + rng.uniform(-slack, slack);
  g.shade = rng.uniform(-0.25, 0.25);
  g.gain = rng.uniform(0.9, 1.08);
  g.detect_dx = rng.uniform_int(-2, 2);
  g.detect_dy = rng.uniform_int(-2, 2);
  return g;
}

ImageSample render_sample(const CorpusConfig& cfg, const GroupSpec& grp, std::size_t frame) {
  const int canvas = static_cast<int>(std::ceil(cfg.image_size * 1.5));
  Rng id_rng(derive_seed(grp.seed, "identity"));
  const Identity target = make_identity(id_rng);
  Rng pal_rng(derive_seed(grp.seed, "palette"));
  const Palette pal = palette_for(grp.family, pal_rng);
  const std::uint64_t frame_seed = derive_seed(grp.seed, frame);
  const FrameGeometry g = frame_geometry(cfg, canvas, frame_seed);

  Image pristine = render_face(canvas, cfg.channels, target, pal, g);
  Rng noise_rng(derive_seed(frame_seed, "noise"));
  add_sensor_noise(pristine, cfg.sensor_noise * pal.noise_scale, noise_rng);

  ImageSample sample;
  sample.group_id = grp.group_id;
  sample.label = grp.fake ? 1 : 0;
  ManipulationMask mask(canvas, canvas);
  Image frame_img;
  if (!grp.fake) {
    sample.source_tag = grp.family;
    frame_img = std::move(pristine);
  } else {
    sample.source_tag = grp.partial ? tags::kSplicedPartial : tags::kSplicedEntire;
    Rng donor_rng(derive_seed(grp.seed, "donor"));
    const Identity donor = make_identity(donor_rng);
    const Image generated = generator_output(render_face(canvas, cfg.channels, donor, pal, g),
                                             cfg.fingerprint);
    std::vector<RegionDescriptor> regions;
    Rng pick(derive_seed(frame_seed, "components"));
    if (grp.partial) {
      std::vector<Zone> zones(kZones.begin(), kZones.end());
      pick.shuffle(zones.begin(), zones.end());
      const int k = pick.uniform_int(1, cfg.max_components);
      for (int z = 0; z < k; ++z) {
        const auto& shape = cfg.region_shapes[pick.index(cfg.region_shapes.size())];
        regions.push_back(zone_region(zones[z], g, shape));
      }
    } else {
      regions.push_back({Ellipse{g.cx, g.cy, target.face_rx * g.side * 0.95,
                                 target.face_ry * g.side * 0.95},
                         0.0});
    }
    mask = synth_component_mask(canvas, canvas, regions, derive_seed(frame_seed, "mask"));
    frame_img = composite(generated, pristine, mask);
  }

  // Detector box around the face, then the usual enlarged crop.
  const int side = static_cast<int>(g.side);
  const BoundingBox detected{static_cast<int>(std::lround(g.cx - side / 2.0)) + g.detect_dx,
                             static_cast<int>(std::lround(g.cy - side / 2.0)) + g.detect_dy, side,
                             side};
  const BoundingBox box = enlarge_box(detected, cfg.crop_factor, canvas, canvas);
  sample.image = resize_bilinear(crop(frame_img, box), cfg.image_size, cfg.image_size);
  sample.mask = resize_nearest(crop(mask, box), cfg.image_size, cfg.image_size);
  clamp_and_quantize(sample.image);
  // Cropping can in principle cut away a small edit entirely.
  if (sample.label == 1 && !sample.mask.any())
    throw ValidationError("corpus: manipulated region fell outside the crop of " + grp.group_id);
  return sample;
}

std::vector<GroupSpec> make_groups(const CorpusConfig& cfg, std::uint64_t seed, bool fake,
                                   int count) {
  std::vector<GroupSpec> groups;
  Rng kind_rng(derive_seed(seed, fake ? "fake-kinds" : "real-kinds"));
  for (int g = 0; g < count; ++g) {
    GroupSpec spec;
    char id[32];
    std::snprintf(id, sizeof id, "%s-%04d", fake ? "fake" : "real", g);
    spec.group_id = id;
    spec.fake = fake;
    spec.family = (g % 2 == 0) ? tags::kRealA : tags::kRealB;
    spec.partial = fake && kind_rng.bernoulli(cfg.partial_ratio);
    spec.seed = derive_seed(seed, spec.group_id);
    groups.push_back(std::move(spec));
  }
  return groups;
}

}  // namespace

std::vector<ImageSample> synthesize_corpus(const CorpusConfig& config, std::uint64_t seed) {
  config.validate();
  const int n_fake = static_cast<int>(std::lround(config.num_samples * config.fake_ratio));
  const int n_real = config.num_samples - n_fake;

  struct Pick {
    const GroupSpec* group;
    std::size_t frame;
  };
  std::vector<GroupSpec> real_groups =
      make_groups(config, seed, false, (n_real + config.real_quota - 1) / config.real_quota);
  std::vector<GroupSpec> fake_groups =
      make_groups(config, seed, true, (n_fake + config.fake_quota - 1) / config.fake_quota);

  std::vector<Pick> picks;
  auto select = [&](const std::vector<GroupSpec>& specs, int wanted) {
    std::vector<FrameGroup> groups;
    for (const auto& s : specs) {
      FrameGroup fg{s.group_id, s.fake, {}};
      for (int f = 0; f < config.frames_per_group; ++f) fg.frames.push_back(f);
      groups.push_back(std::move(fg));
    }
    const auto chosen =
        quota_sample(groups, config.real_quota, config.fake_quota, derive_seed(seed, "quota"));
    std::size_t gi = 0;
    for (const auto& c : chosen) {
      if (static_cast<int>(picks.size()) >= wanted) break;
      while (specs[gi].group_id != c.group_id) ++gi;
      picks.push_back({&specs[gi], c.frame});
    }
  };
  select(real_groups, n_real);
  const std::size_t real_count = picks.size();
  select(fake_groups, static_cast<int>(real_count) + n_fake);
  if (static_cast<int>(picks.size()) != config.num_samples)
    throw ValidationError("corpus: frames_per_group too small for the requested quotas");

  Rng order_rng(derive_seed(seed, "order"));
  order_rng.shuffle(picks.begin(), picks.end());
  const auto splits = split_by_rank(picks.size(), picks.size() - config.val - config.test,
                                    static_cast<std::size_t>(config.test));

  std::vector<ImageSample> samples;
  samples.reserve(picks.size());
  for (std::size_t i = 0; i < picks.size(); ++i) {
    ImageSample s = render_sample(config, *picks[i].group, picks[i].frame);
    s.split = splits[i];
    s.validate();
    samples.push_back(std::move(s));
  }
  return samples;
}

DatasetManifest write_corpus(const std::vector<ImageSample>& samples, const CorpusConfig& config,
                             std::uint64_t seed, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "masks", ec);
  if (ec || !fs::is_directory(out_dir / "images"))
    throw IoError("cannot create output directory '" + out_dir.string() + "'");
  DatasetManifest m;
  m.seed = seed;
  m.config_hash = config.hash();
  m.config_json = config.canonical();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ImageSample& s = samples[i];
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.png", i);
    ManifestRecord r;
    r.image_path = std::string("images/") + name;
    r.mask_path = std::string("masks/") + name;
    r.label = s.label;
    r.source_tag = s.source_tag;
    r.group_id = s.group_id;
    r.split = s.split;
    write_png(out_dir / r.image_path, s.image);
    write_mask_png(out_dir / r.mask_path, s.mask);
    m.records.push_back(std::move(r));
  }
  write_manifest(out_dir / kManifestName, m);
  return m;
}

DatasetManifest build_desk_corpus(const CorpusConfig& config, std::uint64_t seed,
                                  const std::filesystem::path& out_dir) {
  return write_corpus(synthesize_corpus(config, seed), config, seed, out_dir);
}

}  // namespace forgeseg
