#include "forgeseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "forgeseg/errors.hpp"

namespace forgeseg {

using ordered_json = nlohmann::ordered_json;

template <typename T>
ManipulationMask binarize(std::span<const T> S, int h, int w, double threshold) {
  if (S.size() != static_cast<std::size_t>(h) * w)
    throw DimensionError("binarize: " + std::to_string(S.size()) + " values for a " +
                         std::to_string(h) + "x" + std::to_string(w) + " mask");
  std::vector<std::uint8_t> out(S.size());
  for (std::size_t k = 0; k < S.size(); ++k) out[k] = static_cast<double>(S[k]) >= threshold;
  return ManipulationMask(h, w, std::move(out));
}

template ManipulationMask binarize<float>(std::span<const float>, int, int, double);
template ManipulationMask binarize<double>(std::span<const double>, int, int, double);

double iou(const ManipulationMask& pred, const ManipulationMask& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width())
    throw DimensionError("iou: mask shapes differ (" + std::to_string(pred.height()) + "x" +
                         std::to_string(pred.width()) + " vs " + std::to_string(gt.height()) +
                         "x" + std::to_string(gt.width()) + ")");
  std::size_t inter = 0, uni = 0;
  const auto a = pred.values();
  const auto b = gt.values();
  for (std::size_t k = 0; k < a.size(); ++k) {
    inter += a[k] & b[k];
    uni += a[k] | b[k];
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

template <typename T>
double accuracy(std::span<const T> p, std::span<const int> y, double threshold) {
  if (p.size() != y.size())
    throw DimensionError("accuracy: " + std::to_string(p.size()) + " probabilities vs " +
                         std::to_string(y.size()) + " labels");
  if (p.empty()) throw ValidationError("accuracy: empty batch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    hits += (static_cast<double>(p[i]) >= threshold ? 1 : 0) == y[i];
  return static_cast<double>(hits) / static_cast<double>(p.size());
}

template double accuracy<float>(std::span<const float>, std::span<const int>, double);
template double accuracy<double>(std::span<const double>, std::span<const int>, double);

void EvalOptions::validate() const {
  if (!(threshold_det > 0.0 && threshold_det < 1.0))
    throw ValidationError("eval.threshold_det: must lie in (0, 1)");
  if (!(threshold_seg > 0.0 && threshold_seg < 1.0))
    throw ValidationError("eval.threshold_seg: must lie in (0, 1)");
  if (batch_size < 1) throw ValidationError("eval.batch_size: must be positive");
}

// ------------------------------------------------------------------ report

void MetricsReport::add_sample(int label, const std::string& tag, const SamplePrediction& pred) {
  MetricCell c;
  c.count = 1;
  if (has_detection) c.correct = pred.predicted_label == label ? 1.0 : 0.0;
  if (has_segmentation) c.iou_sum = pred.iou;
  all.add(c);
  (label == 1 ? fake : real).add(c);
  per_tag[is_known_tag(tag) ? tag : tags::kOther].add(c);
}

std::vector<std::string> MetricsReport::columns() const {
  std::vector<std::string> cols;
  for (const char* metric : {"Acc", "IoU"}) {
    const std::string m = metric;
    cols.push_back(m + "-All");
    cols.push_back(m + "-Real");
    cols.push_back(m + "-Fake");
    for (const auto& [tag, cell] : per_tag) cols.push_back(m + "-" + tag);
  }
  return cols;
}

std::vector<std::optional<double>> MetricsReport::row() const {
  std::vector<std::optional<double>> out;
  auto push = [&](bool on, double v) { out.push_back(on ? std::optional<double>(v) : std::nullopt); };
  push(has_detection, all.acc());
  push(has_detection, real.acc());
  push(has_detection, fake.acc());
  for (const auto& [tag, cell] : per_tag) push(has_detection, cell.acc());
  push(has_segmentation, all.iou());
  push(has_segmentation, real.iou());
  push(has_segmentation, fake.iou());
  for (const auto& [tag, cell] : per_tag) push(has_segmentation, cell.iou());
  return out;
}

namespace {

ordered_json cell_json(const MetricCell& c) {
  return {{"count", c.count}, {"correct", c.correct}, {"iou_sum", c.iou_sum}};
}

MetricCell cell_from_json(const nlohmann::json& j) {
  MetricCell c;
  c.count = j.at("count").get<std::int64_t>();
  c.correct = j.at("correct").get<double>();
  c.iou_sum = j.at("iou_sum").get<double>();
  return c;
}

ordered_json opt_json(bool on, double v) { return on ? ordered_json(v) : ordered_json(nullptr); }

std::string fmt(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *v;
  return os.str();
}

std::string render_table(const std::vector<std::string>& cols,
                         const std::vector<std::string>& labels,
                         const std::vector<std::vector<std::optional<double>>>& rows) {
  std::size_t label_w = 5;
  for (const auto& l : labels) label_w = std::max(label_w, l.size());
  std::vector<std::size_t> widths;
  for (const auto& c : cols) widths.push_back(std::max<std::size_t>(c.size(), 6));
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(label_w)) << "run";
  for (std::size_t k = 0; k < cols.size(); ++k)
    os << "  " << std::right << std::setw(static_cast<int>(widths[k])) << cols[k];
  os << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << std::left << std::setw(static_cast<int>(label_w)) << labels[r];
    for (std::size_t k = 0; k < cols.size(); ++k)
      os << "  " << std::right << std::setw(static_cast<int>(widths[k])) << fmt(rows[r][k]);
    os << '\n';
  }
  return os.str();
}

}  // namespace

ordered_json MetricsReport::to_json() const {
  ordered_json j;
  j["branches"] = {{"detection", has_detection}, {"segmentation", has_segmentation}};
  j["acc_all"] = opt_json(has_detection, acc_all());
  j["acc_real"] = opt_json(has_detection, acc_real());
  j["acc_fake"] = opt_json(has_detection, acc_fake());
  ordered_json acc_tags = ordered_json::object(), iou_tags = ordered_json::object(),
               counts = ordered_json::object();
  for (const auto& [tag, cell] : per_tag) {
    acc_tags[tag] = opt_json(has_detection, cell.acc());
    iou_tags[tag] = opt_json(has_segmentation, cell.iou());
    counts[tag] = cell.count;
  }
  j["acc_per_source_tag"] = std::move(acc_tags);
  j["iou_all"] = opt_json(has_segmentation, iou_all());
  j["iou_real"] = opt_json(has_segmentation, iou_real());
  j["iou_fake"] = opt_json(has_segmentation, iou_fake());
  j["iou_per_source_tag"] = std::move(iou_tags);
  j["counts"] = {{"all", all.count}, {"real", real.count}, {"fake", fake.count},
                 {"per_source_tag", std::move(counts)}};
  ordered_json cells = ordered_json::object();
  cells["all"] = cell_json(all);
  cells["real"] = cell_json(real);
  cells["fake"] = cell_json(fake);
  for (const auto& [tag, cell] : per_tag) cells["tag:" + tag] = cell_json(cell);
  j["cells"] = std::move(cells);
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.has_detection = j.at("branches").at("detection").get<bool>();
    r.has_segmentation = j.at("branches").at("segmentation").get<bool>();
    for (const auto& [key, value] : j.at("cells").items()) {
      const MetricCell c = cell_from_json(value);
      if (key == "all") r.all = c;
      else if (key == "real") r.real = c;
      else if (key == "fake") r.fake = c;
      else if (key.rfind("tag:", 0) == 0) r.per_tag[key.substr(4)] = c;
      else throw ValidationError("metrics report: unknown cell '" + key + "'");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("metrics report: ") + e.what());
  }
}

std::string MetricsReport::table(const std::string& label) const {
  return render_table(columns(), {label}, {row()});
}

MetricsReport merge_reports(const MetricsReport& a, const MetricsReport& b) {
  if (a.has_detection != b.has_detection || a.has_segmentation != b.has_segmentation)
    throw ValidationError("merge_reports: reports score different branches");
  MetricsReport out = a;
  out.all.add(b.all);
  out.real.add(b.real);
  out.fake.add(b.fake);
  for (const auto& [tag, cell] : b.per_tag) out.per_tag[tag].add(cell);
  return out;
}

// ---------------------------------------------------------------- evaluate

Tensor<float> stack_images(const std::vector<ImageSample>& samples,
                           std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValidationError("stack_images: no samples");
  const Shape s0 = samples[indices[0]].image.shape();
  Tensor<float> batch({static_cast<int>(indices.size()), s0.c, s0.h, s0.w});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Image& img = samples[indices[i]].image;
    if (!(img.shape() == s0))
      throw DimensionError("stack_images: sample " + samples[indices[i]].group_id + " has shape " +
                           img.shape().str() + ", expected " + s0.str());
    batch.set_sample(static_cast<int>(i), img, 0);
  }
  return batch;
}

Tensor<float> stack_images(const std::vector<ImageSample>& samples, std::size_t begin,
                           std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return stack_images(samples, idx);
}

std::vector<SamplePrediction> predict(Model<float>& model, const std::vector<ImageSample>& samples,
                                      const EvalOptions& options) {
  options.validate();
  const bool det = options.detection && model.has_detection();
  const bool seg = options.segmentation && model.has_segmentation();
  std::vector<SamplePrediction> out(samples.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t b = 0; b < samples.size(); b += options.batch_size) {
    const std::size_t e = std::min(samples.size(), b + options.batch_size);
    const auto fwd = model.forward(stack_images(samples, b, e), nn::Mode::kEval, det, seg);
    for (std::size_t i = b; i < e; ++i) {
      const int k = static_cast<int>(i - b);
      SamplePrediction& pr = out[i];
      pr.p = det ? static_cast<double>(fwd.p[k]) : nan;
      pr.predicted_label = det ? (pr.p >= options.threshold_det ? 1 : 0) : -1;
      if (seg) {
        const auto& m = samples[i].mask;
        const ManipulationMask pred =
            binarize<float>(fwd.S.sample(k), m.height(), m.width(), options.threshold_seg);
        pr.iou = iou(pred, m);
      } else {
        pr.iou = nan;
      }
    }
  }
  return out;
}

MetricsReport evaluate(Model<float>& model, const std::vector<ImageSample>& samples,
                       const EvalOptions& options) {
  if (samples.empty()) throw ValidationError("evaluate: split is empty");
  const auto preds = predict(model, samples, options);
  MetricsReport r;
  r.has_detection = options.detection && model.has_detection();
  r.has_segmentation = options.segmentation && model.has_segmentation();
  for (std::size_t i = 0; i < samples.size(); ++i)
    r.add_sample(samples[i].label, samples[i].source_tag, preds[i]);
  return r;
}

ComparisonTable compare_runs(const std::vector<MetricsReport>& reports,
                             const std::vector<std::string>& labels) {
  if (reports.empty()) throw ValidationError("compare_runs: no reports given");
  if (labels.size() != reports.size())
    throw ValidationError("compare_runs: " + std::to_string(reports.size()) + " reports but " +
                          std::to_string(labels.size()) + " labels");
  const auto cols = reports[0].columns();
  std::vector<std::vector<std::optional<double>>> rows;
  for (std::size_t r = 0; r < reports.size(); ++r) {
    if (reports[r].columns() != cols)
      throw ValidationError("compare_runs: report '" + labels[r] +
                            "' has different columns from '" + labels[0] + "'");
    rows.push_back(reports[r].row());
  }
  ComparisonTable t;
  t.text = render_table(cols, labels, rows);
  t.json["columns"] = cols;
  t.json["rows"] = ordered_json::array();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    ordered_json values = ordered_json::array();
    for (const auto& v : rows[r]) values.push_back(v ? ordered_json(*v) : ordered_json(nullptr));
    t.json["rows"].push_back({{"label", labels[r]}, {"values", std::move(values)}});
  }
  return t;
}

// --------------------------------------------------------------------- CAM

CamMap cam(Model<float>& model, const Image& image) {
  if (!model.has_detection())
    throw CapabilityError("cam: model has no detection branch");
  const Shape s = image.shape();
  if (s.n != 1) throw DimensionError("cam: expects a single image, got " + s.str());
  const auto probe = spatial_activations(model, image);
  const Tensor<float>& A = probe.activations;
  const Tensor<float>& G = probe.logit_grad;
  const int C = A.shape().c, fh = A.shape().h, fw = A.shape().w;

  // Grad-CAM++ channel weights: alpha = g^2 / (2 g^2 + sum(A) g^3),
  // w_k = sum_ij alpha_ij * relu(g_ij).
  std::vector<double> raw(static_cast<std::size_t>(fh) * fw, 0.0);
  for (int c = 0; c < C; ++c) {
    const auto a = A.plane(0, c);
    const auto g = G.plane(0, c);
    double sum_a = 0.0;
    for (float v : a) sum_a += v;
    double weight = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double gk = g[k];
      if (gk == 0.0) continue;
      const double g2 = gk * gk;
      const double denom = 2.0 * g2 + sum_a * g2 * gk;
      const double alpha = denom != 0.0 ? g2 / denom : 0.0;
      weight += alpha * std::max(gk, 0.0);
    }
    for (std::size_t k = 0; k < raw.size(); ++k) raw[k] += weight * a[k];
  }
  for (double& v : raw) v = std::max(v, 0.0);

  CamMap out;
  out.h = s.h;
  out.w = s.w;
  out.values.assign(static_cast<std::size_t>(s.h) * s.w, 0.0);
  const double sy = static_cast<double>(fh) / s.h;
  const double sx = static_cast<double>(fw) / s.w;
  for (int i = 0; i < s.h; ++i) {
    const double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, fh - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, fh - 1);
    const double wy = fy - y0;
    for (int j = 0; j < s.w; ++j) {
      const double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, fw - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, fw - 1);
      const double wx = fx - x0;
      const double top = (1 - wx) * raw[y0 * fw + x0] + wx * raw[y0 * fw + x1];
      const double bot = (1 - wx) * raw[y1 * fw + x0] + wx * raw[y1 * fw + x1];
      out.values[static_cast<std::size_t>(i) * s.w + j] = (1 - wy) * top + wy * bot;
    }
  }
  const auto [lo, hi] = std::minmax_element(out.values.begin(), out.values.end());
  const double mn = *lo, mx = *hi;
  if (!(mx > mn)) {
    out.degenerate = true;
    std::fill(out.values.begin(), out.values.end(), 0.0);
    return out;
  }
  for (double& v : out.values) v = (v - mn) / (mx - mn);
  return out;
}

std::pair<double, double> cam_inside_outside(const CamMap& map, const ManipulationMask& mask) {
  if (mask.height() != map.h || mask.width() != map.w)
    throw DimensionError("cam_inside_outside: mask does not match the map");
  double in = 0.0, out = 0.0;
  std::size_t n_in = 0, n_out = 0;
  for (std::size_t k = 0; k < map.values.size(); ++k) {
    if (mask[k]) {
      in += map.values[k];
      ++n_in;
    } else {
      out += map.values[k];
      ++n_out;
    }
  }
  return {n_in ? in / n_in : 0.0, n_out ? out / n_out : 0.0};
}

namespace {

// Piecewise-linear blue -> cyan -> yellow -> red ramp.
void heat_color(double v, std::uint8_t rgb[3]) {
  static const double stops[4][3] = {{0, 0, 0.5}, {0, 0.8, 1}, {1, 1, 0}, {0.9, 0, 0}};
  v = std::clamp(v, 0.0, 1.0) * 3.0;
  const int k = std::min(static_cast<int>(v), 2);
  const double t = v - k;
  for (int c = 0; c < 3; ++c)
    rgb[c] = quantize_u8(static_cast<float>((1 - t) * stops[k][c] + t * stops[k + 1][c]));
}

}  // namespace

void write_cam_png(const std::filesystem::path& heat_path, const std::filesystem::path& overlay_path,
                   const CamMap& map, const Image& image) {
  const Shape s = image.shape();
  if (s.h != map.h || s.w != map.w) throw DimensionError("write_cam_png: image does not match map");
  const std::size_t n = map.values.size();
  std::vector<std::uint8_t> heat(n * 3), overlay(n * 3);
  for (std::size_t k = 0; k < n; ++k) {
    std::uint8_t rgb[3];
    heat_color(map.values[k], rgb);
    const int i = static_cast<int>(k / map.w), j = static_cast<int>(k % map.w);
    for (int c = 0; c < 3; ++c) {
      heat[k * 3 + c] = rgb[c];
      const float px = image.at(0, s.c == 3 ? c : 0, i, j);
      overlay[k * 3 + c] = quantize_u8(0.5f * px + 0.5f * rgb[c] / 255.0f);
    }
  }
  write_png_u8(heat_path, map.h, map.w, 3, heat);
  write_png_u8(overlay_path, map.h, map.w, 3, overlay);
}

}  // namespace forgeseg
