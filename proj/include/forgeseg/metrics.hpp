#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forgeseg/manifest.hpp"
#include "forgeseg/model.hpp"

namespace forgeseg {

// s >= threshold -> 1. `S` holds h*w values in row-major order.
template <typename T>
ManipulationMask binarize(std::span<const T> S, int h, int w, double threshold);

// |pred & gt| / |pred | gt|; two empty masks agree perfectly and score 1.
double iou(const ManipulationMask& pred, const ManipulationMask& gt);

// Fraction of samples where (p >= threshold) matches y.
template <typename T>
double accuracy(std::span<const T> p, std::span<const int> y, double threshold = 0.5);

struct EvalOptions {
  double threshold_det = 0.5;
  double threshold_seg = 0.5;
  int batch_size = 32;
  // Branches to score; a branch the model lacks is skipped regardless.
  bool detection = true;
  bool segmentation = true;
  void validate() const;
};

struct SamplePrediction {
  double p = 0.0;           // NaN when detection was not scored
  int predicted_label = -1;  // -1 when detection was not scored
  double iou = 0.0;          // NaN when segmentation was not scored
};

// Sums rather than means so reports over disjoint splits merge exactly.
struct MetricCell {
  std::int64_t count = 0;
  double correct = 0.0;
  double iou_sum = 0.0;
  double acc() const { return count ? correct / count : 0.0; }
  double iou() const { return count ? iou_sum / count : 0.0; }
  void add(const MetricCell& o) {
    count += o.count;
    correct += o.correct;
    iou_sum += o.iou_sum;
  }
};

struct MetricsReport {
  bool has_detection = true;
  bool has_segmentation = true;
  MetricCell all, real, fake;
  std::map<std::string, MetricCell> per_tag;

  double acc_all() const { return all.acc(); }
  double acc_real() const { return real.acc(); }
  double acc_fake() const { return fake.acc(); }
  double iou_all() const { return all.iou(); }
  double iou_real() const { return real.iou(); }
  double iou_fake() const { return fake.iou(); }

  void add_sample(int label, const std::string& tag, const SamplePrediction& pred);

  // Column names in table order, e.g. "Acc-All", "Acc-spliced-partial", "IoU-Real".
  std::vector<std::string> columns() const;
  // Column values; nullopt where a branch was not scored.
  std::vector<std::optional<double>> row() const;

  nlohmann::ordered_json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  std::string table(const std::string& label = "model") const;
};

// Count-weighted combination of reports over disjoint sample sets.
MetricsReport merge_reports(const MetricsReport& a, const MetricsReport& b);

std::vector<SamplePrediction> predict(Model<float>& model, const std::vector<ImageSample>& samples,
                                      const EvalOptions& options = {});

// Unknown source tags are counted under "other". Throws ValidationError on an empty split.
MetricsReport evaluate(Model<float>& model, const std::vector<ImageSample>& samples,
                       const EvalOptions& options = {});

// Stacks sample images into an N x C x H x W batch.
Tensor<float> stack_images(const std::vector<ImageSample>& samples, std::size_t begin,
                           std::size_t end);
Tensor<float> stack_images(const std::vector<ImageSample>& samples,
                           std::span<const std::size_t> indices);

struct ComparisonTable {
  std::string text;
  nlohmann::ordered_json json;
};

// Needs at least one report; every report must have the same columns.
ComparisonTable compare_runs(const std::vector<MetricsReport>& reports,
                             const std::vector<std::string>& labels);

// Grad-CAM++ over the last encoder stage, upsampled to input size.
struct CamMap {
  int h = 0;
  int w = 0;
  std::vector<double> values;  // row-major, in [0, 1]
  bool degenerate = false;     // raw map was constant; values are all zero
};

CamMap cam(Model<float>& model, const Image& image);

// Mean CAM value inside and outside `mask`.
std::pair<double, double> cam_inside_outside(const CamMap& map, const ManipulationMask& mask);

// 8-bit heat map and a 50/50 overlay on the input image.
void write_cam_png(const std::filesystem::path& heat_path, const std::filesystem::path& overlay_path,
                   const CamMap& map, const Image& image);

}  // namespace forgeseg
