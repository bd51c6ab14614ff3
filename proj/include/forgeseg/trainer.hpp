#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forgeseg/checkpoint.hpp"
#include "forgeseg/manifest.hpp"
#include "forgeseg/metrics.hpp"
#include "forgeseg/model.hpp"
#include "forgeseg/objective.hpp"

namespace forgeseg {

enum class BranchMode { kJoint, kNoSeg, kNoDet };

std::string to_string(BranchMode mode);
BranchMode branch_mode_from_string(const std::string& s);

enum class OptimizerKind { kAdam, kSgd };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& s);

std::string to_string(SegLossScope scope);
SegLossScope seg_loss_scope_from_string(const std::string& s);

struct TrainConfig {
  int steps = 2000;
  int batch_size = 16;
  double learning_rate = 2e-4;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LossWeights weights;
  BranchMode branch = BranchMode::kJoint;
  std::uint64_t seed = 0;
  int eval_interval = 0;        // 0: evaluate only after the last step
  int checkpoint_interval = 0;  // 0: only last.ckpt at the end
  SegLossScope seg_scope = SegLossScope::kAllSamples;

  void validate() const;
  // The model must carry every branch the mode trains.
  void validate_against(const ModelConfig& model) const;
};

struct TrainLogRecord {
  std::int64_t step = 0;  // 1-based: the record for step k is written after k updates
  double l_total = 0.0;
  std::optional<double> l_det;
  std::optional<double> l_seg;
  double learning_rate = 0.0;
  double wall_time = 0.0;  // seconds since the run started

  nlohmann::ordered_json to_json() const;
};

// Batches for one epoch: a shuffle keyed by (seed, epoch), cut into runs of
// `batch_size`; the last batch may be short.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size,
                                                   std::uint64_t seed, std::int64_t epoch);

struct Batch {
  Tensor<float> images;
  Tensor<float> masks;  // N x 1 x H x W
  std::vector<int> labels;
};

Batch assemble_batch(const std::vector<ImageSample>& samples, std::span<const std::size_t> indices);

// Objective on a batch under a branch mode, in the given forward mode.
LossReport batch_loss(Model<float>& model, const Batch& batch, const TrainConfig& config,
                      nn::Mode mode = nn::Mode::kEval);

// Sample-weighted mean objective over `samples` in eval mode.
LossReport dataset_loss(Model<float>& model, const std::vector<ImageSample>& samples,
                        const TrainConfig& config, int batch_size = 32);

struct TrainResult {
  std::vector<TrainLogRecord> log;
  std::optional<MetricsReport> best_val;
  std::int64_t best_step = 0;
  std::filesystem::path last_checkpoint;  // empty when no output directory was given
};

class Trainer {
 public:
  Trainer(Model<float>& model, TrainConfig config);

  // Continue from a checkpoint's optimizer state and step counter.
  void restore(const TrainingState& state);
  const TrainingState& state() const { return state_; }

  // Performs one update on `batch` and returns its log record.
  TrainLogRecord step(const Batch& batch);

  // Trains until config.steps. With a non-empty `out_dir` writes
  // train_log.jsonl, eval_log.jsonl, last.ckpt, periodic step-N.ckpt and
  // best.ckpt (by validation IoU, or accuracy without segmentation).
  TrainResult run(const std::vector<ImageSample>& train, const std::vector<ImageSample>& val,
                  const std::filesystem::path& out_dir = {}, const EvalOptions& eval = {});

 private:
  bool trains_detection() const;
  bool trains_segmentation() const;
  void apply_update();

  Model<float>& model_;
  TrainConfig config_;
  TrainingState state_;
  std::vector<nn::ParamRef<float>> params_;  // active parameters only
  double clock_origin_ = 0.0;
};

}  // namespace forgeseg
