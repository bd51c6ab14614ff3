#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forgeseg/corpus.hpp"
#include "forgeseg/metrics.hpp"
#include "forgeseg/model.hpp"
#include "forgeseg/trainer.hpp"

namespace forgeseg {

struct EvalConfig {
  double threshold_det = 0.5;
  double threshold_seg = 0.5;
  int batch_size = 32;
  int cam_samples = 16;  // fake samples rendered by the cam stage

  EvalOptions options() const;
  void validate() const;
};

// Everything a pipeline run needs. The train seed is not configured directly:
// every stage draws its seed from `seed` (see stage_seed).
struct RunConfig {
  std::uint64_t seed = 0;
  CorpusConfig data;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;

  void validate() const;
};

// Per-stage seed derived from the global one by stable hashing.
std::uint64_t stage_seed(std::uint64_t global_seed, const std::string& stage);

nlohmann::ordered_json to_json(const ModelConfig& config);
nlohmann::ordered_json to_json(const CorpusConfig& config);
nlohmann::ordered_json to_json(const TrainConfig& config);
nlohmann::ordered_json to_json(const EvalConfig& config);
nlohmann::ordered_json to_json(const RunConfig& config);

// Strict parsers: unknown keys and type mismatches raise ValidationError
// naming the dotted key path. Missing keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path = "model");
CorpusConfig corpus_config_from_json(const nlohmann::json& j, const std::string& path = "data");
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path = "train");
EvalConfig eval_config_from_json(const nlohmann::json& j, const std::string& path = "eval");
// A missing model.input_size follows data.image_size and data.channels.
RunConfig run_config_from_json(const nlohmann::json& j);

inline constexpr const char* kEnvPrefix = "FORGESEG__";

// FORGESEG__TRAIN__STEPS=50 sets train.steps; FORGESEG__SEED=3 sets seed.
// Values parse as JSON when they can and as plain strings otherwise.
void apply_env_overrides(nlohmann::json& j, const std::map<std::string, std::string>& env);
std::map<std::string, std::string> environment_overrides();

RunConfig load_config(const std::filesystem::path& path, bool use_env = true);
std::string dump_config(const RunConfig& config);

// Levenshtein distance; used to suggest the closest valid key.
std::size_t edit_distance(const std::string& a, const std::string& b);

enum class Stage { kSynth, kTrain, kEval, kCam };
std::string to_string(Stage stage);
Stage stage_from_string(const std::string& s);
std::set<Stage> parse_stages(const std::string& comma_list);

struct PipelineOptions {
  // Checkpoint for eval/cam when train is not among the stages; defaults to
  // <run_dir>/train/best.ckpt, then last.ckpt.
  std::optional<std::filesystem::path> checkpoint;
  bool quiet = false;
};

struct PipelineResult {
  std::filesystem::path run_dir;
  std::filesystem::path manifest;
  std::filesystem::path checkpoint;
  std::optional<MetricsReport> report;
  std::optional<double> cam_hit_rate;  // share of fake samples with more CAM mass inside the mask
};

// Runs the stages in canonical order (synth, train, eval, cam) under
// `run_dir`: data/, train/, eval/, cam/ plus the resolved config.json.
// Throws DependencyError when a required artifact is neither produced by an
// earlier stage nor present in the run directory.
PipelineResult run_pipeline(const RunConfig& config, const std::set<Stage>& stages,
                            const std::filesystem::path& run_dir,
                            const PipelineOptions& options = {});

// Samples of the split that evaluation reads: test, else val, else train.
Split evaluation_split(const DatasetManifest& manifest);

}  // namespace forgeseg
