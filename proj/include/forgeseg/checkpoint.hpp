#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "forgeseg/model.hpp"

namespace forgeseg {

struct AdamState {
  std::int64_t t = 0;
  // Per-parameter first and second moment estimates, keyed by parameter name.
  std::map<std::string, Tensor<float>> m;
  std::map<std::string, Tensor<float>> v;
};

// Where the deterministic data order stands; enough to resume mid-epoch.
struct DataCursor {
  std::uint64_t seed = 0;
  std::int64_t epoch = 0;
  std::int64_t position = 0;  // batch index inside the epoch
  std::string str() const;
  static DataCursor parse(const std::string& s);
};

struct TrainingState {
  std::int64_t step = 0;
  AdamState optimizer;
  DataCursor cursor;
};

struct Checkpoint {
  ModelConfig config;
  Model<float> model;
  TrainingState state;
};

inline constexpr const char* kCheckpointFormat = "forgeseg-checkpoint/1";

// Binary container: magic line, length-prefixed JSON header (config, config
// hash, step, data cursor, tensor index, payload checksum), raw float32 payload.
void save_checkpoint(const std::filesystem::path& path, Model<float>& model,
                     const TrainingState& state = {});

// Throws IntegrityError when the payload checksum fails, the stored config
// does not hash to the stored hash, or `expected_config_hash` differs.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_config_hash = std::nullopt);

}  // namespace forgeseg
