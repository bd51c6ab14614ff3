#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "forgeseg/manifest.hpp"

namespace forgeseg {

// Procedural stand-in for a face-forgery corpus. Pristine frames are drawn
// from synthetic identities; fakes splice in content from a donor identity
// rendered on the target's geometry and carrying a generator fingerprint.
struct CorpusConfig {
  int num_samples = 200;
  int image_size = 64;
  int channels = 3;
  double fake_ratio = 0.5;     // exact count is round(num_samples * fake_ratio)
  double partial_ratio = 0.5;  // share of fake groups that edit components only
  int val = 0;                 // split sizes by rank; train is the remainder
  int test = 0;
  int frames_per_group = 12;
  int real_quota = 6;
  int fake_quota = 3;
  int max_components = 3;  // partial edits pick 1..max_components of 4 zones
  std::vector<std::string> region_shapes = {"ellipse"};  // ellipse | rectangle | polygon
  double crop_factor = 1.3;
  double sensor_noise = 0.02;
  double fingerprint = 0.08;  // amplitude of the generator's periodic trace

  void validate() const;
  std::string canonical() const;
  std::string hash() const;
};

// Renders every sample in memory, splits already assigned.
std::vector<ImageSample> synthesize_corpus(const CorpusConfig& config, std::uint64_t seed);

// Writes images/, masks/ and manifest.jsonl under `out_dir` and returns the
// manifest. Paths in the manifest are relative to `out_dir`.
DatasetManifest write_corpus(const std::vector<ImageSample>& samples, const CorpusConfig& config,
                             std::uint64_t seed, const std::filesystem::path& out_dir);

DatasetManifest build_desk_corpus(const CorpusConfig& config, std::uint64_t seed,
                                  const std::filesystem::path& out_dir);

inline constexpr const char* kManifestName = "manifest.jsonl";

}  // namespace forgeseg
