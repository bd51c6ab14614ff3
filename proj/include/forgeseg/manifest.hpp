#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "forgeseg/forge.hpp"
#include "forgeseg/image.hpp"

namespace forgeseg {

namespace tags {
inline constexpr const char* kRealA = "real-A";
inline constexpr const char* kRealB = "real-B";
inline constexpr const char* kSplicedEntire = "spliced-entire";
inline constexpr const char* kSplicedPartial = "spliced-partial";
inline constexpr const char* kOther = "other";
}  // namespace tags

bool is_known_tag(const std::string& tag);

struct ImageSample {
  Image image;
  ManipulationMask mask;
  int label = 0;  // 0 real, 1 fake
  std::string source_tag;
  std::string group_id;
  Split split = Split::kTrain;

  // label 0 <=> empty mask, and mask shape matches the image.
  void validate() const;
};

struct ManifestRecord {
  std::string image_path;  // relative to the manifest's directory
  std::string mask_path;
  int label = 0;
  std::string source_tag;
  std::string group_id;
  Split split = Split::kTrain;
  bool operator==(const ManifestRecord&) const = default;
};

// JSON-lines file: a header line {"kind":"header", seed, config_hash, ...}
// followed by one object per record.
struct DatasetManifest {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string config_json;  // generator config, serialized; may be empty
  std::vector<ManifestRecord> records;

  // Unique paths and labels in {0,1}. Does not touch the filesystem.
  void validate() const;
  std::vector<std::size_t> indices(Split split) const;
  std::size_t count(Split split) const { return indices(split).size(); }
};

inline constexpr const char* kManifestFormat = "forgeseg-manifest/1";

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Reassigns splits by record order (see split_by_rank).
void assign_splits(DatasetManifest& manifest, std::size_t n_train, std::size_t n_test);

// Loads images and masks of one split (all records when nullopt).
std::vector<ImageSample> load_samples(const DatasetManifest& manifest,
                                      const std::filesystem::path& root,
                                      std::optional<Split> split = std::nullopt);

// Reads every mask and checks it against its record's label.
void check_manifest_masks(const DatasetManifest& manifest, const std::filesystem::path& root);

}  // namespace forgeseg
