#include "forgeseg/manifest.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "forgeseg/errors.hpp"

namespace forgeseg {

using ordered_json = nlohmann::ordered_json;

bool is_known_tag(const std::string& tag) {
  return tag == tags::kRealA || tag == tags::kRealB || tag == tags::kSplicedEntire ||
         tag == tags::kSplicedPartial;
}

void ImageSample::validate() const {
  if (image.shape().h != mask.height() || image.shape().w != mask.width())
    throw DimensionError("sample " + group_id + ": mask shape does not match image");
  if (label != 0 && label != 1) throw ValidationError("sample label must be 0 or 1");
  if (label == 0 && mask.any())
    throw ValidationError("sample " + group_id + ": real image with a non-empty mask");
  if (label == 1 && !mask.any())
    throw ValidationError("sample " + group_id + ": fake image with an empty mask");
}

void DatasetManifest::validate() const {
  std::set<std::string> paths;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.label != 0 && r.label != 1)
      throw ValidationError("manifest record " + std::to_string(i) + ": label must be 0 or 1");
    if (!paths.insert(r.image_path).second)
      throw ValidationError("manifest record " + std::to_string(i) + ": duplicate path " +
                            r.image_path);
    if (!paths.insert(r.mask_path).second)
      throw ValidationError("manifest record " + std::to_string(i) + ": duplicate path " +
                            r.mask_path);
  }
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].split == split) out.push_back(i);
  return out;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  manifest.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write manifest '" + path.string() + "'");
  ordered_json header;
  header["kind"] = "header";
  header["format"] = kManifestFormat;
  header["seed"] = manifest.seed;
  header["config_hash"] = manifest.config_hash;
  header["fields"] = {"image_path", "mask_path", "label", "source_tag", "group_id", "split"};
  if (!manifest.config_json.empty()) header["config"] = ordered_json::parse(manifest.config_json);
  os << header.dump() << '\n';
  for (const auto& r : manifest.records) {
    ordered_json j;
    j["image_path"] = r.image_path;
    j["mask_path"] = r.mask_path;
    j["label"] = r.label;
    j["source_tag"] = r.source_tag;
    j["group_id"] = r.group_id;
    j["split"] = to_string(r.split);
    os << j.dump() << '\n';
  }
  if (!os) throw IoError("failed writing manifest '" + path.string() + "'");
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read manifest '" + path.string() + "'");
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      if (!have_header) {
        if (j.value("kind", "") != "header" || j.value("format", "") != kManifestFormat)
          throw ValidationError(path.string() + ": missing " + kManifestFormat + " header");
        m.seed = j.at("seed").get<std::uint64_t>();
        m.config_hash = j.at("config_hash").get<std::string>();
        if (j.contains("config")) m.config_json = j["config"].dump();
        have_header = true;
        continue;
      }
      ManifestRecord r;
      r.image_path = j.at("image_path").get<std::string>();
      r.mask_path = j.at("mask_path").get<std::string>();
      r.label = j.at("label").get<int>();
      r.source_tag = j.at("source_tag").get<std::string>();
      r.group_id = j.at("group_id").get<std::string>();
      r.split = split_from_string(j.at("split").get<std::string>());
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw ValidationError(path.string() + ": empty manifest");
  m.validate();
  return m;
}

void assign_splits(DatasetManifest& manifest, std::size_t n_train, std::size_t n_test) {
  const auto splits = split_by_rank(manifest.records.size(), n_train, n_test);
  for (std::size_t i = 0; i < splits.size(); ++i) manifest.records[i].split = splits[i];
}

std::vector<ImageSample> load_samples(const DatasetManifest& manifest,
                                      const std::filesystem::path& root,
                                      std::optional<Split> split) {
  std::vector<ImageSample> out;
  for (const auto& r : manifest.records) {
    if (split && r.split != *split) continue;
    ImageSample s;
    s.image = read_png(root / r.image_path);
    s.mask = read_mask_png(root / r.mask_path);
    s.label = r.label;
    s.source_tag = r.source_tag;
    s.group_id = r.group_id;
    s.split = r.split;
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

void check_manifest_masks(const DatasetManifest& manifest, const std::filesystem::path& root) {
  manifest.validate();
  for (const auto& r : manifest.records) {
    const ManipulationMask mask = read_mask_png(root / r.mask_path);
    if ((r.label == 1) != mask.any())
      throw ValidationError("record " + r.image_path + ": label " + std::to_string(r.label) +
                            " disagrees with mask popcount " + std::to_string(mask.popcount()));
  }
}

}  // namespace forgeseg
