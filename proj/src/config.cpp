#include "forgeseg/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "forgeseg/errors.hpp"
#include "forgeseg/rng.hpp"

extern char** environ;

namespace forgeseg {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1])});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::uint64_t stage_seed(std::uint64_t global_seed, const std::string& stage) {
  return derive_seed(global_seed, stage);
}

namespace {

std::string nearest(const std::string& key, const std::vector<std::string>& allowed) {
  std::string best;
  std::size_t best_d = ~std::size_t{0};
  for (const auto& a : allowed) {
    const std::size_t d = edit_distance(key, a);
    if (d < best_d) {
      best_d = d;
      best = a;
    }
  }
  return best;
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

const char* type_name(const json& v) { return v.type_name(); }

// Strict reader over one JSON object.
class Section {
 public:
  Section(const json& j, std::string path, std::vector<std::string> allowed)
      : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ValidationError((path_.empty() ? std::string("config") : path_) +
                            ": expected an object, got " + type_name(j_));
    for (const auto& [key, value] : j_.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) != allowed.end()) continue;
      throw ValidationError("unknown key '" + join(path_, key) + "'; nearest valid key is '" +
                            join(path_, nearest(key, allowed)) + "'");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const { return j_.at(key); }
  std::string where(const char* key) const { return join(path_, key); }

  void read(const char* key, int& out) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) mismatch(key, "an integer", v);
    const auto x = v.get<std::int64_t>();
    if (x < INT32_MIN || x > INT32_MAX) throw ValidationError(where(key) + ": out of range");
    out = static_cast<int>(x);
  }
  void read(const char* key, std::uint64_t& out) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      mismatch(key, "a non-negative integer", v);
    out = v.get<std::uint64_t>();
  }
  void read(const char* key, double& out) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number()) mismatch(key, "a number", v);
    out = v.get<double>();
  }
  void read(const char* key, bool& out) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_boolean()) mismatch(key, "a boolean", v);
    out = v.get<bool>();
  }
  void read(const char* key, std::string& out) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_string()) mismatch(key, "a string", v);
    out = v.get<std::string>();
  }
  void read(const char* key, std::vector<std::string>& out) const {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) mismatch(key, "an array of strings", v);
    std::vector<std::string> tmp;
    for (const auto& e : v) {
      if (!e.is_string()) mismatch(key, "an array of strings", v);
      tmp.push_back(e.get<std::string>());
    }
    out = std::move(tmp);
  }

  [[noreturn]] void mismatch(const char* key, const char* expected, const json& v) const {
    throw ValidationError(where(key) + ": expected " + expected + ", got " + type_name(v));
  }

 private:
  const json& j_;
  std::string path_;
};

// Rethrows enum parse errors with the key path of the offending field.
template <typename F>
auto with_path(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const ValidationError& e) {
    std::string msg = e.what();
    const auto colon = msg.find(": ");
    throw ValidationError(where + ": " + (colon == std::string::npos ? msg : msg.substr(colon + 2)));
  }
}

}  // namespace

// -------------------------------------------------------------- serialize

ordered_json to_json(const ModelConfig& c) {
  ordered_json j;
  j["encoder_kind"] = to_string(c.encoder_kind);
  j["input_size"] = {c.input_h, c.input_w, c.input_c};
  j["decoder_stages"] = c.decoder_stages;
  j["base_channels"] = c.base_channels;
  j["feature_channels"] = c.feature_channels;
  j["middle_blocks"] = c.middle_blocks;
  j["det_hidden"] = c.det_hidden;
  ordered_json branches = ordered_json::array();
  if (c.detection) branches.push_back("detection");
  if (c.segmentation) branches.push_back("segmentation");
  j["branches"] = std::move(branches);
  return j;
}

ordered_json to_json(const CorpusConfig& c) {
  ordered_json j;
  j["num_samples"] = c.num_samples;
  j["image_size"] = c.image_size;
  j["channels"] = c.channels;
  j["fake_ratio"] = c.fake_ratio;
  j["partial_ratio"] = c.partial_ratio;
  j["val"] = c.val;
  j["test"] = c.test;
  j["frames_per_group"] = c.frames_per_group;
  j["real_quota"] = c.real_quota;
  j["fake_quota"] = c.fake_quota;
  j["max_components"] = c.max_components;
  j["region_shapes"] = c.region_shapes;
  j["crop_factor"] = c.crop_factor;
  j["sensor_noise"] = c.sensor_noise;
  j["fingerprint"] = c.fingerprint;
  return j;
}

ordered_json to_json(const TrainConfig& c) {
  ordered_json j;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["optimizer"] = to_string(c.optimizer);
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["weights"] = {{"det", c.weights.det}, {"seg", c.weights.seg}};
  j["branch"] = to_string(c.branch);
  j["eval_interval"] = c.eval_interval;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["seg_scope"] = to_string(c.seg_scope);
  return j;
}

ordered_json to_json(const EvalConfig& c) {
  ordered_json j;
  j["threshold_det"] = c.threshold_det;
  j["threshold_seg"] = c.threshold_seg;
  j["batch_size"] = c.batch_size;
  j["cam_samples"] = c.cam_samples;
  return j;
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["data"] = to_json(c.data);
  j["model"] = to_json(c.model);
  j["train"] = to_json(c.train);
  j["eval"] = to_json(c.eval);
  return j;
}

std::string dump_config(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

// ------------------------------------------------------------------ parse

ModelConfig model_config_from_json(const json& j, const std::string& path) {
  const Section s(j, path,
                  {"encoder_kind", "input_size", "decoder_stages", "base_channels",
                   "feature_channels", "middle_blocks", "det_hidden", "branches"});
  ModelConfig c;
  if (s.has("encoder_kind")) {
    std::string kind;
    s.read("encoder_kind", kind);
    c.encoder_kind = with_path(s.where("encoder_kind"), [&] { return encoder_kind_from_string(kind); });
  }
  if (s.has("input_size")) {
    const json& v = s.at("input_size");
    if (!v.is_array() || v.size() != 3 || !std::all_of(v.begin(), v.end(), [](const json& e) {
          return e.is_number_integer();
        }))
      s.mismatch("input_size", "an array [h, w, c] of integers", v);
    c.input_h = v[0].get<int>();
    c.input_w = v[1].get<int>();
    c.input_c = v[2].get<int>();
  }
  s.read("decoder_stages", c.decoder_stages);
  s.read("base_channels", c.base_channels);
  s.read("feature_channels", c.feature_channels);
  s.read("middle_blocks", c.middle_blocks);
  s.read("det_hidden", c.det_hidden);
  if (s.has("branches")) {
    std::vector<std::string> branches;
    s.read("branches", branches);
    c.detection = c.segmentation = false;
    for (const auto& b : branches) {
      if (b == "detection") c.detection = true;
      else if (b == "segmentation") c.segmentation = true;
      else
        throw ValidationError(s.where("branches") + ": unknown branch '" + b +
                              "' (expected detection or segmentation)");
    }
  }
  c.validate();
  return c;
}

CorpusConfig corpus_config_from_json(const json& j, const std::string& path) {
  const Section s(j, path,
                  {"num_samples", "image_size", "channels", "fake_ratio", "partial_ratio", "val",
                   "test", "frames_per_group", "real_quota", "fake_quota", "max_components",
                   "region_shapes", "crop_factor", "sensor_noise", "fingerprint"});
  CorpusConfig c;
  s.read("num_samples", c.num_samples);
  s.read("image_size", c.image_size);
  s.read("channels", c.channels);
  s.read("fake_ratio", c.fake_ratio);
  s.read("partial_ratio", c.partial_ratio);
  s.read("val", c.val);
  s.read("test", c.test);
  s.read("frames_per_group", c.frames_per_group);
  s.read("real_quota", c.real_quota);
  s.read("fake_quota", c.fake_quota);
  s.read("max_components", c.max_components);
  s.read("region_shapes", c.region_shapes);
  s.read("crop_factor", c.crop_factor);
  s.read("sensor_noise", c.sensor_noise);
  s.read("fingerprint", c.fingerprint);
  c.validate();
  return c;
}

TrainConfig train_config_from_json(const json& j, const std::string& path) {
  const Section s(j, path,
                  {"steps", "batch_size", "learning_rate", "optimizer", "beta1", "beta2",
                   "adam_eps", "weights", "branch", "eval_interval", "checkpoint_interval",
                   "seg_scope"});
  TrainConfig c;
  s.read("steps", c.steps);
  s.read("batch_size", c.batch_size);
  s.read("learning_rate", c.learning_rate);
  if (s.has("optimizer")) {
    std::string v;
    s.read("optimizer", v);
    c.optimizer = with_path(s.where("optimizer"), [&] { return optimizer_kind_from_string(v); });
  }
  s.read("beta1", c.beta1);
  s.read("beta2", c.beta2);
  s.read("adam_eps", c.adam_eps);
  if (s.has("weights")) {
    const Section w(s.at("weights"), s.where("weights"), {"det", "seg"});
    w.read("det", c.weights.det);
    w.read("seg", c.weights.seg);
  }
  if (s.has("branch")) {
    std::string v;
    s.read("branch", v);
    c.branch = with_path(s.where("branch"), [&] { return branch_mode_from_string(v); });
  }
  s.read("eval_interval", c.eval_interval);
  s.read("checkpoint_interval", c.checkpoint_interval);
  if (s.has("seg_scope")) {
    std::string v;
    s.read("seg_scope", v);
    c.seg_scope = with_path(s.where("seg_scope"), [&] { return seg_loss_scope_from_string(v); });
  }
  c.validate();
  return c;
}

EvalOptions EvalConfig::options() const {
  EvalOptions o;
  o.threshold_det = threshold_det;
  o.threshold_seg = threshold_seg;
  o.batch_size = batch_size;
  return o;
}

void EvalConfig::validate() const {
  options().validate();
  if (cam_samples < 0) throw ValidationError("eval.cam_samples: must be non-negative");
}

EvalConfig eval_config_from_json(const json& j, const std::string& path) {
  const Section s(j, path, {"threshold_det", "threshold_seg", "batch_size", "cam_samples"});
  EvalConfig c;
  s.read("threshold_det", c.threshold_det);
  s.read("threshold_seg", c.threshold_seg);
  s.read("batch_size", c.batch_size);
  s.read("cam_samples", c.cam_samples);
  c.validate();
  return c;
}

void RunConfig::validate() const {
  data.validate();
  model.validate();
  train.validate();
  eval.validate();
  if (model.input_h != data.image_size || model.input_w != data.image_size ||
      model.input_c != data.channels)
    throw ValidationError("model.input_size [" + std::to_string(model.input_h) + ", " +
                          std::to_string(model.input_w) + ", " + std::to_string(model.input_c) +
                          "] does not match data.image_size " + std::to_string(data.image_size) +
                          " with data.channels " + std::to_string(data.channels));
  train.validate_against(model);
}

RunConfig run_config_from_json(const json& j) {
  const Section s(j, "", {"seed", "data", "model", "train", "eval"});
  RunConfig c;
  s.read("seed", c.seed);
  if (s.has("data")) c.data = corpus_config_from_json(s.at("data"), "data");
  json model = s.has("model") ? s.at("model") : json::object();
  if (model.is_object() && !model.contains("input_size"))
    model["input_size"] = {c.data.image_size, c.data.image_size, c.data.channels};
  c.model = model_config_from_json(model, "model");
  if (s.has("train")) c.train = train_config_from_json(s.at("train"), "train");
  if (s.has("eval")) c.eval = eval_config_from_json(s.at("eval"), "eval");
  c.train.seed = stage_seed(c.seed, "train");
  c.validate();
  return c;
}

// ------------------------------------------------------------ environment

void apply_env_overrides(json& j, const std::map<std::string, std::string>& env) {
  const std::string prefix = kEnvPrefix;
  for (const auto& [name, value] : env) {
    if (name.rfind(prefix, 0) != 0 || name.size() == prefix.size()) continue;
    std::vector<std::string> parts;
    std::string rest = name.substr(prefix.size());
    for (std::size_t pos; (pos = rest.find("__")) != std::string::npos; rest = rest.substr(pos + 2))
      parts.push_back(rest.substr(0, pos));
    parts.push_back(rest);
    json* node = &j;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      std::string key = parts[i];
      std::transform(key.begin(), key.end(), key.begin(),
                     [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      if (!node->is_object()) throw ValidationError(name + ": cannot override inside a non-object");
      if (i + 1 == parts.size()) {
        json parsed = json::parse(value, nullptr, false);
        (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      } else {
        if (!node->contains(key)) (*node)[key] = json::object();
        node = &(*node)[key];
      }
    }
  }
}

std::map<std::string, std::string> environment_overrides() {
  std::map<std::string, std::string> out;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry = *e;
    if (entry.rfind(kEnvPrefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    out[entry.substr(0, eq)] = entry.substr(eq + 1);
  }
  return out;
}

RunConfig load_config(const std::filesystem::path& path, bool use_env) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  if (use_env) apply_env_overrides(j, environment_overrides());
  return run_config_from_json(j);
}

// ----------------------------------------------------------------- stages

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::kSynth: return "synth";
    case Stage::kTrain: return "train";
    case Stage::kEval: return "eval";
    case Stage::kCam: return "cam";
  }
  return "synth";
}

Stage stage_from_string(const std::string& s) {
  if (s == "synth") return Stage::kSynth;
  if (s == "train") return Stage::kTrain;
  if (s == "eval") return Stage::kEval;
  if (s == "cam") return Stage::kCam;
  throw ValidationError("unknown stage '" + s + "' (expected synth, train, eval or cam)");
}

std::set<Stage> parse_stages(const std::string& comma_list) {
  std::set<Stage> out;
  std::stringstream ss(comma_list);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    item = item.substr(b, item.find_last_not_of(" \t") - b + 1);
    if (item == "all") {
      out.insert({Stage::kSynth, Stage::kTrain, Stage::kEval, Stage::kCam});
      continue;
    }
    out.insert(stage_from_string(item));
  }
  if (out.empty()) throw ValidationError("no stages given");
  return out;
}

}  // namespace forgeseg
