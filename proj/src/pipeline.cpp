#include <cstdio>
#include <fstream>
#include <iostream>

#include "forgeseg/config.hpp"
#include "forgeseg/errors.hpp"

namespace forgeseg {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

Split evaluation_split(const DatasetManifest& manifest) {
  if (manifest.count(Split::kTest) > 0) return Split::kTest;
  if (manifest.count(Split::kVal) > 0) return Split::kVal;
  return Split::kTrain;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << text;
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

void say(const PipelineOptions& o, const std::string& msg) {
  if (!o.quiet) std::cerr << "[forgeseg] " << msg << '\n';
}

fs::path find_checkpoint(const fs::path& run_dir, const PipelineOptions& options) {
  if (options.checkpoint) {
    if (!fs::exists(*options.checkpoint))
      throw DependencyError("checkpoint '" + options.checkpoint->string() + "' does not exist");
    return *options.checkpoint;
  }
  for (const char* name : {"best.ckpt", "last.ckpt"})
    if (fs::exists(run_dir / "train" / name)) return run_dir / "train" / name;
  throw DependencyError("eval/cam need a checkpoint: add the train stage, pass --checkpoint, or "
                        "run train into '" + run_dir.string() + "' first");
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& config, const std::set<Stage>& stages,
                            const fs::path& run_dir, const PipelineOptions& options) {
  config.validate();
  if (stages.empty()) throw ValidationError("run_pipeline: no stages requested");
  PipelineResult result;
  result.run_dir = run_dir;
  result.manifest = run_dir / "data" / kManifestName;
  const bool needs_data = stages.count(Stage::kTrain) || stages.count(Stage::kEval) ||
                          stages.count(Stage::kCam);
  const bool needs_ckpt = stages.count(Stage::kEval) || stages.count(Stage::kCam);

  // Check every dependency before doing any work.
  if (needs_data && !stages.count(Stage::kSynth) && !fs::exists(result.manifest))
    throw DependencyError("no manifest at '" + result.manifest.string() +
                          "': add the synth stage or point --out at a run with data/");
  if (needs_ckpt && !stages.count(Stage::kTrain)) result.checkpoint = find_checkpoint(run_dir, options);

  fs::create_directories(run_dir);
  write_text(run_dir / "config.json", dump_config(config));

  if (stages.count(Stage::kSynth)) {
    say(options, "synth: " + std::to_string(config.data.num_samples) + " samples");
    build_desk_corpus(config.data, stage_seed(config.seed, "synth"), run_dir / "data");
  }

  std::optional<DatasetManifest> manifest;
  if (needs_data) manifest = read_manifest(result.manifest);
  const fs::path data_root = run_dir / "data";

  if (stages.count(Stage::kTrain)) {
    const auto train = load_samples(*manifest, data_root, Split::kTrain);
    const auto val = load_samples(*manifest, data_root, Split::kVal);
    if (train.empty()) throw ValidationError("train: the manifest has no train split");
    Model<float> model(config.model, stage_seed(config.seed, "model"));
    Trainer trainer(model, config.train);
    say(options, "train: " + std::to_string(config.train.steps) + " steps on " +
                     std::to_string(train.size()) + " samples (" + to_string(config.train.branch) +
                     ")");
    const TrainResult tr = trainer.run(train, val, run_dir / "train", config.eval.options());
    result.checkpoint = fs::exists(run_dir / "train" / "best.ckpt") ? run_dir / "train" / "best.ckpt"
                                                                    : tr.last_checkpoint;
  }

  if (needs_ckpt) {
    Checkpoint ck = load_checkpoint(result.checkpoint, config.model.hash());
    const Split split = evaluation_split(*manifest);
    const auto samples = load_samples(*manifest, data_root, split);
    EvalOptions opts = config.eval.options();
    opts.detection = config.train.branch != BranchMode::kNoDet;
    opts.segmentation = config.train.branch != BranchMode::kNoSeg;

    if (stages.count(Stage::kEval)) {
      const fs::path dir = run_dir / "eval";
      fs::create_directories(dir);
      MetricsReport report = evaluate(ck.model, samples, opts);
      ordered_json j;
      j["split"] = to_string(split);
      j["checkpoint"] = result.checkpoint.filename().string();
      j["checkpoint_step"] = ck.state.step;
      j["report"] = report.to_json();
      write_text(dir / "report.json", j.dump(2) + "\n");
      write_text(dir / "report.txt", report.table(to_string(config.train.branch)));
      say(options, "eval on " + to_string(split) + ":\n" + report.table(to_string(config.train.branch)));
      result.report = report;
    }

    if (stages.count(Stage::kCam)) {
      if (!ck.model.has_detection() || config.train.branch == BranchMode::kNoDet)
        throw CapabilityError("cam stage needs a trained detection branch");
      const fs::path dir = run_dir / "cam";
      fs::create_directories(dir);
      ordered_json entries = ordered_json::array();
      int rendered = 0, hits = 0;
      for (std::size_t i = 0; i < samples.size() && rendered < config.eval.cam_samples; ++i) {
        if (samples[i].label != 1) continue;
        const CamMap map = cam(ck.model, samples[i].image);
        const auto [in, out] = cam_inside_outside(map, samples[i].mask);
        char stem[32];
        std::snprintf(stem, sizeof stem, "cam-%03d", rendered);
        write_cam_png(dir / (std::string(stem) + "-heat.png"),
                      dir / (std::string(stem) + "-overlay.png"), map, samples[i].image);
        entries.push_back({{"file", stem},
                           {"group_id", samples[i].group_id},
                           {"source_tag", samples[i].source_tag},
                           {"mean_inside", in},
                           {"mean_outside", out},
                           {"degenerate", map.degenerate}});
        hits += in > out;
        ++rendered;
      }
      ordered_json j;
      j["split"] = to_string(split);
      j["samples"] = rendered;
      j["inside_exceeds_outside"] = hits;
      j["hit_rate"] = rendered ? static_cast<double>(hits) / rendered : 0.0;
      j["entries"] = std::move(entries);
      write_text(dir / "summary.json", j.dump(2) + "\n");
      if (rendered) result.cam_hit_rate = static_cast<double>(hits) / rendered;
    }
  }
  return result;
}

}  // namespace forgeseg
