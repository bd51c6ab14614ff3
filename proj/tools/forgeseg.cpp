// forgeseg command line: corpus synthesis, splitting, training, evaluation,
// CAM rendering and run comparison.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "forgeseg/config.hpp"
#include "forgeseg/errors.hpp"

namespace fs = std::filesystem;
using namespace forgeseg;
using ordered_json = nlohmann::ordered_json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--config", c.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Global seed; overrides the config");
  auto* out = cmd->add_option("--out", c.out, "Output path");
  if (out_required) out->required();
}

RunConfig resolve(const Common& c) {
  RunConfig cfg;
  if (!c.config.empty()) {
    cfg = load_config(c.config);
  } else {
    nlohmann::json j = nlohmann::json::object();
    apply_env_overrides(j, environment_overrides());
    cfg = run_config_from_json(j);
  }
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.train.seed = stage_seed(cfg.seed, "train");
  }
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + p.string() + "'");
  os << text;
}

MetricsReport read_report(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("cannot read report '" + p.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
  return MetricsReport::from_json(j.contains("report") ? j["report"] : j);
}

std::optional<Split> parse_split(const std::string& s) {
  if (s == "auto" || s == "all") return std::nullopt;
  return split_from_string(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Forgery detection and manipulated-region segmentation toolkit"};
  app.require_subcommand(1);

  Common synth_c, split_c, train_c, eval_c, cam_c, cmp_c, run_c;

  auto* synth = app.add_subcommand("synth", "Generate the procedural desk corpus");
  add_common(synth, synth_c);

  auto* split = app.add_subcommand("split", "Reassign splits of a manifest by record order");
  add_common(split, split_c, false);
  std::string split_manifest;
  std::size_t split_train = 0, split_test = 0;
  split->add_option("--manifest", split_manifest, "Manifest to rewrite")->required()->check(CLI::ExistingFile);
  split->add_option("--train", split_train, "Leading records assigned to train")->required();
  split->add_option("--test", split_test, "Trailing records assigned to test")->required();

  auto* train = app.add_subcommand("train", "Train a model on a manifest's train split");
  add_common(train, train_c);
  std::string train_manifest, train_branch;
  train->add_option("--manifest", train_manifest)->required()->check(CLI::ExistingFile);
  train->add_option("--branch", train_branch, "joint | no-seg | no-det");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  add_common(eval, eval_c);
  std::string eval_manifest, eval_ckpt, eval_split = "auto";
  eval->add_option("--manifest", eval_manifest)->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("--split", eval_split, "train | val | test | all | auto (test, else val, else train)");

  auto* camc = app.add_subcommand("cam", "Render a Grad-CAM++ heat map for one image");
  add_common(camc, cam_c);
  std::string cam_ckpt, cam_image, cam_mask;
  camc->add_option("--checkpoint", cam_ckpt)->required()->check(CLI::ExistingFile);
  camc->add_option("--image", cam_image)->required()->check(CLI::ExistingFile);
  camc->add_option("--mask", cam_mask, "Ground-truth mask; prints inside/outside means")
      ->check(CLI::ExistingFile);

  auto* cmp = app.add_subcommand("compare", "Side-by-side table of metrics reports");
  add_common(cmp, cmp_c, false);
  std::vector<std::string> cmp_reports, cmp_labels;
  cmp->add_option("--reports", cmp_reports, "report.json files")->required();
  cmp->add_option("--labels", cmp_labels, "Row labels (default: file names)")->delimiter(',');

  auto* run = app.add_subcommand("run", "Run pipeline stages into one run directory");
  add_common(run, run_c);
  std::string run_stages = "synth,train,eval,cam", run_ckpt;
  run->add_option("--stages", run_stages, "Comma separated subset of synth,train,eval,cam");
  run->add_option("--checkpoint", run_ckpt, "Checkpoint for eval/cam without a train stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) {
      const RunConfig cfg = resolve(synth_c);
      const auto m = build_desk_corpus(cfg.data, stage_seed(cfg.seed, "synth"), synth_c.out);
      std::cout << "wrote " << m.records.size() << " records to "
                << (fs::path(synth_c.out) / kManifestName).string() << '\n';
    } else if (split->parsed()) {
      DatasetManifest m = read_manifest(split_manifest);
      if (split_train + split_test > m.records.size())
        throw ValidationError("split: --train " + std::to_string(split_train) + " + --test " +
                              std::to_string(split_test) + " exceeds " +
                              std::to_string(m.records.size()) + " records");
      assign_splits(m, split_train, split_test);
      const fs::path out = split_c.out.empty() ? fs::path(split_manifest) : fs::path(split_c.out);
      write_manifest(out, m);
      std::cout << "train " << m.count(Split::kTrain) << ", val " << m.count(Split::kVal)
                << ", test " << m.count(Split::kTest) << " -> " << out.string() << '\n';
    } else if (train->parsed()) {
      RunConfig cfg = resolve(train_c);
      if (!train_branch.empty()) cfg.train.branch = branch_mode_from_string(train_branch);
      cfg.validate();
      const DatasetManifest m = read_manifest(train_manifest);
      const fs::path root = fs::path(train_manifest).parent_path();
      const auto tr = load_samples(m, root, Split::kTrain);
      const auto va = load_samples(m, root, Split::kVal);
      Model<float> model(cfg.model, stage_seed(cfg.seed, "model"));
      Trainer trainer(model, cfg.train);
      fs::create_directories(train_c.out);
      write_text(fs::path(train_c.out) / "config.json", dump_config(cfg));
      const TrainResult r = trainer.run(tr, va, train_c.out, cfg.eval.options());
      std::cout << "trained " << r.log.size() << " steps; final l_total "
                << r.log.back().l_total << "; checkpoint " << r.last_checkpoint.string() << '\n';
    } else if (eval->parsed()) {
      const RunConfig cfg = resolve(eval_c);
      const DatasetManifest m = read_manifest(eval_manifest);
      const fs::path root = fs::path(eval_manifest).parent_path();
      Checkpoint ck = load_checkpoint(eval_ckpt);
      std::optional<Split> split = parse_split(eval_split);
      if (eval_split == "auto") split = evaluation_split(m);
      const auto samples = load_samples(m, root, split);
      const MetricsReport report = evaluate(ck.model, samples, cfg.eval.options());
      ordered_json j;
      j["split"] = split ? to_string(*split) : "all";
      j["checkpoint"] = fs::path(eval_ckpt).filename().string();
      j["checkpoint_step"] = ck.state.step;
      j["report"] = report.to_json();
      write_text(fs::path(eval_c.out) / "report.json", j.dump(2) + "\n");
      write_text(fs::path(eval_c.out) / "report.txt", report.table());
      std::cout << report.table();
    } else if (camc->parsed()) {
      Checkpoint ck = load_checkpoint(cam_ckpt);
      const Image image = read_png(cam_image);
      const CamMap map = cam(ck.model, image);
      const fs::path out(cam_c.out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      const fs::path overlay = out.parent_path() / (out.stem().string() + "-overlay.png");
      write_cam_png(out, overlay, map, image);
      std::cout << "heat map " << out.string() << ", overlay " << overlay.string()
                << (map.degenerate ? " (constant activation map)" : "") << '\n';
      if (!cam_mask.empty()) {
        const auto [in, outside] = cam_inside_outside(map, read_mask_png(cam_mask));
        std::cout << "mean inside " << in << ", outside " << outside << '\n';
      }
    } else if (cmp->parsed()) {
      std::vector<MetricsReport> reports;
      for (const auto& p : cmp_reports) reports.push_back(read_report(p));
      if (cmp_labels.empty())
        for (const auto& p : cmp_reports) cmp_labels.push_back(fs::path(p).parent_path().filename().string());
      const ComparisonTable t = compare_runs(reports, cmp_labels);
      if (!cmp_c.out.empty()) {
        write_text(fs::path(cmp_c.out) / "comparison.txt", t.text);
        write_text(fs::path(cmp_c.out) / "comparison.json", t.json.dump(2) + "\n");
      }
      std::cout << t.text;
    } else if (run->parsed()) {
      const RunConfig cfg = resolve(run_c);
      PipelineOptions opts;
      if (!run_ckpt.empty()) opts.checkpoint = fs::path(run_ckpt);
      const PipelineResult r = run_pipeline(cfg, parse_stages(run_stages), run_c.out, opts);
      if (r.cam_hit_rate)
        std::cout << "cam: inside > outside on " << *r.cam_hit_rate * 100.0 << "% of fake samples\n";
      std::cout << "run directory " << r.run_dir.string() << '\n';
    }
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return 2;
  } catch (const DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
