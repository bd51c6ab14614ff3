#include <doctest.h>

#include <fstream>

#include "forgeseg/config.hpp"
#include "forgeseg/errors.hpp"
#include "test_util.hpp"

using namespace forgeseg;
using nlohmann::json;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

RunConfig tiny_run(std::uint64_t seed) {
  json j = {
      {"seed", seed},
      {"data", {{"num_samples", 24}, {"image_size", 16}, {"val", 4}, {"test", 6}}},
      {"model", {{"decoder_stages", 2}, {"base_channels", 3}, {"feature_channels", 6}, {"det_hidden", 6}}},
      {"train", {{"steps", 6}, {"batch_size", 4}, {"learning_rate", 1e-3}}},
      {"eval", {{"cam_samples", 3}}},
  };
  return run_config_from_json(j);
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("minimal config takes defaults and round trips") {
  const RunConfig c = run_config_from_json(json::object());
  CHECK(c.seed == 0);
  CHECK(c.data.image_size == 64);
  CHECK(c.model.input_h == 64);
  CHECK(c.train.learning_rate == 2e-4);
  CHECK(c.train.batch_size == 16);
  CHECK(c.eval.threshold_det == 0.5);
  CHECK(c.eval.threshold_seg == 0.5);

  const RunConfig t = tiny_run(5);
  CHECK(t.model.input_h == 16);  // follows data.image_size
  const RunConfig back = run_config_from_json(json::parse(dump_config(t)));
  CHECK(dump_config(back) == dump_config(t));
  CHECK(back.model.hash() == t.model.hash());
  CHECK(back.train.seed == t.train.seed);
}

TEST_CASE("train seed is derived per stage") {
  const RunConfig a = tiny_run(1), b = tiny_run(2);
  CHECK(a.train.seed == stage_seed(1, "train"));
  CHECK(a.train.seed != b.train.seed);
  std::set<std::uint64_t> seen;
  for (const char* s : {"synth", "model", "train", "eval", "cam"}) seen.insert(stage_seed(1, s));
  CHECK(seen.size() == 5);
  CHECK(stage_seed(1, "synth") == stage_seed(1, "synth"));
}

TEST_CASE("image size mismatch names both keys") {
  json j = {{"data", {{"image_size", 32}}}, {"model", {{"input_size", {64, 64, 3}}}}};
  const std::string msg = error_of([&] { run_config_from_json(j); });
  CHECK(msg.find("model.input_size") != std::string::npos);
  CHECK(msg.find("data.image_size") != std::string::npos);
}

TEST_CASE("unknown keys suggest the nearest valid one") {
  const std::string msg = error_of([] { run_config_from_json({{"data", {{"colour", 3}}}}); });
  CHECK(msg.find("data.colour") != std::string::npos);
  CHECK(msg.find("nearest valid key") != std::string::npos);

  const std::string top = error_of([] { run_config_from_json({{"traim", json::object()}}); });
  CHECK(top.find("'train'") != std::string::npos);

  const std::string lr = error_of([] { run_config_from_json({{"train", {{"learning_rat", 0.1}}}}); });
  CHECK(lr.find("'train.learning_rate'") != std::string::npos);

  CHECK(edit_distance("kitten", "sitting") == 3);
  CHECK(edit_distance("", "abc") == 3);
  CHECK(edit_distance("same", "same") == 0);
}

TEST_CASE("type mismatches name the key") {
  const std::string msg = error_of([] { run_config_from_json({{"train", {{"steps", "many"}}}}); });
  CHECK(msg.find("train.steps") != std::string::npos);
  CHECK(!error_of([] { run_config_from_json({{"model", {{"input_size", {64, 64}}}}}); }).empty());
  CHECK(!error_of([] { run_config_from_json({{"model", {{"branches", {"classify"}}}}}); }).empty());
  CHECK(!error_of([] { run_config_from_json({{"train", {{"branch", "both"}}}}); }).empty());
  CHECK(!error_of([] { run_config_from_json({{"eval", {{"threshold_det", 1.0}}}}); }).empty());
  CHECK(!error_of([] { run_config_from_json(json::array()); }).empty());
}

TEST_CASE("branch list must cover the training mode") {
  json j = {{"model", {{"branches", {"detection"}}}}};
  CHECK(!error_of([&] { run_config_from_json(j); }).empty());
  j["train"] = {{"branch", "no-seg"}};
  const RunConfig c = run_config_from_json(j);
  CHECK(!c.model.segmentation);
}

TEST_CASE("environment overrides") {
  json j = {{"train", {{"steps", 10}}}};
  apply_env_overrides(j, {{"FORGESEG__TRAIN__STEPS", "50"},
                          {"FORGESEG__SEED", "3"},
                          {"FORGESEG__MODEL__ENCODER_KIND", "xcep-style"},
                          {"UNRELATED", "1"}});
  const RunConfig c = run_config_from_json(j);
  CHECK(c.train.steps == 50);
  CHECK(c.seed == 3);
  CHECK(c.model.encoder_kind == EncoderKind::kSeparable);

  json bad = json::object();
  apply_env_overrides(bad, {{"FORGESEG__TRAIN__STEPZ", "5"}});
  CHECK(error_of([&] { run_config_from_json(bad); }).find("train.stepz") != std::string::npos);

  testutil::ScratchDir dir("cfg");
  { std::ofstream(dir / "c.json") << dump_config(tiny_run(1)); }
  CHECK(load_config(dir / "c.json", false).train.steps == 6);
  CHECK_THROWS_AS(load_config(dir / "missing.json", false), IoError);
  { std::ofstream(dir / "broken.json") << "{\"seed\": "; }
  CHECK_THROWS_AS(load_config(dir / "broken.json", false), ValidationError);
}

TEST_CASE("stage lists") {
  CHECK(parse_stages("synth,train") == std::set<Stage>{Stage::kSynth, Stage::kTrain});
  CHECK(parse_stages("cam, eval").size() == 2);
  CHECK(parse_stages("all").size() == 4);
  CHECK_THROWS_AS(parse_stages("synth,deploy"), ValidationError);
  CHECK_THROWS_AS(parse_stages(""), ValidationError);
}

TEST_CASE("pipeline refuses to run stages without their inputs") {
  testutil::ScratchDir dir("pipe_dep");
  PipelineOptions quiet;
  quiet.quiet = true;
  const RunConfig c = tiny_run(1);
  CHECK_THROWS_AS(run_pipeline(c, {Stage::kTrain}, dir.path(), quiet), DependencyError);
  CHECK_THROWS_AS(run_pipeline(c, {Stage::kSynth, Stage::kEval}, dir.path(), quiet), DependencyError);
  // Nothing was produced by the failed calls.
  CHECK(!std::filesystem::exists(dir / "data"));
  PipelineOptions ck = quiet;
  ck.checkpoint = dir / "nope.ckpt";
  CHECK_THROWS_AS(run_pipeline(c, {Stage::kSynth, Stage::kEval}, dir.path(), ck), DependencyError);
}

TEST_CASE("pipeline runs are deterministic and produce every artifact") {
  testutil::ScratchDir a("pipe_a"), b("pipe_b");
  PipelineOptions quiet;
  quiet.quiet = true;
  const RunConfig c = tiny_run(4);
  const auto stages = parse_stages("synth,train,eval,cam");
  const auto ra = run_pipeline(c, stages, a.path(), quiet);
  run_pipeline(c, stages, b.path(), quiet);
  REQUIRE(ra.report.has_value());
  CHECK(ra.cam_hit_rate.has_value());
  CHECK(ra.report->all.count == 6);  // test split

  for (const char* f : {"config.json", "data/manifest.jsonl", "train/last.ckpt", "eval/report.json",
                        "cam/summary.json", "cam/cam-000-heat.png", "cam/cam-002-overlay.png"}) {
    CHECK_MESSAGE(std::filesystem::exists(a / f), std::string(f));
    CHECK_MESSAGE(testutil::slurp(a / f) == testutil::slurp(b / f), std::string(f));
  }
  const auto report = json::parse(testutil::slurp(a / "eval/report.json"));
  CHECK(report["split"] == "test");
  CHECK(report["report"].contains("acc_all"));

  // Eval alone reuses the trained checkpoint and reproduces the report.
  std::filesystem::remove_all(a / "eval");
  run_pipeline(c, {Stage::kEval}, a.path(), quiet);
  CHECK(testutil::slurp(a / "eval/report.json") == testutil::slurp(b / "eval/report.json"));

  // A checkpoint from a different architecture is rejected.
  RunConfig wider = c;
  wider.model.feature_channels = 12;
  CHECK_THROWS_AS(run_pipeline(wider, {Stage::kEval}, a.path(), quiet), IntegrityError);
}

}  // TEST_SUITE
