#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>

#include "forgeseg/checkpoint.hpp"
#include "forgeseg/corpus.hpp"
#include "forgeseg/errors.hpp"
#include "forgeseg/trainer.hpp"
#include "test_util.hpp"

using namespace forgeseg;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.input_h = c.input_w = 16;
  c.decoder_stages = 2;
  c.base_channels = 3;
  c.feature_channels = 6;
  c.det_hidden = 6;
  return c;
}

const std::vector<ImageSample>& tiny_corpus() {
  static const std::vector<ImageSample> samples = [] {
    CorpusConfig c;
    c.num_samples = 24;
    c.image_size = 16;
    return synthesize_corpus(c, 5);
  }();
  return samples;
}

TrainConfig tiny_train(int steps) {
  TrainConfig t;
  t.steps = steps;
  t.batch_size = 5;
  t.learning_rate = 1e-3;
  t.seed = 99;
  return t;
}

std::vector<float> flat_params(Model<float>& m) {
  std::vector<float> out;
  for (auto& p : m.parameters()) out.insert(out.end(), p.value->storage().begin(), p.value->storage().end());
  return out;
}

std::vector<float> flat_prefix(Model<float>& m, const std::string& prefix) {
  std::vector<float> out;
  for (auto& p : m.parameters())
    if (p.name.rfind(prefix, 0) == 0)
      out.insert(out.end(), p.value->storage().begin(), p.value->storage().end());
  return out;
}

std::vector<float> flat_buffers(Model<float>& m, const std::string& prefix) {
  std::vector<float> out;
  for (auto& b : m.buffers())
    if (b.name.rfind(prefix, 0) == 0)
      out.insert(out.end(), b.value->storage().begin(), b.value->storage().end());
  return out;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("batch partition covers every index once") {
  const auto b = make_batches(10, 4, 1, 0);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size() == 4);
  CHECK(b[1].size() == 4);
  CHECK(b[2].size() == 2);
  std::multiset<std::size_t> seen;
  for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
  CHECK(seen.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(seen.count(i) == 1);

  CHECK(make_batches(10, 4, 1, 0) == b);
  CHECK(make_batches(10, 4, 1, 1) != b);
  CHECK(make_batches(10, 4, 2, 0) != b);
  CHECK(make_batches(3, 16, 1, 0).size() == 1);
  CHECK(make_batches(0, 4, 1, 0).empty());
  CHECK_THROWS_AS(make_batches(10, 0, 1, 0), ValidationError);
}

TEST_CASE("assembled batch mirrors the samples") {
  const auto& s = tiny_corpus();
  const std::vector<std::size_t> idx = {3, 0, 7};
  const Batch b = assemble_batch(s, idx);
  CHECK(b.images.shape() == Shape{3, 3, 16, 16});
  CHECK(b.masks.shape() == Shape{3, 1, 16, 16});
  for (int i = 0; i < 3; ++i) {
    CHECK(b.labels[i] == s[idx[i]].label);
    const auto img = b.images.sample(i);
    CHECK(std::equal(img.begin(), img.end(), s[idx[i]].image.storage().begin()));
    const auto msk = b.masks.sample(i);
    for (std::size_t k = 0; k < msk.size(); ++k) REQUIRE(msk[k] == s[idx[i]].mask[k]);
  }
}

TEST_CASE("loss report total is the weighted sum") {
  Model<float> m(tiny_model(), 1);
  const std::vector<std::size_t> idx = {0, 1, 2, 3, 4, 5};
  const Batch b = assemble_batch(tiny_corpus(), idx);
  TrainConfig t = tiny_train(1);
  t.weights = {0.3, 2.5};
  const LossReport r = batch_loss(m, b, t);
  CHECK(r.total == doctest::Approx(0.3 * r.det + 2.5 * r.seg).epsilon(1e-12));
  CHECK(r.batch_size == 6);
  t.branch = BranchMode::kNoSeg;
  const LossReport d = batch_loss(m, b, t);
  CHECK(d.total == doctest::Approx(0.3 * d.det));
  t.branch = BranchMode::kNoDet;
  const LossReport s = batch_loss(m, b, t);
  CHECK(s.total == doctest::Approx(2.5 * s.seg));
}

TEST_CASE("config validation") {
  TrainConfig t;
  CHECK_NOTHROW(t.validate());
  t.steps = 0;
  CHECK_THROWS_AS(t.validate(), ValidationError);
  t = TrainConfig{};
  t.learning_rate = -1;
  CHECK_THROWS_AS(t.validate(), ValidationError);
  t = TrainConfig{};
  t.weights.det = -1;
  CHECK_THROWS_AS(t.validate(), ValidationError);

  ModelConfig det_only = tiny_model();
  det_only.segmentation = false;
  TrainConfig joint;
  CHECK_THROWS_AS(joint.validate_against(det_only), ValidationError);
  joint.branch = BranchMode::kNoSeg;
  CHECK_NOTHROW(joint.validate_against(det_only));
  joint.branch = BranchMode::kNoDet;
  CHECK_THROWS_AS(joint.validate_against(det_only), ValidationError);
  Model<float> m(det_only, 1);
  CHECK_THROWS_AS(Trainer(m, TrainConfig{}), ValidationError);

  CHECK(branch_mode_from_string("no-seg") == BranchMode::kNoSeg);
  CHECK_THROWS_AS(branch_mode_from_string("seg-only"), ValidationError);
}

TEST_CASE("empty train split is rejected") {
  Model<float> m(tiny_model(), 1);
  Trainer tr(m, tiny_train(3));
  CHECK_THROWS_AS(tr.run({}, {}), ValidationError);
}

TEST_CASE("one update is deterministic") {
  const std::vector<std::size_t> idx = {0, 1, 2, 3};
  const Batch b = assemble_batch(tiny_corpus(), idx);
  Model<float> m1(tiny_model(), 4), m2(tiny_model(), 4);
  Trainer t1(m1, tiny_train(1)), t2(m2, tiny_train(1));
  const auto r1 = t1.step(b);
  const auto r2 = t2.step(b);
  CHECK(r1.l_total == r2.l_total);
  CHECK(flat_params(m1) == flat_params(m2));
  Model<float> untouched(tiny_model(), 4);
  CHECK(flat_params(m1) != flat_params(untouched));
}

TEST_CASE("branch ablations leave the other head untouched") {
  const auto& s = tiny_corpus();
  for (auto mode : {BranchMode::kNoSeg, BranchMode::kNoDet}) {
    Model<float> fresh(tiny_model(), 8), m(tiny_model(), 8);
    TrainConfig t = tiny_train(6);
    t.branch = mode;
    Trainer tr(m, t);
    const auto res = tr.run(s, {});
    const std::string frozen = mode == BranchMode::kNoSeg ? "segmentation." : "detection.";
    const std::string trained = mode == BranchMode::kNoSeg ? "detection." : "segmentation.";
    CHECK(flat_prefix(m, frozen) == flat_prefix(fresh, frozen));
    CHECK(flat_buffers(m, frozen) == flat_buffers(fresh, frozen));
    CHECK(flat_prefix(m, trained) != flat_prefix(fresh, trained));
    CHECK(flat_prefix(m, "encoder.") != flat_prefix(fresh, "encoder."));
    for (const auto& r : res.log) {
      if (mode == BranchMode::kNoSeg) {
        CHECK(!r.l_seg.has_value());
        CHECK(r.l_det.has_value());
        CHECK(!r.to_json().contains("l_seg"));
      } else {
        CHECK(!r.l_det.has_value());
        CHECK(!r.to_json().contains("l_det"));
      }
    }
    // The optimizer tracks only the trained parameters.
    for (const auto& [name, _] : tr.state().optimizer.m) CHECK(name.rfind(frozen, 0) != 0);
  }
}

TEST_CASE("training runs are reproducible and write their artifacts") {
  testutil::ScratchDir a("train_a"), b("train_b");
  const auto& s = tiny_corpus();
  const std::vector<ImageSample> train(s.begin(), s.begin() + 18), val(s.begin() + 18, s.end());
  TrainConfig t = tiny_train(8);
  t.eval_interval = 4;
  t.checkpoint_interval = 4;
  for (const auto* dir : {&a, &b}) {
    Model<float> m(tiny_model(), 3);
    Trainer tr(m, t);
    const auto res = tr.run(train, val, dir->path());
    CHECK(res.log.size() == 8);
    CHECK(res.log.front().step == 1);
    CHECK(res.log.back().step == 8);
    CHECK(res.best_val.has_value());
  }
  for (const char* f : {"last.ckpt", "best.ckpt", "step-000004.ckpt", "eval_log.jsonl"})
    CHECK(testutil::slurp(a / f) == testutil::slurp(b / f));
  CHECK(!std::filesystem::exists(a / "step-000008.ckpt"));

  auto strip = [](const std::string& text) {
    std::vector<nlohmann::json> rows;
    std::istringstream is(text);
    for (std::string line; std::getline(is, line);) {
      auto j = nlohmann::json::parse(line);
      for (const char* k : {"step", "l_total", "l_det", "l_seg", "lr", "wall_time"}) CHECK(j.contains(k));
      j.erase("wall_time");
      rows.push_back(j);
    }
    return rows;
  };
  const auto la = strip(testutil::slurp(a / "train_log.jsonl"));
  CHECK(la.size() == 8);
  CHECK(la == strip(testutil::slurp(b / "train_log.jsonl")));
  CHECK(load_checkpoint(a / "last.ckpt").state.step == 8);
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
  testutil::ScratchDir dir("resume");
  const auto& s = tiny_corpus();
  // 24 samples in batches of 5: 5 batches per epoch, so the split lands mid-epoch.
  Model<float> straight(tiny_model(), 6);
  Trainer ts(straight, tiny_train(12));
  const auto full = ts.run(s, {});

  Model<float> first(tiny_model(), 6);
  Trainer tf(first, tiny_train(7));
  tf.run(s, {}, dir.path());
  Checkpoint ck = load_checkpoint(dir / "last.ckpt", tiny_model().hash());
  CHECK(ck.state.step == 7);
  CHECK(ck.state.cursor.epoch == 1);
  CHECK(ck.state.cursor.position == 2);
  Trainer tr(ck.model, tiny_train(12));
  tr.restore(ck.state);
  const auto rest = tr.run(s, {}, dir.path());
  REQUIRE(rest.log.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(rest.log[i].l_total == full.log[7 + i].l_total);
  CHECK(flat_params(ck.model) == flat_params(straight));
  CHECK(flat_buffers(ck.model, "") == flat_buffers(straight, ""));

  // Appended log now holds all 12 steps.
  std::istringstream is(testutil::slurp(dir / "train_log.jsonl"));
  int lines = 0;
  for (std::string line; std::getline(is, line);) ++lines;
  CHECK(lines == 12);

  TrainConfig other = tiny_train(12);
  other.seed = 100;
  Trainer wrong(ck.model, other);
  CHECK_THROWS_AS(wrong.restore(ck.state), ValidationError);
}

TEST_CASE("non-finite loss raises a numerical error") {
  testutil::ScratchDir dir("nan");
  std::vector<ImageSample> s = tiny_corpus();
  s[0].image[0] = std::numeric_limits<float>::quiet_NaN();
  Model<float> m(tiny_model(), 1);
  const std::vector<std::size_t> idx = {0, 1};
  Trainer direct(m, tiny_train(1));
  CHECK_THROWS_AS(direct.step(assemble_batch(s, idx)), NumericalError);

  TrainConfig t = tiny_train(20);
  t.checkpoint_interval = 1;
  Model<float> m2(tiny_model(), 1);
  Trainer tr(m2, t);
  try {
    tr.run(s, {}, dir.path());
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("last good checkpoint") != std::string::npos);
  }
}

TEST_CASE("short smoke run decreases the loss") {
  CorpusConfig c;
  c.num_samples = 64;
  c.image_size = 32;
  const auto s = synthesize_corpus(c, 12);
  ModelConfig mc;
  mc.input_h = mc.input_w = 32;
  mc.base_channels = 4;
  mc.feature_channels = 8;
  mc.det_hidden = 8;
  Model<float> m(mc, 2);
  TrainConfig t;  // default hyperparameters
  t.steps = 200;
  t.seed = 3;
  Trainer tr(m, t);
  const auto res = tr.run(s, {});
  // Non-overlapping 20-step windows; allow one uptick from batch noise.
  std::vector<double> means;
  for (int w = 0; w < 10; ++w) {
    double sum = 0;
    for (int i = 0; i < 20; ++i) sum += res.log[w * 20 + i].l_total;
    means.push_back(sum / 20);
  }
  int rises = 0;
  for (std::size_t i = 1; i < means.size(); ++i) rises += means[i] > means[i - 1];
  CHECK(rises <= 1);
  CHECK(means.back() < means.front());
}

}  // TEST_SUITE
