#include "forgeseg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "forgeseg/errors.hpp"
#include "forgeseg/rng.hpp"

namespace forgeseg {

using ordered_json = nlohmann::ordered_json;

std::string to_string(BranchMode mode) {
  switch (mode) {
    case BranchMode::kJoint: return "joint";
    case BranchMode::kNoSeg: return "no-seg";
    case BranchMode::kNoDet: return "no-det";
  }
  return "joint";
}

BranchMode branch_mode_from_string(const std::string& s) {
  if (s == "joint") return BranchMode::kJoint;
  if (s == "no-seg") return BranchMode::kNoSeg;
  if (s == "no-det") return BranchMode::kNoDet;
  throw ValidationError("train.branch: unknown mode '" + s + "' (expected joint, no-seg or no-det)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ValidationError("train.optimizer: unknown optimizer '" + s + "' (expected adam or sgd)");
}

std::string to_string(SegLossScope scope) {
  return scope == SegLossScope::kAllSamples ? "all" : "forgery-only";
}

SegLossScope seg_loss_scope_from_string(const std::string& s) {
  if (s == "all") return SegLossScope::kAllSamples;
  if (s == "forgery-only") return SegLossScope::kForgeryOnly;
  throw ValidationError("train.seg_scope: unknown scope '" + s + "' (expected all or forgery-only)");
}

void TrainConfig::validate() const {
  if (steps < 1) throw ValidationError("train.steps: must be positive");
  if (batch_size < 1) throw ValidationError("train.batch_size: must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ValidationError("train.learning_rate: must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ValidationError("train.beta1: must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ValidationError("train.beta2: must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ValidationError("train.adam_eps: must be positive");
  if (eval_interval < 0) throw ValidationError("train.eval_interval: must be non-negative");
  if (checkpoint_interval < 0)
    throw ValidationError("train.checkpoint_interval: must be non-negative");
  weights.validate();
}

void TrainConfig::validate_against(const ModelConfig& model) const {
  if (branch != BranchMode::kNoDet && !model.detection)
    throw ValidationError("train.branch: mode '" + to_string(branch) +
                          "' trains detection but model.branches lacks it");
  if (branch != BranchMode::kNoSeg && !model.segmentation)
    throw ValidationError("train.branch: mode '" + to_string(branch) +
                          "' trains segmentation but model.branches lacks it");
}

ordered_json TrainLogRecord::to_json() const {
  ordered_json j;
  j["step"] = step;
  j["l_total"] = l_total;
  if (l_det) j["l_det"] = *l_det;
  if (l_seg) j["l_seg"] = *l_seg;
  j["lr"] = learning_rate;
  j["wall_time"] = wall_time;
  return j;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size,
                                                   std::uint64_t seed, std::int64_t epoch) {
  if (batch_size < 1) throw ValidationError("make_batches: batch_size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(derive_seed(seed, "batches"), static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size)
    out.emplace_back(order.begin() + b, order.begin() + std::min(n, b + batch_size));
  return out;
}

Batch assemble_batch(const std::vector<ImageSample>& samples, std::span<const std::size_t> indices) {
  Batch b;
  b.images = stack_images(samples, indices);
  const Shape s = b.images.shape();
  b.masks = Tensor<float>({s.n, 1, s.h, s.w});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const ImageSample& smp = samples[indices[i]];
    b.masks.set_sample(static_cast<int>(i), smp.mask.to_tensor<float>(), 0);
    b.labels.push_back(smp.label);
  }
  return b;
}

namespace {

bool mode_trains_det(BranchMode m) { return m != BranchMode::kNoDet; }
bool mode_trains_seg(BranchMode m) { return m != BranchMode::kNoSeg; }

struct Evaluated {
  LossReport report;
  ForwardResult<float> fwd;
};

Evaluated compute_loss(Model<float>& model, const Batch& batch, const TrainConfig& config,
                       nn::Mode mode) {
  const bool det = mode_trains_det(config.branch);
  const bool seg = mode_trains_seg(config.branch);
  Evaluated e;
  e.fwd = model.forward(batch.images, mode, det, seg);
  e.report.batch_size = static_cast<int>(batch.labels.size());
  if (det) e.report.det = det_loss<float>(e.fwd.p, batch.labels);
  if (seg) e.report.seg = seg_loss(e.fwd.S, batch.masks, config.seg_scope, batch.labels);
  LossWeights w = config.weights;
  if (!det) w.det = 0.0;
  if (!seg) w.seg = 0.0;
  e.report.total = total_loss(e.report.det, e.report.seg, w);
  return e;
}

double now_seconds() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

LossReport batch_loss(Model<float>& model, const Batch& batch, const TrainConfig& config,
                      nn::Mode mode) {
  return compute_loss(model, batch, config, mode).report;
}

LossReport dataset_loss(Model<float>& model, const std::vector<ImageSample>& samples,
                        const TrainConfig& config, int batch_size) {
  if (samples.empty()) throw ValidationError("dataset_loss: no samples");
  LossReport sum;
  for (std::size_t b = 0; b < samples.size(); b += batch_size) {
    std::vector<std::size_t> idx(std::min(samples.size(), b + batch_size) - b);
    std::iota(idx.begin(), idx.end(), b);
    const LossReport r = batch_loss(model, assemble_batch(samples, idx), config, nn::Mode::kEval);
    sum.total += r.total * r.batch_size;
    sum.det += r.det * r.batch_size;
    sum.seg += r.seg * r.batch_size;
    sum.batch_size += r.batch_size;
  }
  sum.total /= sum.batch_size;
  sum.det /= sum.batch_size;
  sum.seg /= sum.batch_size;
  return sum;
}

Trainer::Trainer(Model<float>& model, TrainConfig config) : model_(model), config_(config) {
  config_.validate();
  config_.validate_against(model_.config());
  for (auto& p : model_.parameters()) {
    const bool det = p.name.rfind("detection.", 0) == 0;
    const bool seg = p.name.rfind("segmentation.", 0) == 0;
    if ((det && !trains_detection()) || (seg && !trains_segmentation())) continue;
    params_.push_back(p);
  }
  state_.cursor.seed = config_.seed;
  clock_origin_ = now_seconds();
}

bool Trainer::trains_detection() const { return mode_trains_det(config_.branch); }
bool Trainer::trains_segmentation() const { return mode_trains_seg(config_.branch); }

void Trainer::restore(const TrainingState& state) {
  if (state.cursor.seed != config_.seed)
    throw ValidationError("resume: checkpoint data order was seeded with " +
                          std::to_string(state.cursor.seed) + ", config has " +
                          std::to_string(config_.seed));
  for (const auto& p : params_) {
    for (const auto* moments : {&state.optimizer.m, &state.optimizer.v}) {
      auto it = moments->find(p.name);
      if (config_.optimizer == OptimizerKind::kAdam && state.optimizer.t > 0 &&
          (it == moments->end() || !(it->second.shape() == p.value->shape())))
        throw IntegrityError("resume: optimizer state missing or misshapen for " + p.name);
    }
  }
  state_ = state;
}

void Trainer::apply_update() {
  const double lr = config_.learning_rate;
  if (config_.optimizer == OptimizerKind::kSgd) {
    for (auto& p : params_) {
      auto w = p.value->values();
      auto g = p.grad->values();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(w[i] - lr * g[i]);
    }
    return;
  }
  AdamState& st = state_.optimizer;
  ++st.t;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  for (auto& p : params_) {
    auto& m = st.m.try_emplace(p.name, p.value->shape()).first->second;
    auto& v = st.v.try_emplace(p.name, p.value->shape()).first->second;
    auto w = p.value->values();
    auto g = p.grad->values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      w[i] = static_cast<float>(w[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + config_.adam_eps));
    }
  }
}

TrainLogRecord Trainer::step(const Batch& batch) {
  auto e = compute_loss(model_, batch, config_, nn::Mode::kTrain);
  const std::int64_t k = state_.step + 1;
  if (!std::isfinite(e.report.total))
    throw NumericalError("non-finite loss at step " + std::to_string(k));

  const float w_det = static_cast<float>(config_.weights.det);
  const float w_seg = static_cast<float>(config_.weights.seg);
  Tensor<float> d_det, d_seg;
  if (trains_detection()) {
    auto g = det_loss_logit_grad<float>(e.fwd.p, batch.labels);
    for (auto& x : g) x *= w_det;
    const int n = static_cast<int>(g.size());
    d_det = Tensor<float>({n, 1, 1, 1}, std::move(g));
  }
  if (trains_segmentation()) {
    d_seg = seg_loss_logit_grad(e.fwd.S, batch.masks, config_.seg_scope, batch.labels);
    for (auto& x : d_seg.storage()) x *= w_seg;
  }
  model_.zero_grad();
  model_.backward(d_det, d_seg);
  apply_update();
  state_.step = k;

  TrainLogRecord rec;
  rec.step = k;
  rec.l_total = e.report.total;
  if (trains_detection()) rec.l_det = e.report.det;
  if (trains_segmentation()) rec.l_seg = e.report.seg;
  rec.learning_rate = config_.learning_rate;
  rec.wall_time = now_seconds() - clock_origin_;
  return rec;
}

TrainResult Trainer::run(const std::vector<ImageSample>& train,
                         const std::vector<ImageSample>& val,
                         const std::filesystem::path& out_dir, const EvalOptions& eval) {
  if (train.empty()) throw ValidationError("train: the train split is empty");
  TrainResult result;
  const bool write = !out_dir.empty();
  std::ofstream log_os, eval_os;
  std::string last_good = "none written";
  if (write) {
    std::filesystem::create_directories(out_dir);
    const auto flags = state_.step > 0 ? std::ios::app : std::ios::trunc;
    log_os.open(out_dir / "train_log.jsonl", std::ios::out | flags);
    eval_os.open(out_dir / "eval_log.jsonl", std::ios::out | flags);
    if (!log_os || !eval_os) throw IoError("cannot write logs under '" + out_dir.string() + "'");
  }

  EvalOptions eval_opts = eval;
  eval_opts.detection = trains_detection();
  eval_opts.segmentation = trains_segmentation();
  double best_score = -1.0;

  const auto n = train.size();
  const std::int64_t per_epoch =
      static_cast<std::int64_t>((n + config_.batch_size - 1) / config_.batch_size);
  std::int64_t cached_epoch = -1;
  std::vector<std::vector<std::size_t>> batches;

  auto save = [&](const std::filesystem::path& p) {
    save_checkpoint(p, model_, state_);
    last_good = p.string();
  };

  while (state_.step < config_.steps) {
    const std::int64_t epoch = state_.step / per_epoch;
    const std::int64_t pos = state_.step % per_epoch;
    if (epoch != cached_epoch) {
      batches = make_batches(n, config_.batch_size, config_.seed, epoch);
      cached_epoch = epoch;
    }
    TrainLogRecord rec;
    try {
      rec = step(assemble_batch(train, batches[pos]));
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + "; last good checkpoint: " + last_good);
    }
    state_.cursor = {config_.seed, epoch, pos + 1};
    if (write) log_os << rec.to_json().dump() << '\n' << std::flush;
    result.log.push_back(rec);

    const std::int64_t k = state_.step;
    const bool last = k == config_.steps;
    if (!val.empty() && ((config_.eval_interval > 0 && k % config_.eval_interval == 0) || last)) {
      const MetricsReport r = evaluate(model_, val, eval_opts);
      const double score = r.has_segmentation ? r.iou_all() : r.acc_all();
      if (write) {
        ordered_json j;
        j["step"] = k;
        j["val"] = r.to_json();
        eval_os << j.dump() << '\n' << std::flush;
      }
      if (score > best_score) {
        best_score = score;
        result.best_val = r;
        result.best_step = k;
        if (write) save(out_dir / "best.ckpt");
      }
    }
    if (write && config_.checkpoint_interval > 0 && k % config_.checkpoint_interval == 0 && !last) {
      char name[32];
      std::snprintf(name, sizeof name, "step-%06lld.ckpt", static_cast<long long>(k));
      save(out_dir / name);
    }
  }
  if (write) {
    save(out_dir / "last.ckpt");
    result.last_checkpoint = out_dir / "last.ckpt";
  }
  return result;
}

}  // namespace forgeseg
