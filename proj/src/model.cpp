#include "forgeseg/model.hpp"

#include <algorithm>
#include <sstream>

#include "forgeseg/errors.hpp"

namespace forgeseg {

using nn::Mode;

std::string to_string(EncoderKind kind) {
  return kind == EncoderKind::kSeparable ? "separable" : "plain";
}

EncoderKind encoder_kind_from_string(const std::string& s) {
  if (s == "separable" || s == "xcep-style" || s == "xcep") return EncoderKind::kSeparable;
  if (s == "plain" || s == "unet-encoder" || s == "unet") return EncoderKind::kPlain;
  throw ValidationError("model.encoder_kind: unknown encoder '" + s +
                        "' (expected 'separable' or 'plain')");
}

void ModelConfig::validate() const {
  if (input_h <= 0 || input_w <= 0 || input_c <= 0)
    throw ValidationError("model.input_size: extents must be positive");
  if (decoder_stages < 1)
    throw ValidationError("model.decoder_stages: must be at least 1");
  const int stride = 1 << decoder_stages;
  if (input_h % stride != 0 || input_w % stride != 0 || input_h / stride < 1)
    throw ValidationError("model.decoder_stages: " + std::to_string(decoder_stages) +
                          " upsampling stages cannot reach input size " +
                          std::to_string(input_h) + "x" + std::to_string(input_w) +
                          " (extent must be a multiple of " + std::to_string(stride) + ")");
  if (base_channels < 1 || feature_channels < 1 || det_hidden < 1 || middle_blocks < 0)
    throw ValidationError("model: channel counts must be positive");
  if (!detection && !segmentation)
    throw ValidationError("model.branches: at least one of detection/segmentation is required");
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "encoder=" << to_string(encoder_kind) << ";input=" << input_h << "x" << input_w << "x"
     << input_c << ";decoder_stages=" << decoder_stages << ";base=" << base_channels
     << ";features=" << feature_channels << ";middle=" << middle_blocks
     << ";det_hidden=" << det_hidden << ";det=" << detection << ";seg=" << segmentation;
  return os.str();
}

std::string ModelConfig::hash() const {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << stable_hash(canonical());
  return os.str();
}

int ModelConfig::stage_channels(int stage) const {
  if (stage >= decoder_stages - 1) return feature_channels;
  return std::min(base_channels << stage, feature_channels);
}

template <typename T>
T clamp_probability(T p) {
  const T lo = static_cast<T>(kProbEpsilon);
  const T hi = static_cast<T>(1.0 - kProbEpsilon);
  return std::clamp(p, lo, hi);
}

namespace {

template <typename T>
void add_conv_bn_relu(nn::Sequential<T>& seq, int cin, int cout, int stride, Rng& rng) {
  seq.template add<nn::Conv2d<T>>(cin, cout, 3, stride, 1, false, rng);
  seq.template add<nn::BatchNorm2d<T>>(cout);
  seq.template add<nn::ReLU<T>>();
}

template <typename T>
void add_separable(nn::Sequential<T>& seq, int cin, int cout, Rng& rng) {
  seq.template add<nn::DepthwiseConv2d<T>>(cin, 3, 1, 1, rng);
  seq.template add<nn::Conv2d<T>>(cin, cout, 1, 1, 0, false, rng);
  seq.template add<nn::BatchNorm2d<T>>(cout);
}

template <typename T>
void build_plain_encoder(nn::Sequential<T>& enc, const ModelConfig& cfg, Rng& rng) {
  int cin = cfg.input_c;
  for (int s = 0; s < cfg.decoder_stages; ++s) {
    const int c = cfg.stage_channels(s);
    add_conv_bn_relu(enc, cin, c, 1, rng);
    add_conv_bn_relu(enc, c, c, 1, rng);
    enc.template add<nn::MaxPool2d<T>>(2, 2, 0);
    cin = c;
  }
}

// Entry conv, then one downsampling residual block per stage
// (sep-conv, sep-conv, 3x3/2 max-pool; strided 1x1 shortcut), then
// identity-shortcut middle blocks, then a closing ReLU.
template <typename T>
void build_separable_encoder(nn::Sequential<T>& enc, const ModelConfig& cfg, Rng& rng) {
  const int entry = cfg.base_channels;
  add_conv_bn_relu(enc, cfg.input_c, entry, 1, rng);
  int cin = entry;
  for (int s = 0; s < cfg.decoder_stages; ++s) {
    const int c = cfg.stage_channels(s);
    auto& block = enc.template add<nn::Residual<T>>();
    if (s > 0) block.main().template add<nn::ReLU<T>>();
    add_separable(block.main(), cin, c, rng);
    block.main().template add<nn::ReLU<T>>();
    add_separable(block.main(), c, c, rng);
    block.main().template add<nn::MaxPool2d<T>>(3, 2, 1);
    block.shortcut().template add<nn::Conv2d<T>>(cin, c, 1, 2, 0, false, rng);
    block.shortcut().template add<nn::BatchNorm2d<T>>(c);
    cin = c;
  }
  for (int m = 0; m < cfg.middle_blocks; ++m) {
    auto& block = enc.template add<nn::Residual<T>>();
    for (int i = 0; i < 3; ++i) {
      block.main().template add<nn::ReLU<T>>();
      add_separable(block.main(), cin, cin, rng);
    }
  }
  enc.template add<nn::ReLU<T>>();
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  // Each sub-network draws from its own stream so that dropping a branch
  // leaves the others' initial weights unchanged.
  Rng enc_rng(derive_seed(seed, "encoder"));
  Rng det_rng(derive_seed(seed, "detection"));
  Rng seg_rng(derive_seed(seed, "segmentation"));

  if (config_.encoder_kind == EncoderKind::kPlain)
    build_plain_encoder(encoder_, config_, enc_rng);
  else
    build_separable_encoder(encoder_, config_, enc_rng);
  encoder_[0].set_propagate_down(false);

  const int f = config_.feature_channels;
  if (config_.detection) {
    detection_.template add<nn::GlobalAvgPool<T>>();
    detection_.template add<nn::Linear<T>>(f, config_.det_hidden, det_rng);
    detection_.template add<nn::ReLU<T>>();
    detection_.template add<nn::Linear<T>>(config_.det_hidden, 1, det_rng);
  }
  if (config_.segmentation) {
    int cin = f;
    for (int s = config_.decoder_stages - 1; s >= 0; --s) {
      const int cout = s > 0 ? config_.stage_channels(s - 1) : config_.base_channels;
      segmentation_.template add<nn::ConvTranspose2d<T>>(cin, cout, 4, 2, 1, false, seg_rng);
      segmentation_.template add<nn::BatchNorm2d<T>>(cout);
      segmentation_.template add<nn::ReLU<T>>();
      cin = cout;
    }
    segmentation_.template add<nn::Conv2d<T>>(cin, 1, 1, 1, 0, true, seg_rng);
  }
}

template <typename T>
void Model<T>::check_input(const Tensor<T>& batch) const {
  const Shape& s = batch.shape();
  if (s.n < 1 || s.c != config_.input_c || s.h != config_.input_h || s.w != config_.input_w)
    throw DimensionError("model input " + s.str() + " does not match configured (N," +
                         std::to_string(config_.input_c) + "," + std::to_string(config_.input_h) +
                         "," + std::to_string(config_.input_w) + ")");
}

template <typename T>
Tensor<T> Model<T>::encode(const Tensor<T>& batch, Mode mode) {
  check_input(batch);
  return encoder_.forward(batch, mode);
}

template <typename T>
ForwardResult<T> Model<T>::forward(const Tensor<T>& batch, Mode mode, bool run_detection,
                                   bool run_segmentation) {
  check_input(batch);
  ForwardResult<T> r;
  r.features = encoder_.forward(batch, mode);
  if (config_.detection && run_detection) {
    r.det_logit = detection_.forward(r.features, mode);
    r.p.resize(batch.shape().n);
    for (int n = 0; n < batch.shape().n; ++n)
      r.p[n] = clamp_probability(nn::sigmoid(r.det_logit[n]));
  }
  if (config_.segmentation && run_segmentation) {
    r.seg_logit = segmentation_.forward(r.features, mode);
    r.S = Tensor<T>(r.seg_logit.shape());
    for (std::size_t i = 0; i < r.S.size(); ++i)
      r.S[i] = clamp_probability(nn::sigmoid(r.seg_logit[i]));
  }
  return r;
}

template <typename T>
void Model<T>::backward(const Tensor<T>& d_det_logit, const Tensor<T>& d_seg_logit) {
  Tensor<T> d_features;
  auto accumulate = [&](Tensor<T> g) {
    if (d_features.empty()) {
      d_features = std::move(g);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) d_features[i] += g[i];
    }
  };
  if (!d_det_logit.empty()) {
    if (!config_.detection) throw CapabilityError("model has no detection branch");
    accumulate(detection_.backward(d_det_logit));
  }
  if (!d_seg_logit.empty()) {
    if (!config_.segmentation) throw CapabilityError("model has no segmentation branch");
    accumulate(segmentation_.backward(d_seg_logit));
  }
  if (d_features.empty()) return;
  encoder_.backward(d_features);
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : parameters()) p.grad->zero();
}

template <typename T>
std::vector<nn::ParamRef<T>> Model<T>::parameters() {
  std::vector<nn::ParamRef<T>> out;
  encoder_.parameters("encoder", out);
  detection_.parameters("detection", out);
  segmentation_.parameters("segmentation", out);
  return out;
}

template <typename T>
std::vector<nn::BufferRef<T>> Model<T>::buffers() {
  std::vector<nn::BufferRef<T>> out;
  encoder_.buffers("encoder", out);
  detection_.buffers("detection", out);
  segmentation_.buffers("segmentation", out);
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() {
  std::size_t n = 0;
  for (auto& p : parameters()) n += p.value->size();
  return n;
}

template <typename T>
std::vector<T> Model<T>::detection_logits(const Tensor<T>& features) {
  if (!config_.detection) throw CapabilityError("model has no detection branch");
  Tensor<T> z = detection_.forward(features, Mode::kEval);
  return std::vector<T>(z.values().begin(), z.values().end());
}

template <typename T>
Tensor<T> Model<T>::detection_logit_grad(const Tensor<T>& features) {
  if (!config_.detection) throw CapabilityError("model has no detection branch");
  detection_.forward(features, Mode::kEval);
  // Parameter gradients are a side effect of backward(); preserve them.
  std::vector<nn::ParamRef<T>> params;
  detection_.parameters("detection", params);
  std::vector<Tensor<T>> saved;
  for (auto& p : params) saved.push_back(*p.grad);
  Tensor<T> ones({features.shape().n, 1, 1, 1}, T(1));
  Tensor<T> g = detection_.backward(ones);
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].grad = std::move(saved[i]);
  return g;
}

template <typename T>
ActivationProbe<T> spatial_activations(Model<T>& model, const Tensor<T>& batch) {
  if (!model.has_detection())
    throw CapabilityError("spatial_activations requires the detection branch");
  ActivationProbe<T> probe;
  probe.activations = model.encode(batch, Mode::kEval);
  probe.logit = model.detection_logits(probe.activations);
  probe.logit_grad = model.detection_logit_grad(probe.activations);
  probe.prob_grad = probe.logit_grad;
  const std::size_t per = probe.activations.shape().sample_size();
  for (std::size_t n = 0; n < probe.logit.size(); ++n) {
    const T s = nn::sigmoid(probe.logit[n]);
    probe.p.push_back(clamp_probability(s));
    const T ds = s * (T(1) - s);
    for (std::size_t i = 0; i < per; ++i) probe.prob_grad[n * per + i] *= ds;
  }
  return probe;
}

template float clamp_probability<float>(float);
template double clamp_probability<double>(double);
template class Model<float>;
template class Model<double>;
template ActivationProbe<float> spatial_activations<float>(Model<float>&, const Tensor<float>&);
template ActivationProbe<double> spatial_activations<double>(Model<double>&, const Tensor<double>&);

}  // namespace forgeseg
