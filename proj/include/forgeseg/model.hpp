#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "forgeseg/nn/layers.hpp"
#include "forgeseg/tensor.hpp"

namespace forgeseg {

enum class EncoderKind {
  kSeparable,  // depthwise-separable residual stages ("xcep-style")
  kPlain,      // two 3x3 convs + max-pool per stage, no skips ("unet-encoder")
};

std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& s);

struct ModelConfig {
  EncoderKind encoder_kind = EncoderKind::kPlain;
  int input_h = 64;
  int input_w = 64;
  int input_c = 3;
  // Upsampling blocks in the segmentation decoder. The encoder downsamples
  // by the same number of stride-2 stages so the decoder lands on input size.
  int decoder_stages = 3;
  int base_channels = 8;      // width of the first encoder stage, doubled per stage
  int feature_channels = 32;  // width of the last encoder stage
  int middle_blocks = 1;      // extra non-downsampling residual blocks (separable only)
  int det_hidden = 32;        // width of the first fully connected detection layer
  bool detection = true;
  bool segmentation = true;

  void validate() const;
  // Stable textual form; the config hash is taken over it.
  std::string canonical() const;
  std::string hash() const;
  int stage_channels(int stage) const;
  int feature_size_h() const { return input_h >> decoder_stages; }
  int feature_size_w() const { return input_w >> decoder_stages; }
};

// Probabilities are clamped to [kProbEpsilon, 1 - kProbEpsilon] so they stay
// strictly inside (0, 1) even when the logistic saturates.
inline constexpr double kProbEpsilon = 1e-7;

template <typename T>
struct ForwardResult {
  Tensor<T> features;   // last encoder stage, N x C x h' x w'
  Tensor<T> det_logit;  // N x 1 x 1 x 1, empty without detection branch
  Tensor<T> seg_logit;  // N x 1 x H x W, empty without segmentation branch
  std::vector<T> p;     // forgery probability per sample
  Tensor<T> S;          // soft manipulation mask, N x 1 x H x W
};

template <typename T>
T clamp_probability(T p);

// Shared encoder with a detection head (GAP -> fc -> ReLU -> fc -> logistic)
// and a transposed-convolution segmentation decoder (-> logistic).
template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  bool has_detection() const { return config_.detection; }
  bool has_segmentation() const { return config_.segmentation; }

  // Branches switched off here are not evaluated (their outputs stay empty).
  ForwardResult<T> forward(const Tensor<T>& batch, nn::Mode mode, bool run_detection = true,
                           bool run_segmentation = true);
  // Shared encoder only.
  Tensor<T> encode(const Tensor<T>& batch, nn::Mode mode);

  // Backpropagates gradients of the objective with respect to the branch
  // logits of the most recent forward(). An empty tensor means that branch
  // does not contribute.
  void backward(const Tensor<T>& d_det_logit, const Tensor<T>& d_seg_logit);

  void zero_grad();

  // Names are prefixed "encoder.", "detection." or "segmentation.".
  std::vector<nn::ParamRef<T>> parameters();
  std::vector<nn::BufferRef<T>> buffers();
  std::size_t parameter_count();

  // Runs only the detection head on given encoder features (eval mode).
  std::vector<T> detection_logits(const Tensor<T>& features);
  // d logit_k / d features_k for every sample, eval mode.
  Tensor<T> detection_logit_grad(const Tensor<T>& features);

 private:
  void check_input(const Tensor<T>& batch) const;

  ModelConfig config_;
  nn::Sequential<T> encoder_;
  nn::Sequential<T> detection_;
  nn::Sequential<T> segmentation_;
};

// Last encoder stage activations together with the gradient of the
// detection output with respect to them (eval mode).
template <typename T>
struct ActivationProbe {
  Tensor<T> activations;
  Tensor<T> logit_grad;  // d logit / d activations
  Tensor<T> prob_grad;   // d p / d activations
  std::vector<T> logit;
  std::vector<T> p;
};

template <typename T>
ActivationProbe<T> spatial_activations(Model<T>& model, const Tensor<T>& batch);

template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  return Model<T>(config, seed);
}

}  // namespace forgeseg
