#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "forgeseg/rng.hpp"
#include "forgeseg/tensor.hpp"

namespace forgeseg::nn {

enum class Mode { kTrain, kEval };

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <typename T>
struct BufferRef {
  std::string name;
  Tensor<T>* value;
};

// A differentiable operator over NCHW tensors. forward() caches whatever
// backward() needs; backward() accumulates into parameter gradients and
// returns the gradient with respect to the most recent forward input.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual std::string kind() const = 0;

  virtual void parameters(const std::string& /*prefix*/, std::vector<ParamRef<T>>& /*out*/) {}
  virtual void buffers(const std::string& /*prefix*/, std::vector<BufferRef<T>>& /*out*/) {}

  // When false the layer may skip computing its input gradient.
  void set_propagate_down(bool v) { propagate_down_ = v; }
  bool propagate_down() const { return propagate_down_; }

 protected:
  bool propagate_down_ = true;
};

template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, bool bias, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "conv2d"; }
  void parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) override;

 private:
  bool pointwise() const { return kernel_ == 1 && stride_ == 1 && pad_ == 0; }

  int in_channels_, out_channels_, kernel_, stride_, pad_;
  bool has_bias_;
  Tensor<T> weight_, weight_grad_, bias_, bias_grad_;
  Shape in_shape_;
  AlignedVector<T> cols_;  // im2col per sample, or the raw input for 1x1 kernels
};

// Depthwise 2-D convolution: one k x k filter per channel.
template <typename T>
class DepthwiseConv2d : public Layer<T> {
 public:
  DepthwiseConv2d(int channels, int kernel, int stride, int pad, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "depthwise_conv2d"; }
  void parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) override;

 private:
  int channels_, kernel_, stride_, pad_;
  Tensor<T> weight_, weight_grad_;
  Tensor<T> input_;
};

// Fractionally strided ("de-") convolution. Output extent is
// (in - 1) * stride - 2 * pad + kernel.
template <typename T>
class ConvTranspose2d : public Layer<T> {
 public:
  ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int pad, bool bias,
                  Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "conv_transpose2d"; }
  void parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) override;

 private:
  int in_channels_, out_channels_, kernel_, stride_, pad_;
  bool has_bias_;
  Tensor<T> weight_, weight_grad_, bias_, bias_grad_;  // weight: Cin x (Cout*k*k)
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d : public Layer<T> {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override { return in; }
  std::string kind() const override { return "batch_norm2d"; }
  void parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void buffers(const std::string& prefix, std::vector<BufferRef<T>>& out) override;

 private:
  int channels_;
  double momentum_, eps_;
  Tensor<T> gamma_, gamma_grad_, beta_, beta_grad_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  Mode last_mode_ = Mode::kEval;
};

template <typename T>
class ReLU : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override { return in; }
  std::string kind() const override { return "relu"; }

 private:
  Tensor<T> output_;
};

template <typename T>
class MaxPool2d : public Layer<T> {
 public:
  MaxPool2d(int kernel, int stride, int pad);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "max_pool2d"; }

 private:
  int kernel_, stride_, pad_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

template <typename T>
class GlobalAvgPool : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override { return {in.n, in.c, 1, 1}; }
  std::string kind() const override { return "global_avg_pool"; }

 private:
  Shape in_shape_;
};

// Fully connected layer over the flattened C*H*W features of each sample.
template <typename T>
class Linear : public Layer<T> {
 public:
  Linear(int in_features, int out_features, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override { return {in.n, out_features_, 1, 1}; }
  std::string kind() const override { return "linear"; }
  void parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) override;

 private:
  int in_features_, out_features_;
  Tensor<T> weight_, weight_grad_, bias_, bias_grad_;
  Tensor<T> input_;
};

template <typename T>
class Sequential : public Layer<T> {
 public:
  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }
  void push(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "sequential"; }
  void parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void buffers(const std::string& prefix, std::vector<BufferRef<T>>& out) override;

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Layer<T>& operator[](std::size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// y = main(x) + shortcut(x); an empty shortcut is the identity.
template <typename T>
class Residual : public Layer<T> {
 public:
  Sequential<T>& main() { return main_; }
  Sequential<T>& shortcut() { return shortcut_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Shape output_shape(const Shape& in) const override;
  std::string kind() const override { return "residual"; }
  void parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void buffers(const std::string& prefix, std::vector<BufferRef<T>>& out) override;

 private:
  Sequential<T> main_, shortcut_;
};

template <typename T>
T sigmoid(T z);

}  // namespace forgeseg::nn
