#include "forgeseg/nn/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

namespace forgeseg::nn {
namespace {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

int conv_out(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// Unfolds one C x H x W image into a (C*k*k) x (Ho*Wo) patch matrix.
template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* col) {
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col + (static_cast<std::size_t>(c * k + ki) * k + kj) * Ho * Wo;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * stride - pad + ki;
          T* dst = row + oh * Wo;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + Wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * H + ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * stride - pad + kj;
            dst[ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds patch columns back into a C x H x W image.
template <typename T>
void col2im(const T* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* x) {
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + (static_cast<std::size_t>(c * k + ki) * k + kj) * Ho * Wo;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) continue;
          T* dst = x + (static_cast<std::size_t>(c) * H + ih) * W;
          const T* src = row + oh * Wo;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < W) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

template <typename T>
void he_normal(Tensor<T>& w, int fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / fan_in);
  for (auto& v : w.values()) v = static_cast<T>(rng.normal(0.0, std));
}

void require_channels(const Shape& s, int expected, const char* layer) {
  if (s.c != expected)
    throw DimensionError(std::string(layer) + ": expected " + std::to_string(expected) +
                         " input channels, got shape " + s.str());
}

}  // namespace

template <typename T>
T sigmoid(T z) {
  if (z >= T(0)) {
    const T e = std::exp(-z);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(z);
  return e / (T(1) + e);
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, bool bias,
                  Rng& rng)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      has_bias_(bias),
      weight_({out_channels, in_channels, kernel, kernel}),
      weight_grad_({out_channels, in_channels, kernel, kernel}) {
  he_normal(weight_, in_channels * kernel * kernel, rng);
  if (has_bias_) {
    bias_ = Tensor<T>({out_channels, 1, 1, 1});
    bias_grad_ = Tensor<T>({out_channels, 1, 1, 1});
  }
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& in) const {
  return {in.n, out_channels_, conv_out(in.h, kernel_, stride_, pad_),
          conv_out(in.w, kernel_, stride_, pad_)};
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode) {
  require_channels(x.shape(), in_channels_, "conv2d");
  in_shape_ = x.shape();
  const Shape os = output_shape(in_shape_);
  const int K = in_channels_ * kernel_ * kernel_;
  const int P = os.h * os.w;
  Tensor<T> y(os);
  if (pointwise()) {
    cols_.assign(x.values().begin(), x.values().end());
  } else {
    cols_.resize(static_cast<std::size_t>(x.shape().n) * K * P);
  }
  ConstMatMap<T> W(weight_.data(), out_channels_, K);
  for (int n = 0; n < in_shape_.n; ++n) {
    T* col = cols_.data() + static_cast<std::size_t>(n) * K * P;
    if (!pointwise())
      im2col(x.sample(n).data(), in_channels_, in_shape_.h, in_shape_.w, kernel_, stride_, pad_,
             os.h, os.w, col);
    MatMap<T> Y(y.sample(n).data(), out_channels_, P);
    Y.noalias() = W * ConstMatMap<T>(col, K, P);
    if (has_bias_)
      for (int o = 0; o < out_channels_; ++o) Y.row(o).array() += bias_[o];
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out) {
  const Shape os = output_shape(in_shape_);
  if (!(grad_out.shape() == os))
    throw DimensionError("conv2d backward: gradient shape " + grad_out.shape().str() +
                         " vs output " + os.str());
  const int K = in_channels_ * kernel_ * kernel_;
  const int P = os.h * os.w;
  MatMap<T> dW(weight_grad_.data(), out_channels_, K);
  ConstMatMap<T> W(weight_.data(), out_channels_, K);
  Tensor<T> dx;
  if (this->propagate_down_) dx = Tensor<T>(in_shape_);
  AlignedVector<T> dcol(pointwise() ? 0 : static_cast<std::size_t>(K) * P);
  for (int n = 0; n < in_shape_.n; ++n) {
    const T* col = cols_.data() + static_cast<std::size_t>(n) * K * P;
    ConstMatMap<T> dY(grad_out.sample(n).data(), out_channels_, P);
    dW.noalias() += dY * ConstMatMap<T>(col, K, P).transpose();
    if (has_bias_)
      for (int o = 0; o < out_channels_; ++o) bias_grad_[o] += dY.row(o).sum();
    if (!this->propagate_down_) continue;
    if (pointwise()) {
      MatMap<T>(dx.sample(n).data(), K, P).noalias() = W.transpose() * dY;
    } else {
      MatMap<T>(dcol.data(), K, P).noalias() = W.transpose() * dY;
      col2im(dcol.data(), in_channels_, in_shape_.h, in_shape_.w, kernel_, stride_, pad_, os.h,
             os.w, dx.sample(n).data());
    }
  }
  return dx;
}

template <typename T>
void Conv2d<T>::parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".weight", &weight_, &weight_grad_});
  if (has_bias_) out.push_back({prefix + ".bias", &bias_, &bias_grad_});
}

// ------------------------------------------------------- DepthwiseConv2d

template <typename T>
DepthwiseConv2d<T>::DepthwiseConv2d(int channels, int kernel, int stride, int pad, Rng& rng)
    : channels_(channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      weight_({channels, 1, kernel, kernel}),
      weight_grad_({channels, 1, kernel, kernel}) {
  he_normal(weight_, kernel * kernel, rng);
}

template <typename T>
Shape DepthwiseConv2d<T>::output_shape(const Shape& in) const {
  return {in.n, channels_, conv_out(in.h, kernel_, stride_, pad_),
          conv_out(in.w, kernel_, stride_, pad_)};
}

template <typename T>
Tensor<T> DepthwiseConv2d<T>::forward(const Tensor<T>& x, Mode) {
  require_channels(x.shape(), channels_, "depthwise_conv2d");
  input_ = x;
  const Shape is = x.shape();
  const Shape os = output_shape(is);
  Tensor<T> y(os);
  for (int n = 0; n < is.n; ++n) {
    for (int c = 0; c < channels_; ++c) {
      const T* src = x.plane(n, c).data();
      const T* w = weight_.data() + static_cast<std::size_t>(c) * kernel_ * kernel_;
      T* dst = y.plane(n, c).data();
      for (int oh = 0; oh < os.h; ++oh) {
        for (int ow = 0; ow < os.w; ++ow) {
          T acc = 0;
          for (int ki = 0; ki < kernel_; ++ki) {
            const int ih = oh * stride_ - pad_ + ki;
            if (ih < 0 || ih >= is.h) continue;
            for (int kj = 0; kj < kernel_; ++kj) {
              const int iw = ow * stride_ - pad_ + kj;
              if (iw < 0 || iw >= is.w) continue;
              acc += w[ki * kernel_ + kj] * src[ih * is.w + iw];
            }
          }
          dst[oh * os.w + ow] = acc;
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> DepthwiseConv2d<T>::backward(const Tensor<T>& grad_out) {
  const Shape is = input_.shape();
  const Shape os = output_shape(is);
  if (!(grad_out.shape() == os))
    throw DimensionError("depthwise_conv2d backward: gradient shape " + grad_out.shape().str());
  Tensor<T> dx(is);
  for (int n = 0; n < is.n; ++n) {
    for (int c = 0; c < channels_; ++c) {
      const T* src = input_.plane(n, c).data();
      const T* g = grad_out.plane(n, c).data();
      const T* w = weight_.data() + static_cast<std::size_t>(c) * kernel_ * kernel_;
      T* dw = weight_grad_.data() + static_cast<std::size_t>(c) * kernel_ * kernel_;
      T* dsrc = dx.plane(n, c).data();
      for (int oh = 0; oh < os.h; ++oh) {
        for (int ow = 0; ow < os.w; ++ow) {
          const T go = g[oh * os.w + ow];
          for (int ki = 0; ki < kernel_; ++ki) {
            const int ih = oh * stride_ - pad_ + ki;
            if (ih < 0 || ih >= is.h) continue;
            for (int kj = 0; kj < kernel_; ++kj) {
              const int iw = ow * stride_ - pad_ + kj;
              if (iw < 0 || iw >= is.w) continue;
              dw[ki * kernel_ + kj] += go * src[ih * is.w + iw];
              dsrc[ih * is.w + iw] += go * w[ki * kernel_ + kj];
            }
          }
        }
      }
    }
  }
  return dx;
}

template <typename T>
void DepthwiseConv2d<T>::parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".weight", &weight_, &weight_grad_});
}

// ------------------------------------------------------- ConvTranspose2d

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride,
                                    int pad, bool bias, Rng& rng)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      has_bias_(bias),
      weight_({in_channels, out_channels, kernel, kernel}),
      weight_grad_({in_channels, out_channels, kernel, kernel}) {
  // Each output pixel receives about in*k*k/stride^2 contributions.
  he_normal(weight_, std::max(1, in_channels * kernel * kernel / (stride * stride)), rng);
  if (has_bias_) {
    bias_ = Tensor<T>({out_channels, 1, 1, 1});
    bias_grad_ = Tensor<T>({out_channels, 1, 1, 1});
  }
}

template <typename T>
Shape ConvTranspose2d<T>::output_shape(const Shape& in) const {
  return {in.n, out_channels_, (in.h - 1) * stride_ - 2 * pad_ + kernel_,
          (in.w - 1) * stride_ - 2 * pad_ + kernel_};
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const Tensor<T>& x, Mode) {
  require_channels(x.shape(), in_channels_, "conv_transpose2d");
  input_ = x;
  const Shape is = x.shape();
  const Shape os = output_shape(is);
  const int K = out_channels_ * kernel_ * kernel_;
  const int P = is.h * is.w;
  Tensor<T> y(os);
  AlignedVector<T> col(static_cast<std::size_t>(K) * P);
  ConstMatMap<T> W(weight_.data(), in_channels_, K);
  for (int n = 0; n < is.n; ++n) {
    MatMap<T>(col.data(), K, P).noalias() =
        W.transpose() * ConstMatMap<T>(x.sample(n).data(), in_channels_, P);
    col2im(col.data(), out_channels_, os.h, os.w, kernel_, stride_, pad_, is.h, is.w,
           y.sample(n).data());
    if (has_bias_)
      for (int o = 0; o < out_channels_; ++o)
        for (auto& v : y.plane(n, o)) v += bias_[o];
  }
  return y;
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::backward(const Tensor<T>& grad_out) {
  const Shape is = input_.shape();
  const Shape os = output_shape(is);
  if (!(grad_out.shape() == os))
    throw DimensionError("conv_transpose2d backward: gradient shape " + grad_out.shape().str());
  const int K = out_channels_ * kernel_ * kernel_;
  const int P = is.h * is.w;
  Tensor<T> dx;
  if (this->propagate_down_) dx = Tensor<T>(is);
  AlignedVector<T> col(static_cast<std::size_t>(K) * P);
  ConstMatMap<T> W(weight_.data(), in_channels_, K);
  MatMap<T> dW(weight_grad_.data(), in_channels_, K);
  for (int n = 0; n < is.n; ++n) {
    im2col(grad_out.sample(n).data(), out_channels_, os.h, os.w, kernel_, stride_, pad_, is.h,
           is.w, col.data());
    ConstMatMap<T> C(col.data(), K, P);
    dW.noalias() += ConstMatMap<T>(input_.sample(n).data(), in_channels_, P) * C.transpose();
    if (this->propagate_down_) MatMap<T>(dx.sample(n).data(), in_channels_, P).noalias() = W * C;
    if (has_bias_)
      for (int o = 0; o < out_channels_; ++o) {
        T acc = 0;
        for (auto v : grad_out.plane(n, o)) acc += v;
        bias_grad_[o] += acc;
      }
  }
  return dx;
}

template <typename T>
void ConvTranspose2d<T>::parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".weight", &weight_, &weight_grad_});
  if (has_bias_) out.push_back({prefix + ".bias", &bias_, &bias_grad_});
}

// ----------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels, double momentum, double eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_({channels, 1, 1, 1}, T(1)),
      gamma_grad_({channels, 1, 1, 1}),
      beta_({channels, 1, 1, 1}),
      beta_grad_({channels, 1, 1, 1}),
      running_mean_({channels, 1, 1, 1}),
      running_var_({channels, 1, 1, 1}, T(1)),
      inv_std_(channels) {}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode) {
  require_channels(x.shape(), channels_, "batch_norm2d");
  const Shape s = x.shape();
  const std::size_t count = static_cast<std::size_t>(s.n) * s.plane_size();
  last_mode_ = mode;
  xhat_ = Tensor<T>(s);
  Tensor<T> y(s);
  for (int c = 0; c < channels_; ++c) {
    double mean, var;
    if (mode == Mode::kTrain) {
      double sum = 0;
      for (int n = 0; n < s.n; ++n)
        for (auto v : x.plane(n, c)) sum += v;
      mean = sum / count;
      double sq = 0;
      for (int n = 0; n < s.n; ++n)
        for (auto v : x.plane(n, c)) sq += (v - mean) * (v - mean);
      var = sq / count;
      const double unbiased = count > 1 ? sq / (count - 1) : var;
      running_mean_[c] = static_cast<T>((1 - momentum_) * running_mean_[c] + momentum_ * mean);
      running_var_[c] = static_cast<T>((1 - momentum_) * running_var_[c] + momentum_ * unbiased);
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const T inv = static_cast<T>(1.0 / std::sqrt(var + eps_));
    inv_std_[c] = inv;
    const T m = static_cast<T>(mean);
    for (int n = 0; n < s.n; ++n) {
      auto src = x.plane(n, c);
      auto xh = xhat_.plane(n, c);
      auto dst = y.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) {
        xh[i] = (src[i] - m) * inv;
        dst[i] = gamma_[c] * xh[i] + beta_[c];
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& grad_out) {
  const Shape s = xhat_.shape();
  if (!(grad_out.shape() == s))
    throw DimensionError("batch_norm2d backward: gradient shape " + grad_out.shape().str());
  const double count = static_cast<double>(s.n) * s.plane_size();
  Tensor<T> dx(s);
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < s.n; ++n) {
      auto g = grad_out.plane(n, c);
      auto xh = xhat_.plane(n, c);
      for (std::size_t i = 0; i < g.size(); ++i) {
        sum_dy += g[i];
        sum_dy_xhat += g[i] * xh[i];
      }
    }
    gamma_grad_[c] += static_cast<T>(sum_dy_xhat);
    beta_grad_[c] += static_cast<T>(sum_dy);
    const T scale = gamma_[c] * inv_std_[c];
    for (int n = 0; n < s.n; ++n) {
      auto g = grad_out.plane(n, c);
      auto xh = xhat_.plane(n, c);
      auto d = dx.plane(n, c);
      if (last_mode_ == Mode::kEval) {
        for (std::size_t i = 0; i < g.size(); ++i) d[i] = scale * g[i];
        continue;
      }
      const T mean_dy = static_cast<T>(sum_dy / count);
      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
      for (std::size_t i = 0; i < g.size(); ++i)
        d[i] = scale * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
    }
  }
  return dx;
}

template <typename T>
void BatchNorm2d<T>::parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".gamma", &gamma_, &gamma_grad_});
  out.push_back({prefix + ".beta", &beta_, &beta_grad_});
}

template <typename T>
void BatchNorm2d<T>::buffers(const std::string& prefix, std::vector<BufferRef<T>>& out) {
  out.push_back({prefix + ".running_mean", &running_mean_});
  out.push_back({prefix + ".running_var", &running_var_});
}

// ------------------------------------------------------------------ ReLU

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, Mode) {
  output_ = x;
  for (auto& v : output_.values()) v = v < T(0) ? T(0) : v;  // NaN passes through
  return output_;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad_out) {
  if (!(grad_out.shape() == output_.shape()))
    throw DimensionError("relu backward: gradient shape " + grad_out.shape().str());
  Tensor<T> dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = output_[i] > T(0) ? grad_out[i] : T(0);
  return dx;
}

// ------------------------------------------------------------- MaxPool2d

template <typename T>
MaxPool2d<T>::MaxPool2d(int kernel, int stride, int pad)
    : kernel_(kernel), stride_(stride), pad_(pad) {}

template <typename T>
Shape MaxPool2d<T>::output_shape(const Shape& in) const {
  return {in.n, in.c, conv_out(in.h, kernel_, stride_, pad_),
          conv_out(in.w, kernel_, stride_, pad_)};
}

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x, Mode) {
  in_shape_ = x.shape();
  const Shape os = output_shape(in_shape_);
  Tensor<T> y(os);
  argmax_.assign(os.numel(), 0);
  std::size_t o = 0;
  for (int n = 0; n < os.n; ++n) {
    for (int c = 0; c < os.c; ++c) {
      const std::size_t base = x.offset(n, c, 0, 0);
      for (int oh = 0; oh < os.h; ++oh) {
        for (int ow = 0; ow < os.w; ++ow, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_i = base;
          for (int ki = 0; ki < kernel_; ++ki) {
            const int ih = oh * stride_ - pad_ + ki;
            if (ih < 0 || ih >= in_shape_.h) continue;
            for (int kj = 0; kj < kernel_; ++kj) {
              const int iw = ow * stride_ - pad_ + kj;
              if (iw < 0 || iw >= in_shape_.w) continue;
              const std::size_t i = base + static_cast<std::size_t>(ih) * in_shape_.w + iw;
              if (x[i] > best || std::isnan(x[i])) {
                best = x[i];
                best_i = i;
              }
            }
          }
          y[o] = best;
          argmax_[o] = best_i;
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& grad_out) {
  if (grad_out.size() != argmax_.size())
    throw DimensionError("max_pool2d backward: gradient shape " + grad_out.shape().str());
  Tensor<T> dx(in_shape_);
  for (std::size_t o = 0; o < argmax_.size(); ++o) dx[argmax_[o]] += grad_out[o];
  return dx;
}

// --------------------------------------------------------- GlobalAvgPool

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, Mode) {
  in_shape_ = x.shape();
  Tensor<T> y(output_shape(in_shape_));
  const T inv = T(1) / static_cast<T>(in_shape_.plane_size());
  for (int n = 0; n < in_shape_.n; ++n)
    for (int c = 0; c < in_shape_.c; ++c) {
      T acc = 0;
      for (auto v : x.plane(n, c)) acc += v;
      y.at(n, c, 0, 0) = acc * inv;
    }
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> dx(in_shape_);
  const T inv = T(1) / static_cast<T>(in_shape_.plane_size());
  for (int n = 0; n < in_shape_.n; ++n)
    for (int c = 0; c < in_shape_.c; ++c) {
      const T g = grad_out.at(n, c, 0, 0) * inv;
      for (auto& v : dx.plane(n, c)) v = g;
    }
  return dx;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(int in_features, int out_features, Rng& rng)
    : in_features_(in_features),
      out_features_(out_features),
      weight_({out_features, in_features, 1, 1}),
      weight_grad_({out_features, in_features, 1, 1}),
      bias_({out_features, 1, 1, 1}),
      bias_grad_({out_features, 1, 1, 1}) {
  he_normal(weight_, in_features, rng);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Mode) {
  if (static_cast<int>(x.shape().sample_size()) != in_features_)
    throw DimensionError("linear: expected " + std::to_string(in_features_) +
                         " features, got shape " + x.shape().str());
  input_ = x;
  const int N = x.shape().n;
  Tensor<T> y({N, out_features_, 1, 1});
  ConstMatMap<T> X(x.data(), N, in_features_);
  ConstMatMap<T> W(weight_.data(), out_features_, in_features_);
  MatMap<T> Y(y.data(), N, out_features_);
  Y.noalias() = X * W.transpose();
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < out_features_; ++o) Y(n, o) += bias_[o];
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out) {
  const int N = input_.shape().n;
  if (grad_out.size() != static_cast<std::size_t>(N) * out_features_)
    throw DimensionError("linear backward: gradient shape " + grad_out.shape().str());
  ConstMatMap<T> dY(grad_out.data(), N, out_features_);
  ConstMatMap<T> X(input_.data(), N, in_features_);
  MatMap<T> dW(weight_grad_.data(), out_features_, in_features_);
  dW.noalias() += dY.transpose() * X;
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < out_features_; ++o) bias_grad_[o] += dY(n, o);
  Tensor<T> dx(input_.shape());
  MatMap<T>(dx.data(), N, in_features_).noalias() =
      dY * ConstMatMap<T>(weight_.data(), out_features_, in_features_);
  return dx;
}

template <typename T>
void Linear<T>::parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".weight", &weight_, &weight_grad_});
  out.push_back({prefix + ".bias", &bias_, &bias_grad_});
}

// ------------------------------------------------------------ Sequential

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, Mode mode) {
  if (layers_.empty()) return x;
  Tensor<T> h = layers_.front()->forward(x, mode);
  for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->forward(h, mode);
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out) {
  if (layers_.empty()) return grad_out;
  Tensor<T> g = layers_.back()->backward(grad_out);
  for (std::size_t i = layers_.size() - 1; i-- > 0;) g = layers_[i]->backward(g);
  return g;
}

template <typename T>
Shape Sequential<T>::output_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& l : layers_) s = l->output_shape(s);
  return s;
}

template <typename T>
void Sequential<T>::parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->parameters(prefix + "." + std::to_string(i), out);
}

template <typename T>
void Sequential<T>::buffers(const std::string& prefix, std::vector<BufferRef<T>>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i]->buffers(prefix + "." + std::to_string(i), out);
}

// -------------------------------------------------------------- Residual

template <typename T>
Tensor<T> Residual<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> y = main_.forward(x, mode);
  Tensor<T> s = shortcut_.forward(x, mode);
  require_same_shape(y, s, "residual");
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += s[i];
  return y;
}

template <typename T>
Tensor<T> Residual<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> a = main_.backward(grad_out);
  Tensor<T> b = shortcut_.backward(grad_out);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

template <typename T>
Shape Residual<T>::output_shape(const Shape& in) const {
  return main_.output_shape(in);
}

template <typename T>
void Residual<T>::parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  main_.parameters(prefix + ".main", out);
  shortcut_.parameters(prefix + ".shortcut", out);
}

template <typename T>
void Residual<T>::buffers(const std::string& prefix, std::vector<BufferRef<T>>& out) {
  main_.buffers(prefix + ".main", out);
  shortcut_.buffers(prefix + ".shortcut", out);
}

#define FORGESEG_INSTANTIATE(T)             \
  template T sigmoid<T>(T);                 \
  template class Conv2d<T>;                 \
  template class DepthwiseConv2d<T>;        \
  template class ConvTranspose2d<T>;        \
  template class BatchNorm2d<T>;            \
  template class ReLU<T>;                   \
  template class MaxPool2d<T>;              \
  template class GlobalAvgPool<T>;          \
  template class Linear<T>;                 \
  template class Sequential<T>;             \
  template class Residual<T>;

FORGESEG_INSTANTIATE(float)
FORGESEG_INSTANTIATE(double)

}  // namespace forgeseg::nn
