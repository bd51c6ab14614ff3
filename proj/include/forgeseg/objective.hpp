#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "forgeseg/tensor.hpp"

namespace forgeseg {

// Floor applied to probabilities inside the logarithms.
inline constexpr double kLossEpsilon = 1e-7;

struct LossWeights {
  double det = 1.0;
  double seg = 1.0;
  void validate() const;
};

struct LossReport {
  double total = 0.0;
  double det = 0.0;
  double seg = 0.0;
  int batch_size = 0;
};

// Which samples the segmentation term averages over. Genuine images carry an
// all-zero target; kForgeryOnly drops them and normalizes by the fake count.
enum class SegLossScope { kAllSamples, kForgeryOnly };

// Per-pixel BCE averaged over the h*w pixels of each map and over the batch.
// S and M are N x 1 x h x w; M must be binary. `labels` is only consulted
// for kForgeryOnly.
template <typename T>
double seg_loss(const Tensor<T>& S, const Tensor<T>& M,
                SegLossScope scope = SegLossScope::kAllSamples, std::span<const int> labels = {});

// Mean BCE over the batch. Labels must be 0 or 1.
template <typename T>
double det_loss(std::span<const T> p, std::span<const int> y);

double total_loss(double l_det, double l_seg, const LossWeights& weights = {});

// Gradient of seg_loss with respect to S. Zero where the epsilon clamp is active.
template <typename T>
Tensor<T> seg_loss_grad(const Tensor<T>& S, const Tensor<T>& M,
                        SegLossScope scope = SegLossScope::kAllSamples,
                        std::span<const int> labels = {});

// Gradient with respect to the pre-logistic scores, (s - m) / (h*w*N). This
// equals the chain rule through the logistic away from the clamp and keeps
// pushing saturated-but-wrong pixels where the clamp would zero it.
template <typename T>
Tensor<T> seg_loss_logit_grad(const Tensor<T>& S, const Tensor<T>& M,
                              SegLossScope scope = SegLossScope::kAllSamples,
                              std::span<const int> labels = {});

template <typename T>
std::vector<T> det_loss_grad(std::span<const T> p, std::span<const int> y);

template <typename T>
std::vector<T> det_loss_logit_grad(std::span<const T> p, std::span<const int> y);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares analytic gradients against central differences
// (f(x+h) - f(x-h)) / 2h on `n_coords` coordinates drawn without replacement
// (all of them when fewer exist). Relative error is
// |a - n| / max(|a|, |n|, abs_floor). `loss` must read the current values of
// `params`; they are restored after each probe.
GradCheckResult grad_check(const std::function<double()>& loss, std::span<double> params,
                           std::span<const double> analytic, double step,
                           std::size_t n_coords = 100, std::uint64_t seed = 0,
                           double abs_floor = 1e-6);

// Same, over several parameter blocks addressed as one flat vector.
GradCheckResult grad_check(const std::function<double()>& loss,
                           const std::vector<std::span<double>>& params,
                           const std::vector<std::span<const double>>& analytic, double step,
                           std::size_t n_coords = 100, std::uint64_t seed = 0,
                           double abs_floor = 1e-6);

}  // namespace forgeseg
