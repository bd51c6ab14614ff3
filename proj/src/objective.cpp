#include "forgeseg/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "forgeseg/errors.hpp"
#include "forgeseg/rng.hpp"

namespace forgeseg {
namespace {

double clamp_eps(double v) { return std::clamp(v, kLossEpsilon, 1.0 - kLossEpsilon); }

template <typename T>
void check_seg_inputs(const Tensor<T>& S, const Tensor<T>& M, SegLossScope scope,
                      std::span<const int> labels) {
  require_same_shape(S, M, "seg_loss");
  for (auto m : M.values())
    if (m != T(0) && m != T(1))
      throw ValidationError("seg_loss: target mask is not binary (found " + std::to_string(m) + ")");
  if (scope == SegLossScope::kForgeryOnly && labels.size() != static_cast<std::size_t>(S.shape().n))
    throw DimensionError("seg_loss: forgery-only scope needs one label per sample");
}

bool seg_included(SegLossScope scope, std::span<const int> labels, int n) {
  return scope == SegLossScope::kAllSamples || labels[n] == 1;
}

int seg_count(SegLossScope scope, std::span<const int> labels, int n_total) {
  if (scope == SegLossScope::kAllSamples) return n_total;
  return static_cast<int>(std::count(labels.begin(), labels.end(), 1));
}

void check_labels(std::span<const int> y, std::size_t expected, const char* what) {
  if (y.size() != expected)
    throw DimensionError(std::string(what) + ": " + std::to_string(expected) +
                         " predictions vs " + std::to_string(y.size()) + " labels");
  for (int v : y)
    if (v != 0 && v != 1)
      throw ValidationError(std::string(what) + ": label " + std::to_string(v) +
                            " is outside {0,1}");
}

}  // namespace

void LossWeights::validate() const {
  if (!(det >= 0.0) || !(seg >= 0.0)) throw ValidationError("loss weights must be non-negative");
  if (det == 0.0 && seg == 0.0) throw ValidationError("loss weights cannot both be zero");
}

template <typename T>
double seg_loss(const Tensor<T>& S, const Tensor<T>& M, SegLossScope scope,
                std::span<const int> labels) {
  check_seg_inputs(S, M, scope, labels);
  const int N = S.shape().n;
  const int count = seg_count(scope, labels, N);
  if (count == 0) return 0.0;
  const std::size_t hw = S.shape().sample_size();
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    if (!seg_included(scope, labels, n)) continue;
    auto s = S.sample(n);
    auto m = M.sample(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) {
      const double sv = clamp_eps(s[i]);
      acc += m[i] == T(1) ? std::log(sv) : std::log(1.0 - sv);
    }
    total += acc / static_cast<double>(hw);
  }
  return -total / count;
}

template <typename T>
Tensor<T> seg_loss_grad(const Tensor<T>& S, const Tensor<T>& M, SegLossScope scope,
                        std::span<const int> labels) {
  check_seg_inputs(S, M, scope, labels);
  const int N = S.shape().n;
  const int count = seg_count(scope, labels, N);
  Tensor<T> g(S.shape());
  if (count == 0) return g;
  const std::size_t hw = S.shape().sample_size();
  const double scale = 1.0 / (static_cast<double>(hw) * count);
  for (int n = 0; n < N; ++n) {
    if (!seg_included(scope, labels, n)) continue;
    auto s = S.sample(n);
    auto m = M.sample(n);
    auto d = g.sample(n);
    for (std::size_t i = 0; i < hw; ++i) {
      const double sv = s[i];
      if (sv <= kLossEpsilon || sv >= 1.0 - kLossEpsilon) continue;
      d[i] = static_cast<T>(scale * (m[i] == T(1) ? -1.0 / sv : 1.0 / (1.0 - sv)));
    }
  }
  return g;
}

template <typename T>
Tensor<T> seg_loss_logit_grad(const Tensor<T>& S, const Tensor<T>& M, SegLossScope scope,
                              std::span<const int> labels) {
  check_seg_inputs(S, M, scope, labels);
  const int N = S.shape().n;
  const int count = seg_count(scope, labels, N);
  Tensor<T> g(S.shape());
  if (count == 0) return g;
  const std::size_t hw = S.shape().sample_size();
  const T scale = static_cast<T>(1.0 / (static_cast<double>(hw) * count));
  for (int n = 0; n < N; ++n) {
    if (!seg_included(scope, labels, n)) continue;
    auto s = S.sample(n);
    auto m = M.sample(n);
    auto d = g.sample(n);
    for (std::size_t i = 0; i < hw; ++i) d[i] = scale * (s[i] - m[i]);
  }
  return g;
}

template <typename T>
double det_loss(std::span<const T> p, std::span<const int> y) {
  check_labels(y, p.size(), "det_loss");
  if (p.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double pv = clamp_eps(p[k]);
    total += y[k] == 1 ? std::log(pv) : std::log(1.0 - pv);
  }
  return -total / static_cast<double>(p.size());
}

template <typename T>
std::vector<T> det_loss_grad(std::span<const T> p, std::span<const int> y) {
  check_labels(y, p.size(), "det_loss");
  std::vector<T> g(p.size(), T(0));
  const double inv_n = 1.0 / static_cast<double>(std::max<std::size_t>(1, p.size()));
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double pv = p[k];
    if (pv <= kLossEpsilon || pv >= 1.0 - kLossEpsilon) continue;
    g[k] = static_cast<T>(inv_n * (y[k] == 1 ? -1.0 / pv : 1.0 / (1.0 - pv)));
  }
  return g;
}

template <typename T>
std::vector<T> det_loss_logit_grad(std::span<const T> p, std::span<const int> y) {
  check_labels(y, p.size(), "det_loss");
  std::vector<T> g(p.size());
  const T inv_n = static_cast<T>(1.0 / static_cast<double>(std::max<std::size_t>(1, p.size())));
  for (std::size_t k = 0; k < p.size(); ++k) g[k] = inv_n * (p[k] - static_cast<T>(y[k]));
  return g;
}

double total_loss(double l_det, double l_seg, const LossWeights& weights) {
  return weights.det * l_det + weights.seg * l_seg;
}

GradCheckResult grad_check(const std::function<double()>& loss,
                           const std::vector<std::span<double>>& params,
                           const std::vector<std::span<const double>>& analytic, double step,
                           std::size_t n_coords, std::uint64_t seed, double abs_floor) {
  if (!(step > 0.0)) throw ValidationError("grad_check: step must be positive");
  if (params.size() != analytic.size())
    throw DimensionError("grad_check: parameter and gradient block counts differ");
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != analytic[b].size())
      throw DimensionError("grad_check: block " + std::to_string(b) + " size mismatch");
    for (std::size_t i = 0; i < params[b].size(); ++i) coords.emplace_back(b, i);
  }
  Rng rng(seed);
  rng.shuffle(coords.begin(), coords.end());
  if (coords.size() > n_coords) coords.resize(n_coords);

  GradCheckResult result;
  std::size_t flat = 0;
  for (const auto& [b, i] : coords) {
    double& x = params[b][i];
    const double saved = x;
    x = saved + step;
    const double up = loss();
    x = saved - step;
    const double down = loss();
    x = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericalError("grad_check: non-finite loss while probing coordinate " +
                           std::to_string(i) + " of block " + std::to_string(b));
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[b][i];
    const double denom = std::max({std::abs(a), std::abs(numeric), abs_floor});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > result.max_rel_error || result.coords_checked == 0) {
      result.max_rel_error = std::max(result.max_rel_error, rel);
      result.worst_index = flat;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
    ++result.coords_checked;
    ++flat;
  }
  return result;
}

GradCheckResult grad_check(const std::function<double()>& loss, std::span<double> params,
                           std::span<const double> analytic, double step, std::size_t n_coords,
                           std::uint64_t seed, double abs_floor) {
  return grad_check(loss, std::vector<std::span<double>>{params},
                    std::vector<std::span<const double>>{analytic}, step, n_coords, seed,
                    abs_floor);
}

#define FORGESEG_INSTANTIATE(T)                                                              \
  template double seg_loss<T>(const Tensor<T>&, const Tensor<T>&, SegLossScope,              \
                              std::span<const int>);                                         \
  template double det_loss<T>(std::span<const T>, std::span<const int>);                     \
  template Tensor<T> seg_loss_grad<T>(const Tensor<T>&, const Tensor<T>&, SegLossScope,      \
                                      std::span<const int>);                                 \
  template Tensor<T> seg_loss_logit_grad<T>(const Tensor<T>&, const Tensor<T>&, SegLossScope, \
                                            std::span<const int>);                           \
  template std::vector<T> det_loss_grad<T>(std::span<const T>, std::span<const int>);        \
  template std::vector<T> det_loss_logit_grad<T>(std::span<const T>, std::span<const int>);

FORGESEG_INSTANTIATE(float)
FORGESEG_INSTANTIATE(double)

}  // namespace forgeseg
