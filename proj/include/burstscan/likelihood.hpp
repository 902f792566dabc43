#pragma once

// Binomial negative log-likelihood in the natural (logit) parametrisation:
//   L(theta) = sum_t  n_t log(1 + exp(theta_t)) - y_t theta_t
// with its gradient, curvature bounds and the logit / expit maps.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "burstscan/errors.hpp"
#include "burstscan/stream.hpp"

namespace burstscan {

/// |theta| bound for every fitted natural parameter; expit(-15) ~ 3.06e-7.
inline constexpr double kThetaClamp = 15.0;

inline double expit(double theta) {
  if (theta >= 0) return 1.0 / (1.0 + std::exp(-theta));
  const double e = std::exp(theta);
  return e / (1.0 + e);
}

/// logit clamped to [-kThetaClamp, kThetaClamp]; p in {0, 1} maps to the bounds.
inline double logit_clamped(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("logit_clamped: p outside [0, 1]");
  if (p == 0.0) return -kThetaClamp;
  if (p == 1.0) return kThetaClamp;
  return std::clamp(std::log(p) - std::log1p(-p), -kThetaClamp, kThetaClamp);
}

/// log(1 + exp(t)) without overflow.
inline double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

namespace detail {

// Neumaier-compensated accumulator; objective traces compare values that
// differ by far less than the rounding error of a naive sum.
struct CompensatedSum {
  double sum = 0.0;
  double carry = 0.0;
  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      carry += (sum - t) + x;
    else
      carry += (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + carry; }
};

inline void check_length(std::size_t n, std::size_t m, const char* what) {
  if (n != m)
    throw DimensionError(std::string(what) + ": expected length " + std::to_string(n) + ", got " +
                         std::to_string(m));
}

}  // namespace detail

inline double nll(std::span<const double> y, std::span<const double> n,
                  std::span<const double> theta) {
  detail::check_length(y.size(), theta.size(), "nll");
  detail::CompensatedSum acc;
  for (std::size_t i = 0; i < theta.size(); ++i) acc.add(n[i] * softplus(theta[i]) - y[i] * theta[i]);
  return acc.value();
}

inline double nll(const StreamSeries& s, std::span<const double> theta) {
  return nll(s.successes(), s.trials(), theta);
}

inline void nll_grad(std::span<const double> y, std::span<const double> n,
                     std::span<const double> theta, std::span<double> grad) {
  detail::check_length(y.size(), theta.size(), "nll_grad");
  detail::check_length(y.size(), grad.size(), "nll_grad");
  for (std::size_t i = 0; i < theta.size(); ++i) grad[i] = n[i] * expit(theta[i]) - y[i];
}

inline std::vector<double> nll_grad(const StreamSeries& s, std::span<const double> theta) {
  std::vector<double> g(theta.size());
  nll_grad(s.successes(), s.trials(), theta, g);
  return g;
}

/// Diagonal of the (diagonal) Hessian: n_i p_i (1 - p_i).
inline std::vector<double> hessian_diagonal(const StreamSeries& s, std::span<const double> theta) {
  detail::check_length(s.size(), theta.size(), "hessian_diagonal");
  std::vector<double> h(theta.size());
  const auto n = s.trials();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double p = expit(theta[i]);
    h[i] = n[i] * p * (1.0 - p);
  }
  return h;
}

/// Global gradient-Lipschitz constant: max_i n_i / 4.
inline double lipschitz_bound(std::span<const double> n) {
  if (n.empty()) throw EmptySeriesError("lipschitz_bound of an empty series");
  return 0.25 * *std::max_element(n.begin(), n.end());
}

inline double lipschitz_bound(const StreamSeries& s) { return lipschitz_bound(s.trials()); }

/// Smallest Hessian diagonal entry at theta.
inline double mu_min_at(const StreamSeries& s, std::span<const double> theta) {
  const auto h = hessian_diagonal(s, theta);
  if (h.empty()) throw EmptySeriesError("mu_min_at of an empty series");
  return *std::min_element(h.begin(), h.end());
}

}  // namespace burstscan
