#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "burstscan/errors.hpp"
#include "burstscan/likelihood.hpp"
#include "burstscan/parallel.hpp"
#include "burstscan/segmentation.hpp"
#include "burstscan/stream.hpp"

namespace burstscan {

/// Systematic folds: point t goes to fold t mod k.
inline std::vector<std::size_t> assign_folds(std::size_t n, std::size_t k) {
  if (k < 2 || k > n)
    throw std::invalid_argument("assign_folds: need 2 <= k <= N (k=" + std::to_string(k) +
                                ", N=" + std::to_string(n) + ")");
  std::vector<std::size_t> fold(n);
  for (std::size_t t = 0; t < n; ++t) fold[t] = t % k;
  return fold;
}

/// Mean binomial NLL of the held-out points. Each held-out theta is the
/// average of the fitted theta at the nearest retained point on either side
/// (one side only at the boundaries). `fit` was computed on the series with
/// `heldout` (sorted, unique) removed.
inline double cv_heldout_loss(const StreamSeries& series, const SegmentedFit& fit,
                              std::span<const std::size_t> heldout) {
  const std::size_t n = series.size();
  if (heldout.empty()) throw std::invalid_argument("cv_heldout_loss: no held-out points");
  if (heldout.size() >= n) throw EmptySeriesError("cv_heldout_loss: fold empties the series");
  if (fit.theta_hat.size() != n - heldout.size())
    throw DimensionError("cv_heldout_loss: fit does not match the retained points");

  // position of each retained point in the fit, or npos for held-out ones
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<std::size_t> slot(n, 0);
  for (std::size_t h : heldout) {
    if (h >= n) throw std::out_of_range("cv_heldout_loss: held-out index out of range");
    slot[h] = npos;
  }
  std::size_t next = 0;
  for (auto& s : slot)
    if (s != npos) s = next++;
  if (next != fit.theta_hat.size()) throw std::invalid_argument("cv_heldout_loss: duplicate held-out index");

  std::vector<std::size_t> left(n, npos), right(n, npos);
  for (std::size_t t = 0, last = npos; t < n; ++t) {
    left[t] = last;
    if (slot[t] != npos) last = slot[t];
  }
  for (std::size_t t = n, last = npos; t-- > 0;) {
    right[t] = last;
    if (slot[t] != npos) last = slot[t];
  }

  detail::CompensatedSum acc;
  for (std::size_t h : heldout) {
    double theta;
    if (left[h] == npos)
      theta = fit.theta_hat[right[h]];
    else if (right[h] == npos)
      theta = fit.theta_hat[left[h]];
    else
      theta = 0.5 * (fit.theta_hat[left[h]] + fit.theta_hat[right[h]]);
    const auto& p = series[h];
    acc.add(static_cast<double>(p.n) * softplus(theta) - static_cast<double>(p.y) * theta);
  }
  return acc.value() / static_cast<double>(heldout.size());
}

struct CvResult {
  std::vector<double> lambda_grid;  // descending
  std::vector<double> cv_mean;
  std::vector<double> cv_se;
  double lambda_cv = 0.0;
  double lambda_1se = 0.0;
  std::size_t k = 0;
};

struct CvConfig {
  std::size_t folds = 10;
  unsigned threads = 1;  // 0 = hardware concurrency
  SolverConfig solver{};
};

namespace detail {

inline bool is_constant(std::span<const double> theta) {
  const auto [lo, hi] = std::minmax_element(theta.begin(), theta.end());
  return theta.empty() || *hi - *lo <= 1e-9;
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace detail

/// Smallest lambda = 2^j (j >= 0, from `start`) whose fit is constant.
inline double constant_fit_lambda(const StreamSeries& series, const PenaltySpec& penalty,
                                  const SolverConfig& cfg = {}, double start = 1.0,
                                  int max_doublings = 80) {
  if (!(start > 0.0)) throw std::invalid_argument("constant_fit_lambda: start must be positive");
  double lambda = start;
  for (int j = 0; j <= max_doublings; ++j, lambda *= 2.0) {
    auto fit = fit_segmentation(series, penalty, lambda, cfg);
    if (detail::is_constant(fit.theta_hat)) return lambda;
  }
  throw SolverError("constant_fit_lambda: no constant fit up to lambda = " + detail::format_real(lambda));
}

/// `count` log-spaced values from top down to top * ratio.
inline std::vector<double> log_grid(double top, std::size_t count = 50, double ratio = 1e-4) {
  if (!(top > 0.0) || count == 0 || !(ratio > 0.0 && ratio <= 1.0))
    throw std::invalid_argument("log_grid: need top > 0, count >= 1, 0 < ratio <= 1");
  std::vector<double> grid(count);
  if (count == 1) {
    grid[0] = top;
    return grid;
  }
  const double step = std::log(ratio) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) grid[i] = top * std::exp(step * static_cast<double>(i));
  grid.back() = top * ratio;
  return grid;
}

inline std::vector<double> default_lambda_grid(const StreamSeries& series, const PenaltySpec& penalty,
                                               const SolverConfig& cfg = {}, std::size_t count = 50) {
  return log_grid(constant_fit_lambda(series, penalty, cfg), count);
}

/// Picks lambda_cv and lambda_1se from filled-in means and standard errors.
inline void select_lambdas(CvResult& r) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.cv_mean.size(); ++i)
    if (r.cv_mean[i] < r.cv_mean[best]) best = i;
  r.lambda_cv = r.lambda_grid[best];
  const double limit = r.cv_mean[best] + r.cv_se[best];
  r.lambda_1se = r.lambda_cv;
  for (std::size_t i = 0; i < r.cv_mean.size(); ++i)
    if (r.cv_mean[i] <= limit) r.lambda_1se = std::max(r.lambda_1se, r.lambda_grid[i]);
}

/// k-fold cross-validation of `penalty` over a descending lambda grid.
/// Training series keep their real spacing, so spacing-weighted penalties
/// see the gaps left by the removed fold.
inline CvResult cross_validate(const StreamSeries& series, const PenaltySpec& penalty,
                               std::span<const double> lambda_grid, const CvConfig& cfg = {}) {
  if (lambda_grid.empty()) throw std::invalid_argument("cross_validate: empty lambda grid");
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    if (!(lambda_grid[i] > 0.0) || !std::isfinite(lambda_grid[i]))
      throw std::invalid_argument("cross_validate: lambda grid must be positive and finite");
    if (i > 0 && !(lambda_grid[i] < lambda_grid[i - 1]))
      throw std::invalid_argument("cross_validate: lambda grid must be strictly descending");
  }
  const std::size_t n = series.size();
  const std::size_t k = cfg.folds;
  const auto folds = assign_folds(n, k);

  std::vector<std::vector<std::size_t>> heldout(k), kept(k);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t f = 0; f < k; ++f) (folds[t] == f ? heldout[f] : kept[f]).push_back(t);

  std::vector<StreamSeries> train;
  std::vector<PenaltySpec> train_penalty;
  train.reserve(k);
  for (std::size_t f = 0; f < k; ++f) {
    train.push_back(series.select(kept[f]));
    train_penalty.push_back(penalty.kind == PenaltyKind::fused_l0
                                ? PenaltySpec{penalty.kind, {}}
                                : PenaltySpec::for_series(penalty.kind, train.back()));
  }

  const std::size_t m = lambda_grid.size();
  std::vector<double> loss(k * m);
  parallel_for(k * m, cfg.threads, [&](std::size_t job) {
    const std::size_t f = job / m, j = job % m;
    try {
      auto fit = fit_segmentation(train[f], train_penalty[f], lambda_grid[j], cfg.solver);
      loss[job] = cv_heldout_loss(series, fit, heldout[f]);
    } catch (const std::exception& e) {
      throw SolverError("cross-validation fold " + std::to_string(f) + ", lambda " +
                        detail::format_real(lambda_grid[j]) + ": " + e.what());
    }
  });

  CvResult r;
  r.k = k;
  r.lambda_grid.assign(lambda_grid.begin(), lambda_grid.end());
  r.cv_mean.resize(m);
  r.cv_se.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    double mean = 0.0;
    for (std::size_t f = 0; f < k; ++f) mean += loss[f * m + j];
    mean /= static_cast<double>(k);
    double ss = 0.0;
    for (std::size_t f = 0; f < k; ++f) ss += (loss[f * m + j] - mean) * (loss[f * m + j] - mean);
    r.cv_mean[j] = mean;
    r.cv_se[j] = std::sqrt(ss / static_cast<double>(k - 1)) / std::sqrt(static_cast<double>(k));
  }
  select_lambdas(r);
  return r;
}

}  // namespace burstscan
