#pragma once

// Penalized binomial segmentation
//
//   minimize  phi(theta) = sum_t (n_t log(1 + e^theta_t) - y_t theta_t) + lambda H(theta)
//
// by proximal gradient with a fixed step 1/L, L >= max_t n_t / 4:
//
//   theta_{k+1} = prox_{(lambda/L) H}( theta_k - grad L(theta_k) / L )
//
// H is the fused l1 (total variation), fused l0 (jump count) or l1 trend
// filter (second differences) penalty; irregular spacing weights the l1
// penalties by the gap lengths. Iterates stay in [-kThetaClamp, kThetaClamp].

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "burstscan/errors.hpp"
#include "burstscan/likelihood.hpp"
#include "burstscan/prox.hpp"
#include "burstscan/stream.hpp"

namespace burstscan {

enum class PenaltyKind {
  fused_l1,
  fused_l0,
  trend_l1,
  pruned,  // provenance of a refit with fixed jump locations; not a penalty
};

inline std::string_view to_string(PenaltyKind k) {
  switch (k) {
    case PenaltyKind::fused_l1: return "l1";
    case PenaltyKind::fused_l0: return "l0";
    case PenaltyKind::trend_l1: return "tf";
    case PenaltyKind::pruned: return "pruned";
  }
  return "?";
}

inline PenaltyKind parse_penalty_kind(std::string_view s) {
  if (s == "l1" || s == "fused_l1") return PenaltyKind::fused_l1;
  if (s == "l0" || s == "fused_l0") return PenaltyKind::fused_l0;
  if (s == "tf" || s == "trend_l1") return PenaltyKind::trend_l1;
  throw std::invalid_argument("unknown penalty '" + std::string(s) + "' (expected l1, l0 or tf)");
}

/// Penalty kind plus the gap lengths it is weighted by. Empty spacing means
/// unit spacing. The l0 penalty ignores spacing.
struct PenaltySpec {
  PenaltyKind kind = PenaltyKind::fused_l0;
  std::vector<double> spacing;

  static PenaltySpec for_series(PenaltyKind kind, const StreamSeries& s) {
    PenaltySpec p{kind, {}};
    if (!s.equispaced()) p.spacing.assign(s.spacing().begin(), s.spacing().end());
    return p;
  }

  bool unit_spacing() const {
    return std::all_of(spacing.begin(), spacing.end(), [](double d) { return d == 1.0; });
  }

  void check_compatible(std::size_t n) const {
    if (kind == PenaltyKind::pruned) throw std::invalid_argument("'pruned' is not a penalty");
    if (!spacing.empty() && spacing.size() + 1 != n)
      throw DimensionError("penalty spacing has " + std::to_string(spacing.size()) +
                           " gaps for a series of " + std::to_string(n) + " points");
    for (double d : spacing)
      if (!(d > 0.0)) throw ValidationError("penalty spacing must be positive");
    if (kind == PenaltyKind::trend_l1 && n < 3)
      throw DimensionError("trend filtering needs at least 3 points");
  }

  /// Difference operator of the weighted l1 penalties.
  DifferenceOperator difference_operator(std::size_t n) const {
    const int order = kind == PenaltyKind::trend_l1 ? 2 : 1;
    if (spacing.empty()) return DifferenceOperator::uniform(n, order);
    return DifferenceOperator(spacing, order);
  }

  /// H(theta).
  double value(std::span<const double> theta) const {
    const std::size_t n = theta.size();
    check_compatible(n);
    double h = 0.0;
    switch (kind) {
      case PenaltyKind::fused_l0:
        for (std::size_t t = 0; t + 1 < n; ++t) h += theta[t + 1] != theta[t] ? 1.0 : 0.0;
        return h;
      case PenaltyKind::fused_l1:
        for (std::size_t t = 0; t + 1 < n; ++t)
          h += std::abs(theta[t + 1] - theta[t]) / (spacing.empty() ? 1.0 : spacing[t]);
        return h;
      case PenaltyKind::trend_l1:
        return difference_operator(n).l1_norm(theta);
      case PenaltyKind::pruned:
        break;
    }
    return h;
  }
};

struct SolverConfig {
  std::optional<double> step_L;  // defaults to lipschitz_bound(series)
  int max_iter = 50000;
  double eps_stationary = 1e-10;  // stop once |theta_{k+1} - theta_k|^2 <= eps
  bool record_trace = false;
  AdmmConfig admm{};
};

struct FitDiagnostics {
  double final_step_L = 0.0;
  double lipschitz_ell = 0.0;
  double mu_min_final = 0.0;
  double linear_rate_gamma = 0.0;      // 1 - mu / (4 L)
  std::vector<int> admm_iterations;    // per outer step, ADMM paths only
  std::vector<double> step_sq;         // |theta_{k+1} - theta_k|^2, with trace
};

struct SegmentedFit {
  std::vector<Date> dates;
  std::vector<double> theta_hat;
  std::vector<double> p_hat;
  PenaltySpec penalty;
  double lambda = 0.0;
  std::vector<double> objective_trace;  // phi(theta_0), phi(theta_1), ... with record_trace
  int iterations = 0;
  bool converged = false;
  FitDiagnostics diagnostics;

  std::size_t size() const noexcept { return theta_hat.size(); }
};

/// phi(theta) = nll + lambda H(theta).
inline double objective(const StreamSeries& series, std::span<const double> theta,
                        const PenaltySpec& penalty, double lambda) {
  const double loss = nll(series, theta);
  if (lambda == 0.0) return loss;
  return loss + lambda * penalty.value(theta);
}

namespace detail {

inline void finish_fit(SegmentedFit& fit, const StreamSeries& series, double step_L, double ell) {
  fit.p_hat.resize(fit.theta_hat.size());
  std::transform(fit.theta_hat.begin(), fit.theta_hat.end(), fit.p_hat.begin(), expit);
  fit.dates = series.dates();
  fit.diagnostics.final_step_L = step_L;
  fit.diagnostics.lipschitz_ell = ell;
  fit.diagnostics.mu_min_final = mu_min_at(series, fit.theta_hat);
  fit.diagnostics.linear_rate_gamma = 1.0 - fit.diagnostics.mu_min_final / (4.0 * step_L);
}

}  // namespace detail

/// Proximal-gradient fit. Starts from the logit of the global proportion
/// unless `initial` is given. lambda == 0 is separable and returns the
/// clamped pointwise MLE directly.
inline SegmentedFit fit_segmentation(const StreamSeries& series, const PenaltySpec& penalty,
                                     double lambda, const SolverConfig& cfg = {},
                                     std::optional<std::span<const double>> initial = std::nullopt) {
  if (series.empty()) throw EmptySeriesError("cannot fit an empty series");
  const std::size_t n = series.size();
  penalty.check_compatible(n);
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("lambda must be finite and >= 0");
  if (cfg.max_iter < 1 || !(cfg.eps_stationary > 0.0))
    throw std::invalid_argument("SolverConfig: max_iter and eps_stationary must be positive");

  const double ell = lipschitz_bound(series);
  const double step_L = cfg.step_L.value_or(ell);
  if (!(step_L >= ell))
    throw std::invalid_argument("SolverConfig: step_L must be >= max(n) / 4");

  SegmentedFit fit;
  fit.penalty = penalty;
  fit.lambda = lambda;

  std::vector<double> theta(n);
  if (initial) {
    if (initial->size() != n) throw DimensionError("initial theta has the wrong length");
    for (std::size_t i = 0; i < n; ++i)
      theta[i] = std::clamp((*initial)[i], -kThetaClamp, kThetaClamp);
  } else {
    std::fill(theta.begin(), theta.end(), logit_clamped(global_proportion(series).p_bar));
  }

  const auto y = series.successes();
  const auto trials = series.trials();
  auto phi = [&](std::span<const double> t) { return objective(series, t, penalty, lambda); };
  if (cfg.record_trace) fit.objective_trace.push_back(phi(theta));

  if (lambda == 0.0) {
    std::vector<double> mle(n);
    for (std::size_t i = 0; i < n; ++i) mle[i] = logit_clamped(y[i] / trials[i]);
    if (cfg.record_trace) {
      double step = 0.0;
      for (std::size_t i = 0; i < n; ++i) step += (mle[i] - theta[i]) * (mle[i] - theta[i]);
      fit.diagnostics.step_sq.push_back(step);
      fit.objective_trace.push_back(phi(mle));
    }
    fit.theta_hat = std::move(mle);
    fit.iterations = 1;
    fit.converged = true;
    detail::finish_fit(fit, series, step_L, ell);
    return fit;
  }

  const double scaled = lambda / step_L;
  const LevelBounds box{-kThetaClamp, kThetaClamp};
  std::optional<WeightedTvProx> weighted;
  AdmmState admm_state;
  std::vector<double> gap_weights;  // fused l1 on irregular spacing: lambda' / spacing per gap
  if (penalty.kind == PenaltyKind::trend_l1) weighted.emplace(penalty.difference_operator(n), cfg.admm);
  if (penalty.kind == PenaltyKind::fused_l1 && !penalty.unit_spacing()) {
    gap_weights.resize(n - 1);
    for (std::size_t t = 0; t + 1 < n; ++t) gap_weights[t] = scaled / penalty.spacing[t];
  }

  std::vector<double> grad(n), ubar(n), next;
  for (int k = 1; k <= cfg.max_iter; ++k) {
    nll_grad(y, trials, theta, grad);
    for (std::size_t i = 0; i < n; ++i) ubar[i] = theta[i] - grad[i] / step_L;

    if (penalty.kind == PenaltyKind::fused_l0) {
      next = prox_fused_l0(ubar, scaled, box);
    } else {
      if (penalty.kind == PenaltyKind::fused_l1) {
        next = gap_weights.empty() ? prox_fused_l1(ubar, scaled) : prox_fused_l1(ubar, gap_weights);
      } else {
        try {
          auto res = (*weighted)(ubar, scaled, &admm_state);
          fit.diagnostics.admm_iterations.push_back(res.iterations);
          next = std::move(res.u);
        } catch (const AdmmConvergenceError& e) {
          throw SolverError("outer iteration " + std::to_string(k) + ": " + e.what());
        }
      }
      for (double& v : next) v = std::clamp(v, -kThetaClamp, kThetaClamp);
    }

    double step = 0.0;
    for (std::size_t i = 0; i < n; ++i) step += (next[i] - theta[i]) * (next[i] - theta[i]);
    theta.swap(next);
    fit.iterations = k;

    if (cfg.record_trace) {
      const double value = phi(theta);
      if (!std::isfinite(value))
        throw SolverError("objective is not finite at iteration " + std::to_string(k));
      fit.objective_trace.push_back(value);
      fit.diagnostics.step_sq.push_back(step);
    } else if (!std::isfinite(step)) {
      throw SolverError("iterate is not finite at iteration " + std::to_string(k));
    }
    if (step <= cfg.eps_stationary) {
      fit.converged = true;
      break;
    }
  }

  fit.theta_hat = std::move(theta);
  if (!std::isfinite(phi(fit.theta_hat))) throw SolverError("objective is not finite at the final iterate");
  detail::finish_fit(fit, series, step_L, ell);
  return fit;
}

/// l1 trend filtering on the natural parameter (piecewise-linear theta).
inline SegmentedFit fit_trend_filter(const StreamSeries& series, double lambda,
                                     const SolverConfig& cfg = {}) {
  return fit_segmentation(series, PenaltySpec::for_series(PenaltyKind::trend_l1, series), lambda,
                          cfg);
}

struct JumpLocation {
  std::size_t index = 0;  // gap between points index and index + 1
  Date left_date;
  Date right_date;
  double left_level = 0.0;
  double right_level = 0.0;
  double magnitude = 0.0;  // right_level - left_level
};

inline constexpr double kDefaultJumpTol = 1e-6;

/// Gaps where the fitted proportion changes by more than jump_tol.
inline std::vector<JumpLocation> extract_jumps(const SegmentedFit& fit,
                                               double jump_tol = kDefaultJumpTol) {
  std::vector<JumpLocation> out;
  for (std::size_t t = 0; t + 1 < fit.p_hat.size(); ++t) {
    const double d = fit.p_hat[t + 1] - fit.p_hat[t];
    if (std::abs(d) > jump_tol) {
      JumpLocation j;
      j.index = t;
      if (fit.dates.size() == fit.p_hat.size()) {
        j.left_date = fit.dates[t];
        j.right_date = fit.dates[t + 1];
      }
      j.left_level = fit.p_hat[t];
      j.right_level = fit.p_hat[t + 1];
      j.magnitude = d;
      out.push_back(j);
    }
  }
  return out;
}

struct ConvergenceReport {
  bool monotone = true;
  double max_increase = 0.0;  // largest phi_{k+1} - phi_k seen
  int steps = 0;              // K
  double min_step_sq = 0.0;   // min_k |theta_{k+1} - theta_k|^2
  double phi_star = 0.0;      // best observed objective
  double finite_time_rhs = 0.0;
  bool finite_time_bound = true;
  double linear_rate_gamma = 0.0;
};

inline constexpr double kMonotoneSlack = 1e-10;

/// Checks the recorded trace for monotone descent and for the finite-time
/// stationarity bound
///   min_k |theta_{k+1} - theta_k|^2 <= 2 (phi(theta_1) - phi*) / (K (L' - ell))
/// with phi* the best observed objective and L' = L (1 + 1e-6) so that
/// L' > ell strictly when L = ell.
inline ConvergenceReport convergence_report(const SegmentedFit& fit) {
  if (fit.objective_trace.empty())
    throw SolverError("convergence_report: fit was run without record_trace");
  const auto& tr = fit.objective_trace;
  ConvergenceReport rep;
  rep.linear_rate_gamma = fit.diagnostics.linear_rate_gamma;
  for (std::size_t k = 1; k < tr.size(); ++k) {
    const double inc = tr[k] - tr[k - 1];
    rep.max_increase = k == 1 ? inc : std::max(rep.max_increase, inc);
    if (inc > kMonotoneSlack) rep.monotone = false;
  }
  rep.phi_star = *std::min_element(tr.begin(), tr.end());
  const auto& steps = fit.diagnostics.step_sq;
  rep.steps = static_cast<int>(steps.size());
  if (steps.empty()) return rep;
  rep.min_step_sq = *std::min_element(steps.begin(), steps.end());
  const double L = fit.diagnostics.final_step_L * (1.0 + 1e-6);
  const double ell = fit.diagnostics.lipschitz_ell;
  rep.finite_time_rhs = 2.0 * (tr.front() - rep.phi_star) / (static_cast<double>(rep.steps) * (L - ell));
  rep.finite_time_bound = rep.min_step_sq <= rep.finite_time_rhs;
  return rep;
}

}  // namespace burstscan
