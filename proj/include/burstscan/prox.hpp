#pragma once

// Proximal operators for the segmentation penalties
//
//   fused l1 : argmin_u 1/2 |u - ubar|^2 + lambda * sum |u_{i+1} - u_i|
//   fused l0 : argmin_u 1/2 |u - ubar|^2 + lambda * #{i : u_{i+1} != u_i}
//   weighted : argmin_u 1/2 |u - ubar|^2 + lambda * |D u|_1   (ADMM)
//
// plus the banded SPD solver and the spacing-aware difference operators the
// weighted problem needs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "burstscan/errors.hpp"

namespace burstscan {

namespace detail {

inline void require_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw std::domain_error(std::string(what) + ": non-finite input");
}

inline void require_lambda(double lambda, const char* what) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw std::domain_error(std::string(what) + ": lambda must be finite and >= 0");
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace detail

inline double soft_threshold(double z, double kappa) {
  if (z > kappa) return z - kappa;
  if (z < -kappa) return z + kappa;
  return 0.0;
}

namespace detail {

// Johnson's O(N) dynamic program over piecewise-linear message derivatives.
// lam(k) is the penalty on |u_{k+1} - u_k|.
template <class EdgeLambda>
std::vector<double> tv_dp(std::span<const double> ubar, EdgeLambda lam) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(ubar.size());
  std::vector<double> u(ubar.begin(), ubar.end());
  if (n <= 1) return u;

  // Knots of the message derivative live in x[l..r]; a, b hold the slope and
  // offset increments at each knot. tm/tp are the back-pointer thresholds.
  std::vector<double> x(2 * n), a(2 * n), b(2 * n);
  std::vector<double> tm(n - 1), tp(n - 1);

  double w = lam(0);
  std::ptrdiff_t l = n - 1;
  std::ptrdiff_t r = n;
  tm[0] = ubar[0] - w;
  tp[0] = ubar[0] + w;
  x[l] = tm[0];
  x[r] = tp[0];
  a[l] = 1.0;
  b[l] = -ubar[0] + w;
  a[r] = -1.0;
  b[r] = ubar[0] + w;
  double afirst = 1.0, bfirst = -w - ubar[1];
  double alast = -1.0, blast = -w + ubar[1];

  std::ptrdiff_t lo = 0, hi = 0;
  double alo = 0, blo = 0, ahi = 0, bhi = 0;
  for (std::ptrdiff_t k = 1; k < n - 1; ++k) {
    w = lam(static_cast<std::size_t>(k));
    alo = afirst;
    blo = bfirst;
    for (lo = l; lo <= r; ++lo) {
      if (alo * x[lo] + blo > -w) break;
      alo += a[lo];
      blo += b[lo];
    }
    ahi = alast;
    bhi = blast;
    for (hi = r; hi >= lo; --hi) {
      if (-ahi * x[hi] - bhi < w) break;
      ahi += a[hi];
      bhi += b[hi];
    }

    tm[k] = (-w - blo) / alo;
    l = lo - 1;
    x[l] = tm[k];
    tp[k] = (w + bhi) / (-ahi);
    r = hi + 1;
    x[r] = tp[k];

    a[l] = alo;
    b[l] = blo + w;
    a[r] = ahi;
    b[r] = bhi + w;
    afirst = 1.0;
    bfirst = -w - ubar[k + 1];
    alast = -1.0;
    blast = -w + ubar[k + 1];
  }

  alo = afirst;
  blo = bfirst;
  for (lo = l; lo <= r; ++lo) {
    if (alo * x[lo] + blo > 0) break;
    alo += a[lo];
    blo += b[lo];
  }
  u[n - 1] = -blo / alo;
  for (std::ptrdiff_t k = n - 2; k >= 0; --k) u[k] = std::clamp(u[k + 1], tm[k], tp[k]);
  return u;
}

}  // namespace detail

/// Exact fused-lasso (1-D total variation) prox in O(N):
/// argmin 1/2 |u - ubar|^2 + lambda sum |u_{i+1} - u_i|.
inline std::vector<double> prox_fused_l1(std::span<const double> ubar, double lambda) {
  detail::require_finite(ubar, "prox_fused_l1");
  detail::require_lambda(lambda, "prox_fused_l1");
  if (lambda == 0.0) return {ubar.begin(), ubar.end()};
  return detail::tv_dp(ubar, [lambda](std::size_t) { return lambda; });
}

/// Edge-weighted variant: penalty sum_i weights[i] |u_{i+1} - u_i|.
inline std::vector<double> prox_fused_l1(std::span<const double> ubar,
                                         std::span<const double> weights) {
  detail::require_finite(ubar, "prox_fused_l1");
  if (ubar.size() > 1 && weights.size() != ubar.size() - 1)
    throw DimensionError("prox_fused_l1: need one weight per gap");
  for (double w : weights) detail::require_lambda(w, "prox_fused_l1");
  return detail::tv_dp(ubar, [weights](std::size_t k) { return weights[k]; });
}

/// Box applied to segment levels in the l0 prox (the solver keeps natural
/// parameters inside [-kThetaClamp, kThetaClamp]).
struct LevelBounds {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

/// Exact l0 segmentation prox by optimal partitioning with PELT pruning.
/// Segment cost is half the within-segment squared deviation from the
/// (box-clamped) segment mean. Among optimal partitions within a relative
/// 1e-12 tie band the one with fewer segments wins.
inline std::vector<double> prox_fused_l0(std::span<const double> ubar, double lambda,
                                         LevelBounds bounds = {}) {
  detail::require_finite(ubar, "prox_fused_l0");
  detail::require_lambda(lambda, "prox_fused_l0");
  const std::size_t n = ubar.size();
  if (n == 0) return {};
  if (lambda == 0.0) {
    std::vector<double> u(ubar.begin(), ubar.end());
    for (double& v : u) v = std::clamp(v, bounds.lo, bounds.hi);
    return u;
  }

  // Centre the data so prefix sums of squares stay well conditioned.
  const double shift = std::accumulate(ubar.begin(), ubar.end(), 0.0) / static_cast<double>(n);
  const double lo = bounds.lo - shift;
  const double hi = bounds.hi - shift;
  std::vector<double> s1(n + 1, 0.0), s2(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = ubar[i] - shift;
    s1[i + 1] = s1[i] + v;
    s2[i + 1] = s2[i] + v * v;
  }
  auto level = [&](std::size_t first, std::size_t last) {
    return std::clamp((s1[last] - s1[first]) / static_cast<double>(last - first), lo, hi);
  };
  auto cost = [&](std::size_t first, std::size_t last) {
    const double m = static_cast<double>(last - first);
    const double sum = s1[last] - s1[first];
    const double c = std::clamp(sum / m, lo, hi);
    return std::max(0.0, 0.5 * ((s2[last] - s2[first]) - 2.0 * c * sum + m * c * c));
  };
  auto tie_band = [](double v) { return 1e-12 * (1.0 + std::abs(v)); };

  std::vector<double> best(n + 1);
  std::vector<std::size_t> segments(n + 1, 0), previous(n + 1, 0);
  best[0] = -lambda;
  std::vector<std::size_t> candidates{0};
  std::vector<double> value;
  for (std::size_t t = 1; t <= n; ++t) {
    value.resize(candidates.size());
    double f = std::numeric_limits<double>::infinity();
    std::size_t arg = candidates.front();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const std::size_t tau = candidates[c];
      value[c] = best[tau] + cost(tau, t);
      const double v = value[c] + lambda;
      const double band = tie_band(f);
      if (c == 0 || v < f - band || (v <= f + band && segments[tau] < segments[arg])) {
        f = v;
        arg = tau;
      }
    }
    best[t] = f;
    previous[t] = arg;
    segments[t] = segments[arg] + 1;

    std::size_t kept = 0;
    for (std::size_t c = 0; c < candidates.size(); ++c)
      if (value[c] <= f + tie_band(f)) candidates[kept++] = candidates[c];
    candidates.resize(kept);
    candidates.push_back(t);
  }

  std::vector<double> u(n);
  for (std::size_t t = n; t > 0;) {
    const std::size_t tau = previous[t];
    const double v = std::clamp(level(tau, t) + shift, bounds.lo, bounds.hi);
    std::fill(u.begin() + static_cast<std::ptrdiff_t>(tau), u.begin() + static_cast<std::ptrdiff_t>(t), v);
    t = tau;
  }
  return u;
}

/// Symmetric banded matrix holding the diagonal and `bandwidth` sub-diagonals.
class BandedMatrix {
 public:
  BandedMatrix(std::size_t n, std::size_t bandwidth)
      : n_(n), bw_(bandwidth), data_(n * (bandwidth + 1), 0.0) {}

  static BandedMatrix identity(std::size_t n) {
    BandedMatrix m(n, 0);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t bandwidth() const noexcept { return bw_; }

  /// Element (i, j) of the lower band, j <= i <= j + bandwidth.
  double& at(std::size_t i, std::size_t j) {
    if (j > i) std::swap(i, j);
    if (i - j > bw_ || i >= n_) throw DimensionError("BandedMatrix: index outside band");
    return data_[i * (bw_ + 1) + (i - j)];
  }

  double operator()(std::size_t i, std::size_t j) const {
    if (j > i) std::swap(i, j);
    if (i - j > bw_) return 0.0;
    return data_[i * (bw_ + 1) + (i - j)];
  }

  std::vector<double> multiply(std::span<const double> x) const {
    std::vector<double> y(n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      const std::size_t first = i > bw_ ? i - bw_ : 0;
      const std::size_t last = std::min(n_ - 1, i + bw_);
      for (std::size_t j = first; j <= last; ++j) y[i] += (*this)(i, j) * x[j];
    }
    return y;
  }

 private:
  std::size_t n_;
  std::size_t bw_;
  std::vector<double> data_;
};

/// Banded Cholesky factor A = G G^T; O(N bw^2) to build, O(N bw) per solve.
class BandedCholesky {
 public:
  explicit BandedCholesky(const BandedMatrix& a) : g_(a.size(), a.bandwidth()) {
    const std::size_t n = a.size(), bw = a.bandwidth();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t first = i > bw ? i - bw : 0;
      for (std::size_t j = first; j <= i; ++j) {
        double s = a(i, j);
        const std::size_t kfirst = std::max(first, j > bw ? j - bw : 0);
        for (std::size_t k = kfirst; k < j; ++k) s -= g_(i, k) * g_(j, k);
        if (i == j) {
          if (!(s > 0.0)) throw NotPositiveDefiniteError(i, s);
          g_.at(i, i) = std::sqrt(s);
        } else {
          g_.at(i, j) = s / g_(j, j);
        }
      }
    }
  }

  std::vector<double> solve(std::span<const double> rhs) const {
    const std::size_t n = g_.size(), bw = g_.bandwidth();
    if (rhs.size() != n) throw DimensionError("BandedCholesky::solve: size mismatch");
    std::vector<double> x(rhs.begin(), rhs.end());
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t first = i > bw ? i - bw : 0;
      for (std::size_t k = first; k < i; ++k) x[i] -= g_(i, k) * x[k];
      x[i] /= g_(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
      const std::size_t last = std::min(n - 1, i + bw);
      for (std::size_t k = i + 1; k <= last; ++k) x[i] -= g_(k, i) * x[k];
      x[i] /= g_(i, i);
    }
    return x;
  }

 private:
  BandedMatrix g_;
};

inline std::vector<double> solve_banded_spd(const BandedMatrix& a, std::span<const double> b) {
  return BandedCholesky(a).solve(b);
}

/// Spacing-aware difference operator D with N - order rows.
///   order 1: (Du)_t = (u_{t+1} - u_t) / d_t
///   order 2: (Du)_t = ((u_{t+2} - u_{t+1}) / d_{t+1} - (u_{t+1} - u_t) / d_t) / d_t
/// where d_t is the gap between points t and t + 1.
class DifferenceOperator {
 public:
  DifferenceOperator(std::span<const double> spacing, int order)
      : order_(order), spacing_(spacing.begin(), spacing.end()) {
    if (order != 1 && order != 2) throw std::invalid_argument("difference order must be 1 or 2");
    cols_ = spacing.size() + 1;
    if (cols_ < static_cast<std::size_t>(order) + 1)
      throw DimensionError("series too short for a difference operator of order " +
                           std::to_string(order));
    for (double d : spacing)
      if (!(d > 0.0)) throw ValidationError("spacing must be positive");
    rows_ = cols_ - static_cast<std::size_t>(order);
    coef_.resize(rows_ * width());
    for (std::size_t t = 0; t < rows_; ++t) {
      double* c = &coef_[t * width()];
      const double a = 1.0 / spacing[t];
      if (order == 1) {
        c[0] = -a;
        c[1] = a;
      } else {
        const double b = 1.0 / spacing[t + 1];
        c[0] = a * a;
        c[1] = -(a + b) * a;
        c[2] = b * a;
      }
    }
  }

  /// Unit-spacing operator on n points.
  static DifferenceOperator uniform(std::size_t n, int order) {
    std::vector<double> spacing(n > 0 ? n - 1 : 0, 1.0);
    return DifferenceOperator(spacing, order);
  }

  int order() const noexcept { return order_; }
  std::span<const double> spacing() const noexcept { return spacing_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  /// Coefficient of u_{t + j} in row t.
  double coefficient(std::size_t t, std::size_t j) const { return coef_[t * width() + j]; }

  void apply(std::span<const double> u, std::span<double> out) const {
    for (std::size_t t = 0; t < rows_; ++t) {
      double s = 0.0;
      for (std::size_t j = 0; j < width(); ++j) s += coef_[t * width() + j] * u[t + j];
      out[t] = s;
    }
  }

  std::vector<double> apply(std::span<const double> u) const {
    if (u.size() != cols_) throw DimensionError("DifferenceOperator::apply: size mismatch");
    std::vector<double> out(rows_);
    apply(u, out);
    return out;
  }

  void apply_transpose(std::span<const double> v, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t t = 0; t < rows_; ++t)
      for (std::size_t j = 0; j < width(); ++j) out[t + j] += coef_[t * width() + j] * v[t];
  }

  std::vector<double> apply_transpose(std::span<const double> v) const {
    if (v.size() != rows_) throw DimensionError("DifferenceOperator::apply_transpose: size mismatch");
    std::vector<double> out(cols_);
    apply_transpose(v, out);
    return out;
  }

  /// rho D'D + I, bandwidth = order.
  BandedMatrix gram_plus_identity(double rho) const {
    BandedMatrix m(cols_, static_cast<std::size_t>(order_));
    for (std::size_t i = 0; i < cols_; ++i) m.at(i, i) = 1.0;
    for (std::size_t t = 0; t < rows_; ++t)
      for (std::size_t j = 0; j < width(); ++j)
        for (std::size_t k = 0; k <= j; ++k)
          m.at(t + j, t + k) += rho * coef_[t * width() + j] * coef_[t * width() + k];
    return m;
  }

  /// |D u|_1
  double l1_norm(std::span<const double> u) const {
    double s = 0.0;
    for (double v : apply(u)) s += std::abs(v);
    return s;
  }

 private:
  std::size_t width() const noexcept { return static_cast<std::size_t>(order_) + 1; }

  int order_;
  std::vector<double> spacing_;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> coef_;
};

struct AdmmConfig {
  double rho = 1.0;
  int max_iter = 5000;
  double tol_primal = 1e-8;
  double tol_dual = 1e-8;
  // Order 2 only: split alpha = D1 u (weighted first differences) and solve
  // the alpha step with the exact weighted TV dynamic program instead of
  // soft-thresholding alpha = D2 u. Same problem, far fewer iterations.
  bool nested_split = true;
  // Residual balancing: rho is multiplied (divided) by balance_tau when the
  // primal residual exceeds balance_mu times the dual one (or vice versa).
  bool balance_rho = true;
  double balance_mu = 10.0;
  double balance_tau = 2.0;
};

/// Split and dual variables; passing the state of a previous call warm-starts
/// the next one.
struct AdmmState {
  std::vector<double> alpha;
  std::vector<double> nu;
  double rho = 0.0;  // last penalty parameter; 0 = start from the config value
};

struct AdmmResult {
  std::vector<double> u;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
};

/// ADMM for argmin 1/2 |u - ubar|^2 + lambda |D u|_1 with a weighted
/// difference operator D. The banded factorization of rho D'D + I is built
/// once per rho and reused.
class WeightedTvProx {
 public:
  WeightedTvProx(DifferenceOperator op, AdmmConfig cfg)
      : op_(std::move(op)), cfg_(check(cfg)), split_(split_operator(op_, cfg_)),
        factor_(split_.gram_plus_identity(cfg_.rho)) {
    if (nested()) {
      // D2 = diag(1 / spacing_t) * (first difference) * D1
      edge_.resize(op_.rows());
      for (std::size_t t = 0; t < edge_.size(); ++t) edge_[t] = 1.0 / op_.spacing()[t];
    }
  }

  const DifferenceOperator& op() const noexcept { return op_; }
  const AdmmConfig& config() const noexcept { return cfg_; }

  AdmmResult operator()(std::span<const double> ubar, double lambda, AdmmState* state = nullptr) const {
    detail::require_finite(ubar, "prox_weighted_admm");
    detail::require_lambda(lambda, "prox_weighted_admm");
    const std::size_t n = op_.cols(), m = split_.rows();
    if (ubar.size() != n) throw DimensionError("prox_weighted_admm: operator built for another length");

    AdmmState local;
    AdmmState& st = state ? *state : local;
    if (st.alpha.size() != m || st.nu.size() != m) {
      st.alpha.assign(m, 0.0);
      st.nu.assign(m, 0.0);
      st.rho = 0.0;
    }

    double rho = st.rho > 0.0 ? st.rho : cfg_.rho;
    std::optional<BandedCholesky> rescaled;
    if (rho != cfg_.rho) rescaled.emplace(split_.gram_plus_identity(rho));
    std::vector<double> rhs(n), tmp(n), du(m), diff(m), alpha_prev(m), weights(edge_.size());
    AdmmResult res;
    for (int it = 1; it <= cfg_.max_iter; ++it) {
      // u <- (rho D'D + I)^{-1} (ubar + D'nu + rho D'alpha)
      for (std::size_t i = 0; i < m; ++i) diff[i] = st.nu[i] + rho * st.alpha[i];
      split_.apply_transpose(diff, tmp);
      for (std::size_t i = 0; i < n; ++i) rhs[i] = ubar[i] + tmp[i];
      res.u = rescaled ? rescaled->solve(rhs) : factor_.solve(rhs);

      split_.apply(res.u, du);
      alpha_prev = st.alpha;
      for (std::size_t i = 0; i < m; ++i) diff[i] = du[i] - st.nu[i] / rho;
      if (nested()) {
        for (std::size_t t = 0; t < weights.size(); ++t) weights[t] = lambda / rho * edge_[t];
        st.alpha = detail::tv_dp(diff, [&weights](std::size_t k) { return weights[k]; });
      } else {
        const double kappa = lambda / rho;
        for (std::size_t i = 0; i < m; ++i) st.alpha[i] = soft_threshold(diff[i], kappa);
      }
      for (std::size_t i = 0; i < m; ++i) {
        diff[i] = st.alpha[i] - du[i];
        st.nu[i] += rho * diff[i];
      }

      res.iterations = it;
      res.primal_residual = detail::norm2(diff);
      for (std::size_t i = 0; i < m; ++i) diff[i] = st.alpha[i] - alpha_prev[i];
      split_.apply_transpose(diff, tmp);
      res.dual_residual = rho * detail::norm2(tmp);
      if (res.primal_residual <= cfg_.tol_primal && res.dual_residual <= cfg_.tol_dual) {
        st.rho = rho;
        if (nested()) integrate(ubar, st.alpha, res.u);
        return res;
      }
      if (cfg_.balance_rho) {
        double next = rho;
        if (res.primal_residual > cfg_.balance_mu * res.dual_residual)
          next = rho * cfg_.balance_tau;
        else if (res.dual_residual > cfg_.balance_mu * res.primal_residual)
          next = rho / cfg_.balance_tau;
        if (next != rho) {
          rho = next;
          rescaled.emplace(split_.gram_plus_identity(rho));
        }
      }
    }
    st.rho = rho;
    throw AdmmConvergenceError(res.iterations, res.primal_residual, res.dual_residual);
  }

 private:
  static const AdmmConfig& check(const AdmmConfig& cfg) {
    if (!(cfg.rho > 0.0) || cfg.max_iter < 1 || !(cfg.tol_primal > 0.0) || !(cfg.tol_dual > 0.0))
      throw std::invalid_argument("AdmmConfig: rho, max_iter and tolerances must be positive");
    if (cfg.balance_rho && !(cfg.balance_mu > 1.0 && cfg.balance_tau > 1.0))
      throw std::invalid_argument("AdmmConfig: balance_mu and balance_tau must exceed 1");
    return cfg;
  }

  static DifferenceOperator split_operator(const DifferenceOperator& op, const AdmmConfig& cfg) {
    if (op.order() == 2 && cfg.nested_split) return DifferenceOperator(op.spacing(), 1);
    return op;
  }

  bool nested() const noexcept { return op_.order() == 2 && cfg_.nested_split; }

  // u with D1 u = alpha exactly, offset fitted to ubar; its second
  // differences are then exactly sparse where alpha is flat.
  void integrate(std::span<const double> ubar, std::span<const double> alpha,
                 std::vector<double>& u) const {
    const auto sp = op_.spacing();
    u[0] = 0.0;
    for (std::size_t t = 0; t + 1 < u.size(); ++t) u[t + 1] = u[t] + sp[t] * alpha[t];
    double shift = 0.0;
    for (std::size_t t = 0; t < u.size(); ++t) shift += ubar[t] - u[t];
    shift /= static_cast<double>(u.size());
    for (double& v : u) v += shift;
  }

  DifferenceOperator op_;
  AdmmConfig cfg_;
  DifferenceOperator split_;  // operator whose image alpha tracks
  BandedCholesky factor_;
  std::vector<double> edge_;
};

inline std::vector<double> prox_weighted_admm(std::span<const double> ubar, double lambda,
                                              const DifferenceOperator& op,
                                              const AdmmConfig& cfg = {}) {
  return WeightedTvProx(op, cfg)(ubar, lambda).u;
}

}  // namespace burstscan
