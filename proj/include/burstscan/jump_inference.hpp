#pragma once

// Sample-splitting p-values for the jumps of a segmentation.
//
// Documents are thinned into a train half (used to place jumps) and a test
// half (used to score them). Each jump gets a two-proportion likelihood
// ratio statistic over `delta` test points on either side, compared with a
// null built from windows that sit inside long constant stretches of the
// train fit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "burstscan/errors.hpp"
#include "burstscan/likelihood.hpp"
#include "burstscan/parallel.hpp"
#include "burstscan/random.hpp"
#include "burstscan/segmentation.hpp"
#include "burstscan/stream.hpp"

namespace burstscan {

struct SplitPair {
  StreamSeries train;
  StreamSeries test;
  std::uint64_t seed = 0;
};

/// Each document lands in train with probability 1/2: n_train ~ Bin(n, 1/2),
/// y_train ~ Hypergeometric(n, y, n_train). Days left with no documents in a
/// half are dropped from that half.
inline SplitPair split_sample(const StreamSeries& s, std::uint64_t seed) {
  if (s.empty()) throw EmptySeriesError("split_sample: empty series");
  SplitMix64 rng(seed);
  std::vector<Date> dtr, dte;
  std::vector<std::int64_t> ytr, ntr, yte, nte;
  for (const auto& p : s.points()) {
    const std::int64_t n1 = sample_binomial(rng, p.n, 0.5);
    const std::int64_t y1 = sample_hypergeometric(rng, p.n, p.y, n1);
    if (n1 > 0) {
      dtr.push_back(p.time);
      ytr.push_back(y1);
      ntr.push_back(n1);
    }
    if (p.n - n1 > 0) {
      dte.push_back(p.time);
      yte.push_back(p.y - y1);
      nte.push_back(p.n - n1);
    }
  }
  return {StreamSeries(s.tag(), dtr, ytr, ntr), StreamSeries(s.tag(), dte, yte, nte), seed};
}

namespace detail {

// y log p + (n - y) log(1 - p) at the MLE p = y / n, with 0 log 0 = 0.
inline double binomial_loglik_at_mle(double y, double n) {
  double v = 0.0;
  if (y > 0.0) v += y * std::log(y / n);
  if (n - y > 0.0) v += (n - y) * std::log((n - y) / n);
  return v;
}

inline double two_sample_lrt(double yl, double nl, double yr, double nr) {
  const double stat = 2.0 * (binomial_loglik_at_mle(yl, nl) + binomial_loglik_at_mle(yr, nr) -
                             binomial_loglik_at_mle(yl + yr, nl + nr));
  return std::max(stat, 0.0);
}

}  // namespace detail

/// Likelihood ratio statistic for equal proportions in the `delta` points
/// left of gap t_hat (ending at t_hat) and the `delta` points right of it.
/// Windows are clipped at the series ends.
inline double jump_lrt(const StreamSeries& s, std::size_t t_hat, std::size_t delta) {
  if (delta == 0) throw WindowError("jump_lrt: delta must be positive");
  if (t_hat + 1 >= s.size())
    throw WindowError("jump_lrt: gap " + std::to_string(t_hat) + " has no points on its right");
  const std::size_t lo = t_hat + 1 > delta ? t_hat + 1 - delta : 0;
  const std::size_t hi = std::min(s.size(), t_hat + 1 + delta);
  double yl = 0, nl = 0, yr = 0, nr = 0;
  for (std::size_t j = lo; j <= t_hat; ++j) {
    yl += static_cast<double>(s[j].y);
    nl += static_cast<double>(s[j].n);
  }
  for (std::size_t j = t_hat + 1; j < hi; ++j) {
    yr += static_cast<double>(s[j].y);
    nr += static_cast<double>(s[j].n);
  }
  return detail::two_sample_lrt(yl, nl, yr, nr);
}

/// Inclusive index range [first, last].
struct IndexInterval {
  std::size_t first = 0;
  std::size_t last = 0;
  std::size_t length() const noexcept { return last - first + 1; }
};

/// Maximal runs of constant fitted proportion (no jump above jump_tol inside)
/// with at least 2 delta + 1 points.
inline std::vector<IndexInterval> quiet_stretches(const SegmentedFit& fit, std::size_t delta,
                                                  double jump_tol = kDefaultJumpTol) {
  std::vector<IndexInterval> out;
  const std::size_t n = fit.p_hat.size();
  if (n == 0) return out;
  std::size_t first = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const bool end = t + 1 == n || std::abs(fit.p_hat[t + 1] - fit.p_hat[t]) > jump_tol;
    if (!end) continue;
    if (t - first + 1 >= 2 * delta + 1) out.push_back({first, t});
    first = t + 1;
  }
  return out;
}

/// B null statistics, sorted ascending. Replicate r (generator seed + r)
/// picks one of the placements of 2 delta consecutive points inside a
/// stretch uniformly, reallocates the window's successes over its days with
/// the daily totals fixed, and evaluates the statistic at the window centre.
inline std::vector<double> jump_null_distribution(const StreamSeries& s,
                                                  std::span<const IndexInterval> stretches,
                                                  std::size_t delta, std::size_t B, std::uint64_t seed,
                                                  unsigned threads = 1) {
  if (B < 1) throw std::invalid_argument("jump_null_distribution: need at least one replicate");
  if (delta == 0) throw WindowError("jump_null_distribution: delta must be positive");
  const std::size_t width = 2 * delta;
  std::vector<std::size_t> starts;  // first placement of each stretch
  std::vector<std::size_t> offsets{0};
  for (const auto& st : stretches) {
    if (st.last >= s.size() || st.first > st.last)
      throw std::out_of_range("jump_null_distribution: stretch outside the series");
    if (st.length() < width) continue;
    starts.push_back(st.first);
    offsets.push_back(offsets.back() + st.length() - width + 1);
  }
  const std::size_t placements = offsets.back();
  if (placements == 0)
    throw NullConstructionError("no constant stretch holds a window of " + std::to_string(width) +
                                " points for '" + s.tag() + "'");

  std::vector<double> null(B);
  parallel_for(B, threads, [&](std::size_t r) {
    SplitMix64 rng(seed + r);
    const std::size_t k = rng.below(placements);
    const std::size_t which =
        static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), k) - offsets.begin()) - 1;
    const std::size_t start = starts[which] + (k - offsets[which]);
    std::vector<std::int64_t> cap(width), y(width);
    std::int64_t total = 0;
    for (std::size_t j = 0; j < width; ++j) {
      cap[j] = s[start + j].n;
      total += s[start + j].y;
    }
    allocate_successes(rng, total, cap, y);
    double yl = 0, nl = 0, yr = 0, nr = 0;
    for (std::size_t j = 0; j < delta; ++j) {
      yl += static_cast<double>(y[j]);
      nl += static_cast<double>(cap[j]);
      yr += static_cast<double>(y[delta + j]);
      nr += static_cast<double>(cap[delta + j]);
    }
    null[r] = detail::two_sample_lrt(yl, nl, yr, nr);
  });
  std::sort(null.begin(), null.end());
  return null;
}

/// (1 + #{null >= observed}) / (B + 1) against a sorted null sample.
inline double upper_tail_pvalue(std::span<const double> sorted_null, double observed) {
  const auto it = std::lower_bound(sorted_null.begin(), sorted_null.end(), observed);
  const auto exceed = static_cast<std::size_t>(sorted_null.end() - it);
  return static_cast<double>(1 + exceed) / static_cast<double>(sorted_null.size() + 1);
}

struct JumpRecord {
  JumpLocation location;  // as found on the train half
  double lrt_stat = 0.0;
  double p_value = 1.0;
  std::size_t null_sample_size = 0;
};

struct JumpScores {
  std::vector<JumpRecord> records;  // ascending p, then |magnitude| descending
  std::vector<std::pair<JumpLocation, std::string>> errors;
  std::vector<double> null;  // the shared sorted null sample
};

namespace detail {

// Index of the last point dated on or before `d`, if any.
inline std::optional<std::size_t> last_on_or_before(const StreamSeries& s, Date d) {
  const auto& pts = s.points();
  auto it = std::upper_bound(pts.begin(), pts.end(), d,
                             [](Date v, const ObservationPoint& p) { return v < p.time; });
  if (it == pts.begin()) return std::nullopt;
  return static_cast<std::size_t>(it - pts.begin()) - 1;
}

// Train-fit stretches translated to test indices through their dates.
inline std::vector<IndexInterval> map_stretches(const SegmentedFit& train_fit, const StreamSeries& test,
                                                std::span<const IndexInterval> stretches) {
  std::vector<IndexInterval> out;
  const auto& pts = test.points();
  for (const auto& st : stretches) {
    const Date a = train_fit.dates[st.first], b = train_fit.dates[st.last];
    auto first = std::lower_bound(pts.begin(), pts.end(), a,
                                  [](const ObservationPoint& p, Date v) { return p.time < v; });
    auto last = detail::last_on_or_before(test, b);
    if (first == pts.end() || !last) continue;
    const auto f = static_cast<std::size_t>(first - pts.begin());
    if (f <= *last) out.push_back({f, *last});
  }
  return out;
}

}  // namespace detail

/// Scores the jumps of `train_fit` (fitted on split.train) on split.test.
/// One null sample is shared by all jumps of the stream. A jump whose
/// window cannot be formed on the test half is reported in `errors`.
inline JumpScores jump_pvalues(const SplitPair& split, const SegmentedFit& train_fit, std::size_t delta,
                               std::size_t B, std::uint64_t seed, double jump_tol = kDefaultJumpTol,
                               unsigned threads = 1) {
  if (train_fit.dates.size() != train_fit.p_hat.size() || train_fit.size() != split.train.size())
    throw DimensionError("jump_pvalues: fit does not belong to the train half");
  const auto stretches = quiet_stretches(train_fit, delta, jump_tol);
  const auto test_stretches = detail::map_stretches(train_fit, split.test, stretches);

  JumpScores out;
  out.null = jump_null_distribution(split.test, test_stretches, delta, B, seed, threads);
  for (const auto& jump : extract_jumps(train_fit, jump_tol)) {
    try {
      const auto gap = detail::last_on_or_before(split.test, jump.left_date);
      if (!gap) throw WindowError("jump_lrt: no test points left of " + format_date(jump.left_date));
      JumpRecord rec;
      rec.location = jump;
      rec.lrt_stat = jump_lrt(split.test, *gap, delta);
      rec.p_value = upper_tail_pvalue(out.null, rec.lrt_stat);
      rec.null_sample_size = out.null.size();
      out.records.push_back(rec);
    } catch (const WindowError& e) {
      out.errors.emplace_back(jump, e.what());
    }
  }
  std::stable_sort(out.records.begin(), out.records.end(), [](const JumpRecord& a, const JumpRecord& b) {
    if (a.p_value != b.p_value) return a.p_value < b.p_value;
    return std::abs(a.location.magnitude) > std::abs(b.location.magnitude);
  });
  return out;
}

/// Piecewise-constant fit with breaks after the given points, each segment
/// at its binomial MLE (logit clamped). Recorded as the `pruned` penalty.
inline SegmentedFit segment_mle_fit(const StreamSeries& s, std::span<const std::size_t> breaks) {
  if (s.empty()) throw EmptySeriesError("segment_mle_fit: empty series");
  std::vector<std::size_t> cuts(breaks.begin(), breaks.end());
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  if (!cuts.empty() && cuts.back() + 1 >= s.size())
    throw std::out_of_range("segment_mle_fit: break after the last point");
  cuts.push_back(s.size() - 1);

  SegmentedFit fit;
  fit.penalty = PenaltySpec{PenaltyKind::pruned, {}};
  fit.theta_hat.resize(s.size());
  std::size_t first = 0;
  for (std::size_t last : cuts) {
    double y = 0, n = 0;
    for (std::size_t t = first; t <= last; ++t) {
      y += static_cast<double>(s[t].y);
      n += static_cast<double>(s[t].n);
    }
    const double theta = logit_clamped(y / n);
    std::fill(fit.theta_hat.begin() + static_cast<std::ptrdiff_t>(first),
              fit.theta_hat.begin() + static_cast<std::ptrdiff_t>(last) + 1, theta);
    first = last + 1;
  }
  fit.converged = true;
  const double ell = lipschitz_bound(s);
  detail::finish_fit(fit, s, ell, ell);
  return fit;
}

/// Keeps the scored jumps with p <= alpha and refits `series` by segment
/// MLEs between them. Jumps are placed by date: the break follows the last
/// point of `series` dated on or before the jump's left date.
inline SegmentedFit prune_and_refit(const StreamSeries& series, std::span<const JumpRecord> records,
                                    double alpha) {
  std::vector<std::size_t> breaks;
  for (const auto& r : records) {
    if (!(r.p_value <= alpha)) continue;
    const auto gap = detail::last_on_or_before(series, r.location.left_date);
    if (gap && *gap + 1 < series.size()) breaks.push_back(*gap);
  }
  return segment_mle_fit(series, breaks);
}

}  // namespace burstscan
