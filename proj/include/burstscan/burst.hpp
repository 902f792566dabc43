#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "burstscan/errors.hpp"
#include "burstscan/jump_inference.hpp"
#include "burstscan/likelihood.hpp"
#include "burstscan/segmentation.hpp"
#include "burstscan/stream.hpp"

namespace burstscan {

enum class BaselinePolicy { mean, median };

inline BaselinePolicy parse_baseline_policy(std::string_view s) {
  if (s == "mean") return BaselinePolicy::mean;
  if (s == "median") return BaselinePolicy::median;
  throw std::invalid_argument("unknown baseline policy '" + std::string(s) + "' (expected mean or median)");
}

/// p0 = p_bar + sqrt(p_bar (1 - p_bar) / n_bar): one binomial standard error
/// above the global proportion at the mean daily total. The median policy
/// replaces p_bar by the median daily proportion.
inline double baseline(const StreamSeries& s, BaselinePolicy policy = BaselinePolicy::mean) {
  if (s.empty()) throw EmptySeriesError("baseline: empty series");
  const auto g = global_proportion(s);
  double p = g.p_bar;
  if (policy == BaselinePolicy::median) {
    std::vector<double> raw(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) raw[i] = static_cast<double>(s[i].y) / static_cast<double>(s[i].n);
    std::sort(raw.begin(), raw.end());
    const std::size_t h = raw.size() / 2;
    p = raw.size() % 2 ? raw[h] : 0.5 * (raw[h - 1] + raw[h]);
  }
  if (p <= 0.0 || p >= 1.0)
    throw DegenerateError("baseline: proportion is " + std::string(p <= 0.0 ? "0" : "1") + " for '" +
                          s.tag() + "'");
  return p + std::sqrt(p * (1.0 - p) / g.n_bar);
}

/// Maximal runs with fitted proportion strictly above p0, in time order.
inline std::vector<IndexInterval> extract_bursts(const SegmentedFit& fit, double p0) {
  std::vector<IndexInterval> out;
  const auto& p = fit.p_hat;
  for (std::size_t t = 0; t < p.size();) {
    if (!(p[t] > p0)) {
      ++t;
      continue;
    }
    std::size_t end = t;
    while (end + 1 < p.size() && p[end + 1] > p0) ++end;
    out.push_back({t, end});
    t = end + 1;
  }
  return out;
}

namespace detail {

inline double clamp_probability(double p) {
  static const double lo = expit(-kThetaClamp), hi = expit(kThetaClamp);
  return std::clamp(p, lo, hi);
}

}  // namespace detail

/// S = sum over the interval of log L(p_hat_t) - log L(p0) for the binomial
/// kernel y log p + (n - y) log(1 - p). Probabilities are kept inside
/// [expit(-15), expit(15)].
inline double burst_strength(const StreamSeries& s, const SegmentedFit& fit, IndexInterval iv, double p0) {
  if (fit.p_hat.size() != s.size()) throw DimensionError("burst_strength: fit does not match the series");
  if (iv.first > iv.last || iv.last >= s.size()) throw std::out_of_range("burst_strength: interval out of range");
  const double q = detail::clamp_probability(p0);
  const double lq = std::log(q), lq1 = std::log1p(-q);
  detail::CompensatedSum acc;
  for (std::size_t t = iv.first; t <= iv.last; ++t) {
    const double p = detail::clamp_probability(fit.p_hat[t]);
    const double y = static_cast<double>(s[t].y), n = static_cast<double>(s[t].n);
    acc.add(y * (std::log(p) - lq) + (n - y) * (std::log1p(-p) - lq1));
  }
  return acc.value();
}

struct BurstRecord {
  std::string tag;
  Date start;
  Date end;
  Date peak;  // day with the largest raw proportion, earliest on ties
  double strength = 0.0;
  double baseline_p0 = 0.0;
  std::size_t first = 0;  // index range in the stream
  std::size_t last = 0;
};

struct BurstInput {
  const StreamSeries* series = nullptr;
  const SegmentedFit* fit = nullptr;
  double p0 = 0.0;
};

inline std::vector<BurstRecord> stream_bursts(const StreamSeries& s, const SegmentedFit& fit, double p0) {
  std::vector<BurstRecord> out;
  for (const auto& iv : extract_bursts(fit, p0)) {
    BurstRecord r;
    r.tag = s.tag();
    r.first = iv.first;
    r.last = iv.last;
    r.start = s.date(iv.first);
    r.end = s.date(iv.last);
    std::size_t peak = iv.first;
    for (std::size_t t = iv.first + 1; t <= iv.last; ++t)
      // a/b > c/d without division
      if (static_cast<double>(s[t].y) * static_cast<double>(s[peak].n) >
          static_cast<double>(s[peak].y) * static_cast<double>(s[t].n))
        peak = t;
    r.peak = s.date(peak);
    r.strength = burst_strength(s, fit, iv, p0);
    r.baseline_p0 = p0;
    out.push_back(std::move(r));
  }
  return out;
}

/// All bursts of all streams, strongest first; ties by tag, then start.
inline std::vector<BurstRecord> rank_bursts(std::span<const BurstInput> inputs) {
  std::vector<BurstRecord> all;
  for (const auto& in : inputs) {
    auto part = stream_bursts(*in.series, *in.fit, in.p0);
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  std::sort(all.begin(), all.end(), [](const BurstRecord& a, const BurstRecord& b) {
    if (a.strength != b.strength) return a.strength > b.strength;
    if (a.tag != b.tag) return a.tag < b.tag;
    return a.start < b.start;
  });
  return all;
}

}  // namespace burstscan
