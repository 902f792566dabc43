#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "burstscan/errors.hpp"
#include "burstscan/random.hpp"
#include "burstscan/stream.hpp"

namespace burstscan {

/// A run of `length` days with p = intercept + slope * s at the s-th day of
/// the run (s = 1, ..., length). slope = 0 gives a constant level.
struct SegmentSpec {
  std::size_t length = 0;
  double intercept = 0.0;
  double slope = 0.0;
  std::size_t line = 0;  // source line when parsed from text

  double p_at(std::size_t s) const { return intercept + slope * static_cast<double>(s); }
};

struct PiecewiseSpec {
  std::string tag = "SYN";
  std::vector<SegmentSpec> segments;
  std::vector<std::int64_t> n_per_day{200};  // one entry = same total every day
  std::uint64_t seed = 0;
  Date start = Date{std::chrono::year{2000} / 1 / 1};

  std::size_t total_length() const {
    std::size_t n = 0;
    for (const auto& s : segments) n += s.length;
    return n;
  }

  void validate() const {
    if (segments.empty()) throw SpecError(0, "spec has no segments");
    if (n_per_day.empty()) throw SpecError(0, "spec has no daily totals");
    for (auto v : n_per_day)
      if (v < 1) throw SpecError(0, "daily totals must be >= 1");
    if (n_per_day.size() != 1 && n_per_day.size() != total_length())
      throw SpecError(0, "per-day totals list has " + std::to_string(n_per_day.size()) +
                             " entries for " + std::to_string(total_length()) + " days");
    for (const auto& s : segments) {
      if (s.length == 0) throw SpecError(s.line, "segment length must be positive");
      const double a = s.p_at(1), b = s.p_at(s.length);
      if (!(a >= 0.0 && a <= 1.0 && b >= 0.0 && b <= 1.0))
        throw SpecError(s.line, "segment proportion leaves [0, 1]");
    }
  }
};

/// y_t ~ Bin(n_t, p_t) independently on consecutive days.
inline StreamSeries gen_stream(const PiecewiseSpec& spec) {
  spec.validate();
  const std::size_t total = spec.total_length();
  SplitMix64 rng(spec.seed);
  std::vector<Date> dates(total);
  std::vector<std::int64_t> y(total), n(total);
  std::size_t t = 0;
  for (const auto& seg : spec.segments) {
    for (std::size_t s = 1; s <= seg.length; ++s, ++t) {
      dates[t] = spec.start + std::chrono::days{static_cast<long>(t)};
      n[t] = spec.n_per_day.size() == 1 ? spec.n_per_day[0] : spec.n_per_day[t];
      y[t] = sample_binomial(rng, n[t], std::clamp(seg.p_at(s), 0.0, 1.0));
    }
  }
  return StreamSeries(spec.tag, dates, y, n);
}

inline StreamSeries gen_null_stream(std::size_t length, std::int64_t n_per_day, double p,
                                    std::uint64_t seed, std::string tag = "NULL") {
  PiecewiseSpec spec;
  spec.tag = std::move(tag);
  spec.segments = {{length, p, 0.0, 0}};
  spec.n_per_day = {n_per_day};
  spec.seed = seed;
  return gen_stream(spec);
}

/// Three levels (0.5, 0.6, 0.8) followed by a slow ramp 0.55 + s / 3000 over
/// 653 days, 200 documents per day: 1203 days in total.
inline PiecewiseSpec benchmark_spec(std::uint64_t seed) {
  PiecewiseSpec spec;
  spec.tag = "BENCH";
  spec.segments = {{200, 0.5, 0.0, 0}, {300, 0.6, 0.0, 0}, {50, 0.8, 0.0, 0},
                   {653, 0.55, 1.0 / 3000.0, 0}};
  spec.n_per_day = {200};
  spec.seed = seed;
  return spec;
}

namespace detail {

inline double parse_real(std::string_view text, std::size_t line) {
  // accepts plain decimals and simple ratios such as 1/3000
  auto one = [&](std::string_view s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
      throw SpecError(line, "bad number '" + std::string(text) + "'");
    return v;
  };
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) return one(text);
  const double den = one(trim(text.substr(slash + 1)));
  if (den == 0.0) throw SpecError(line, "division by zero in '" + std::string(text) + "'");
  return one(trim(text.substr(0, slash))) / den;
}

inline std::int64_t parse_count(std::string_view text, std::size_t line) {
  std::int64_t v = 0;
  if (!parse_int(text, v)) throw SpecError(line, "bad integer '" + std::string(text) + "'");
  return v;
}

}  // namespace detail

/// Reads a plain-text spec:
///
///   tag = BENCH
///   seed = 7
///   n = 200            # or a comma-separated per-day list
///   start = 2000-01-01
///   [segment]
///   length = 200
///   p = 0.5            # constant level, or: intercept = ..., slope = ...
inline PiecewiseSpec parse_piecewise_spec(std::istream& in) {
  PiecewiseSpec spec;
  spec.segments.clear();
  std::string raw;
  std::size_t lineno = 0;
  SegmentSpec* current = nullptr;
  bool has_length = false;
  auto close_segment = [&] {
    if (current && !has_length) throw SpecError(current->line, "segment without length");
  };
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line == "[segment]") {
      close_segment();
      spec.segments.push_back({});
      current = &spec.segments.back();
      current->line = lineno;
      has_length = false;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw SpecError(lineno, "expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (current) {
      if (key == "length") {
        const auto len = detail::parse_count(value, lineno);
        if (len < 1) throw SpecError(lineno, "segment length must be positive");
        current->length = static_cast<std::size_t>(len);
        has_length = true;
      } else if (key == "p" || key == "intercept") {
        current->intercept = detail::parse_real(value, lineno);
      } else if (key == "slope") {
        current->slope = detail::parse_real(value, lineno);
      } else {
        throw SpecError(lineno, "unknown segment key '" + std::string(key) + "'");
      }
      continue;
    }
    if (key == "tag") {
      if (value.empty()) throw SpecError(lineno, "empty tag");
      spec.tag = std::string(value);
    } else if (key == "seed") {
      std::uint64_t s = 0;
      auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), s);
      if (ec != std::errc{} || ptr != value.data() + value.size())
        throw SpecError(lineno, "bad seed '" + std::string(value) + "'");
      spec.seed = s;
    } else if (key == "n") {
      spec.n_per_day.clear();
      for (auto f : detail::split_csv(value)) spec.n_per_day.push_back(detail::parse_count(f, lineno));
    } else if (key == "start") {
      auto d = try_parse_date(value);
      if (!d) throw SpecError(lineno, "bad date '" + std::string(value) + "'");
      spec.start = *d;
    } else {
      throw SpecError(lineno, "unknown key '" + std::string(key) + "'");
    }
  }
  close_segment();
  spec.validate();
  return spec;
}

inline void write_piecewise_spec(std::ostream& os, const PiecewiseSpec& spec) {
  auto real = [](double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  os << "tag = " << spec.tag << "\nseed = " << spec.seed << "\nn = ";
  for (std::size_t i = 0; i < spec.n_per_day.size(); ++i) os << (i ? "," : "") << spec.n_per_day[i];
  os << "\nstart = " << format_date(spec.start) << '\n';
  for (const auto& s : spec.segments) {
    os << "\n[segment]\nlength = " << s.length << '\n';
    if (s.slope == 0.0)
      os << "p = " << real(s.intercept) << '\n';
    else
      os << "intercept = " << real(s.intercept) << "\nslope = " << real(s.slope) << '\n';
  }
}

}  // namespace burstscan
