#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "burstscan/errors.hpp"

namespace burstscan {

/// Calendar day. Sub-day timestamps are not represented.
using Date = std::chrono::sys_days;

inline std::optional<Date> try_parse_date(std::string_view text) {
  // strict YYYY-MM-DD
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0, d = 0;
  auto parse = [&](std::size_t pos, std::size_t len, auto& out) {
    const char* first = text.data() + pos;
    auto [ptr, ec] = std::from_chars(first, first + len, out);
    return ec == std::errc{} && ptr == first + len;
  };
  if (!parse(0, 4, y) || !parse(5, 2, m) || !parse(8, 2, d)) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return Date{ymd};
}

inline std::string format_date(Date date) {
  const std::chrono::year_month_day ymd{date};
  char buf[16];
  const int y = static_cast<int>(ymd.year());
  const unsigned m = static_cast<unsigned>(ymd.month());
  const unsigned d = static_cast<unsigned>(ymd.day());
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", y, m, d);
  return buf;
}

inline long days_between(Date a, Date b) { return static_cast<long>((b - a).count()); }

struct ObservationPoint {
  Date time;
  std::size_t index = 0;
  std::int64_t y = 0;  // tagged documents
  std::int64_t n = 0;  // all documents that day

  friend bool operator==(const ObservationPoint&, const ObservationPoint&) = default;
};

/// Daily (successes, trials) series for one tag. Immutable once built:
/// dates strictly increasing, 0 <= y <= n, n >= 1, and spacing[i] is the
/// number of calendar days between point i and point i + 1.
class StreamSeries {
 public:
  StreamSeries() = default;

  StreamSeries(std::string tag, std::span<const Date> dates, std::span<const std::int64_t> y,
               std::span<const std::int64_t> n)
      : tag_(std::move(tag)) {
    if (dates.size() != y.size() || dates.size() != n.size())
      throw DimensionError("stream '" + tag_ + "': dates, y and n differ in length");
    points_.reserve(dates.size());
    for (std::size_t i = 0; i < dates.size(); ++i) {
      if (n[i] < 1)
        throw ValidationError("stream '" + tag_ + "' " + format_date(dates[i]) +
                              ": total must be >= 1");
      if (y[i] < 0 || y[i] > n[i])
        throw ValidationError("stream '" + tag_ + "' " + format_date(dates[i]) +
                              ": count must lie in [0, total]");
      if (i > 0 && dates[i] <= dates[i - 1])
        throw ValidationError("stream '" + tag_ + "': dates must be strictly increasing");
      points_.push_back({dates[i], i, y[i], n[i]});
    }
    cache();
  }

  const std::string& tag() const noexcept { return tag_; }
  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }

  std::span<const ObservationPoint> points() const noexcept { return points_; }
  const ObservationPoint& operator[](std::size_t i) const { return points_[i]; }
  Date date(std::size_t i) const { return points_[i].time; }

  /// Gap lengths in days; size() - 1 entries.
  std::span<const double> spacing() const noexcept { return spacing_; }
  std::span<const double> successes() const noexcept { return y_; }
  std::span<const double> trials() const noexcept { return n_; }

  bool equispaced() const noexcept {
    return std::all_of(spacing_.begin(), spacing_.end(), [](double d) { return d == 1.0; });
  }

  std::vector<Date> dates() const {
    std::vector<Date> out;
    out.reserve(points_.size());
    for (const auto& p : points_) out.push_back(p.time);
    return out;
  }

  /// Sub-series keeping the given (sorted, unique) positions; spacing is
  /// recomputed from the surviving dates.
  StreamSeries select(std::span<const std::size_t> keep) const {
    std::vector<Date> d;
    std::vector<std::int64_t> y, n;
    d.reserve(keep.size());
    y.reserve(keep.size());
    n.reserve(keep.size());
    for (auto i : keep) {
      d.push_back(points_.at(i).time);
      y.push_back(points_[i].y);
      n.push_back(points_[i].n);
    }
    return StreamSeries(tag_, d, y, n);
  }

  StreamSeries with_tag(std::string tag) const {
    StreamSeries out = *this;
    out.tag_ = std::move(tag);
    return out;
  }

 private:
  void cache() {
    y_.resize(points_.size());
    n_.resize(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
      y_[i] = static_cast<double>(points_[i].y);
      n_[i] = static_cast<double>(points_[i].n);
    }
    spacing_.clear();
    for (std::size_t i = 1; i < points_.size(); ++i)
      spacing_.push_back(static_cast<double>(days_between(points_[i - 1].time, points_[i].time)));
  }

  std::string tag_;
  std::vector<ObservationPoint> points_;
  std::vector<double> spacing_;
  std::vector<double> y_;
  std::vector<double> n_;
};

struct PreprocessConfig {
  std::int64_t min_daily_total = 1;
};

/// One input row: `date,tag,count,total`.
struct RawRecord {
  std::size_t row = 0;  // 1-based line number in the source
  Date date;
  std::string tag;
  std::int64_t count = 0;
  std::int64_t total = 0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

inline bool parse_int(std::string_view s, std::int64_t& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace detail

/// Reads `date,tag,count,total` rows. Blank lines are skipped; the header
/// line is required. Extra trailing columns (derived outputs) are ignored.
inline std::vector<RawRecord> parse_records(std::istream& in) {
  std::vector<RawRecord> rows;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  std::size_t width = 4;
  while (std::getline(in, line)) {
    ++lineno;
    const auto text = detail::trim(line);
    if (text.empty()) continue;
    const auto fields = detail::split_csv(text);
    if (!header_seen) {
      if (fields.size() < 4 || fields[0] != "date" || fields[1] != "tag" ||
          fields[2] != "count" || fields[3] != "total")
        throw ParseError(lineno, "expected header 'date,tag,count,total'");
      header_seen = true;
      width = fields.size();
      continue;
    }
    if (fields.size() != width)
      throw ParseError(lineno, "expected " + std::to_string(width) + " fields");
    RawRecord r;
    r.row = lineno;
    auto date = try_parse_date(fields[0]);
    if (!date) throw ParseError(lineno, "bad date '" + std::string(fields[0]) + "'");
    r.date = *date;
    if (fields[1].empty()) throw ParseError(lineno, "empty tag");
    r.tag = std::string(fields[1]);
    if (!detail::parse_int(fields[2], r.count) || r.count < 0)
      throw ParseError(lineno, "bad count '" + std::string(fields[2]) + "'");
    if (!detail::parse_int(fields[3], r.total) || r.total < 0)
      throw ParseError(lineno, "bad total '" + std::string(fields[3]) + "'");
    rows.push_back(std::move(r));
  }
  if (!header_seen) throw ParseError(lineno, "missing header");
  return rows;
}

/// Builds one series per tag over the union of input days. A day present in
/// the input but lacking a tag contributes y = 0 with that day's total. Days
/// with total 0 carry no documents and are treated like absent days.
inline std::map<std::string, StreamSeries> parse_streams(std::span<const RawRecord> rows) {
  std::map<Date, std::pair<std::int64_t, std::size_t>> totals;  // total, first row
  std::map<std::string, std::map<Date, std::int64_t>> counts;
  for (const auto& r : rows) {
    if (r.count > r.total)
      throw ValidationError("row " + std::to_string(r.row) + ": count " +
                            std::to_string(r.count) + " exceeds total " +
                            std::to_string(r.total));
    auto [it, inserted] = totals.try_emplace(r.date, r.total, r.row);
    if (!inserted && it->second.first != r.total)
      throw ValidationError("row " + std::to_string(r.row) + ": total for " +
                            format_date(r.date) + " disagrees with row " +
                            std::to_string(it->second.second));
    auto& per_tag = counts[r.tag];
    if (!per_tag.emplace(r.date, r.count).second)
      throw ValidationError("row " + std::to_string(r.row) + ": duplicate (date, tag)");
  }

  std::map<std::string, StreamSeries> out;
  for (const auto& [tag, per_day] : counts) {
    std::vector<Date> d;
    std::vector<std::int64_t> y, n;
    for (const auto& [date, tot] : totals) {
      if (tot.first == 0) continue;
      auto it = per_day.find(date);
      d.push_back(date);
      y.push_back(it == per_day.end() ? 0 : it->second);
      n.push_back(tot.first);
    }
    out.emplace(tag, StreamSeries(tag, d, y, n));
  }
  return out;
}

inline std::map<std::string, StreamSeries> read_streams(std::istream& in) {
  const auto rows = parse_records(in);
  return parse_streams(rows);
}

inline void write_series(std::ostream& os, const StreamSeries& s, bool with_proportion = false) {
  for (const auto& p : s.points()) {
    os << format_date(p.time) << ',' << s.tag() << ',' << p.y << ',' << p.n;
    if (with_proportion) {
      char buf[32];
      auto res = std::to_chars(buf, buf + sizeof buf,
                               static_cast<double>(p.y) / static_cast<double>(p.n));
      os << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    os << '\n';
  }
}

/// Writes the input schema; `with_proportion` appends a derived p_raw column.
inline void write_streams(std::ostream& os, const std::map<std::string, StreamSeries>& streams,
                          bool with_proportion = false) {
  os << "date,tag,count,total" << (with_proportion ? ",p_raw" : "") << '\n';
  for (const auto& [tag, s] : streams) write_series(os, s, with_proportion);
}

/// Drops days whose total falls below the threshold; gaps widen across them.
inline StreamSeries filter_low_traffic(const StreamSeries& series, const PreprocessConfig& cfg) {
  if (cfg.min_daily_total < 1) throw ValidationError("min_daily_total must be >= 1");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < series.size(); ++i)
    if (series[i].n >= cfg.min_daily_total) keep.push_back(i);
  if (keep.empty())
    throw EmptySeriesError("stream '" + series.tag() + "': no day reaches min_daily_total " +
                           std::to_string(cfg.min_daily_total));
  return series.select(keep);
}

struct GlobalProportion {
  double p_bar = 0.0;  // sum y / sum n
  double n_bar = 0.0;  // mean daily total
};

inline GlobalProportion global_proportion(const StreamSeries& series) {
  if (series.empty()) throw EmptySeriesError("global_proportion of an empty series");
  double sy = 0.0, sn = 0.0;
  for (const auto& p : series.points()) {
    sy += static_cast<double>(p.y);
    sn += static_cast<double>(p.n);
  }
  return {sy / sn, sn / static_cast<double>(series.size())};
}

}  // namespace burstscan
