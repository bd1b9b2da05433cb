#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <system_error>
#include <tuple>
#include <utility>
#include <vector>

#include "avband/error.hpp"
#include "avband/numeric.hpp"

namespace avband {

enum class Direction { kRoundTrip, kOneWayForward, kOneWayReverse };

inline constexpr std::string_view DirectionName(Direction d) {
  switch (d) {
    case Direction::kRoundTrip: return "round_trip";
    case Direction::kOneWayForward: return "one_way_forward";
    case Direction::kOneWayReverse: return "one_way_reverse";
  }
  return "round_trip";
}

inline std::optional<Direction> ParseDirection(std::string_view name) {
  for (Direction d : {Direction::kRoundTrip, Direction::kOneWayForward,
                      Direction::kOneWayReverse}) {
    if (DirectionName(d) == name) return d;
  }
  return std::nullopt;
}

// One delay observation for a packet of a given size.
struct ProbeSample {
  Bytes size = 0;
  Seconds delay = 0.0;
  Direction direction = Direction::kRoundTrip;
  std::uint64_t seq = 0;
  double sent_at = 0.0;  // wall-clock seconds since epoch, metadata only

  bool operator==(const ProbeSample&) const = default;
};

struct SampleSet {
  std::vector<ProbeSample> samples;
  std::string source;  // probe target, log file pair or simulation id

  bool empty() const { return samples.empty(); }
  std::size_t size() const { return samples.size(); }
};

struct SizeDelayStats {
  Bytes size = 0;
  std::int64_t count = 0;
  Seconds d_min = 0.0;
  Seconds d_mean = 0.0;
  Seconds d_stddev = 0.0;  // sample standard deviation, 0 for count 1
};

// Averages below this many samples are reported but flagged.
inline constexpr std::int64_t kRecommendedSamplesPerSize = 5;

namespace detail {

inline void RequireValidSample(const ProbeSample& s) {
  if (s.size < 1) {
    throw Error(ErrorKind::kInvalidArgument,
                "sample size must be >= 1 byte, got " + std::to_string(s.size));
  }
  if (!(s.delay >= 0.0) || !std::isfinite(s.delay)) {
    throw Error(ErrorKind::kInvalidArgument,
                "sample delay must be finite and >= 0");
  }
}

inline std::map<Bytes, std::vector<Seconds>> DelaysBySize(const SampleSet& set) {
  std::map<Bytes, std::vector<Seconds>> by_size;
  for (const auto& s : set.samples) by_size[s.size].push_back(s.delay);
  return by_size;
}

// Linear-interpolation quantile on sorted data (Hyndman-Fan type 7).
inline double SortedQuantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

// Partitions a mixed set into one set per direction.
inline std::map<Direction, SampleSet> SplitByDirection(const SampleSet& set) {
  std::map<Direction, SampleSet> out;
  for (const auto& s : set.samples) {
    auto& part = out[s.direction];
    part.source = set.source;
    part.samples.push_back(s);
  }
  return out;
}

// Per-size minimum, mean and spread, ordered by ascending size. All samples
// must share one direction; use SplitByDirection first for mixed sets.
inline std::vector<SizeDelayStats> Aggregate(const SampleSet& set,
                                             Warnings* warnings = nullptr) {
  if (set.empty()) throw Error(ErrorKind::kEmptySet, "no samples to aggregate");
  const Direction direction = set.samples.front().direction;
  for (const auto& s : set.samples) {
    detail::RequireValidSample(s);
    if (s.direction != direction) {
      throw Error(ErrorKind::kMixedDirections,
                  "sample set mixes " + std::string(DirectionName(direction)) +
                      " and " + std::string(DirectionName(s.direction)));
    }
  }

  std::vector<SizeDelayStats> out;
  for (const auto& [size, delays] : detail::DelaysBySize(set)) {
    SizeDelayStats st;
    st.size = size;
    st.count = static_cast<std::int64_t>(delays.size());
    st.d_min = *std::min_element(delays.begin(), delays.end());
    CompensatedSum sum;
    for (double d : delays) sum.Add(d);
    st.d_mean = sum.Value() / static_cast<double>(delays.size());
    // Rounding can push the mean a hair below the minimum for near-constant
    // data; the minimum is exact so clamp to it.
    st.d_mean = std::max(st.d_mean, st.d_min);
    if (delays.size() > 1) {
      CompensatedSum sq;
      for (double d : delays) sq.Add((d - st.d_mean) * (d - st.d_mean));
      st.d_stddev = std::sqrt(sq.Value() / static_cast<double>(delays.size() - 1));
    }
    if (warnings && st.count < kRecommendedSamplesPerSize) {
      warnings->push_back("size " + std::to_string(size) + " B has only " +
                          std::to_string(st.count) +
                          " sample(s); at least 5 recommended for averaging");
    }
    out.push_back(st);
  }
  return out;
}

// Drops samples whose delay exceeds median + k * IQR of their size group.
// The group minimum never exceeds the median, so it always survives.
inline SampleSet FilterOutliers(const SampleSet& set, double k) {
  if (!(k > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "outlier factor k must be > 0");
  }
  std::map<std::pair<Direction, Bytes>, double> threshold;
  {
    std::map<std::pair<Direction, Bytes>, std::vector<double>> groups;
    for (const auto& s : set.samples) groups[{s.direction, s.size}].push_back(s.delay);
    for (auto& [key, delays] : groups) {
      std::sort(delays.begin(), delays.end());
      const double median = detail::SortedQuantile(delays, 0.5);
      const double iqr = detail::SortedQuantile(delays, 0.75) -
                         detail::SortedQuantile(delays, 0.25);
      threshold[key] = median + k * iqr;
    }
  }
  SampleSet out;
  out.source = set.source;
  for (const auto& s : set.samples) {
    if (s.delay <= threshold.at({s.direction, s.size})) out.samples.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV interchange: size_bytes,delay_s,direction,seq,sent_at

inline constexpr std::string_view kCsvHeader = "size_bytes,delay_s,direction,seq,sent_at";

inline std::string FormatDouble(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

inline void WriteCsv(std::ostream& os, const SampleSet& set) {
  os << kCsvHeader << '\n';
  for (const auto& s : set.samples) {
    os << s.size << ',' << FormatDouble(s.delay) << ',' << DirectionName(s.direction)
       << ',' << s.seq << ',' << FormatDouble(s.sent_at) << '\n';
  }
}

namespace detail {

template <typename T>
bool ParseNumber(std::string_view text, T& out) {
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

inline std::vector<std::string_view> SplitComma(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace detail

inline SampleSet ReadCsv(std::istream& is, std::string source = {}) {
  SampleSet set;
  set.source = std::move(source);
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  std::set<std::tuple<Bytes, Direction, std::uint64_t>> seen;
  auto fail = [&](const std::string& why) {
    throw Error(ErrorKind::kMalformedCsv, "row " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!saw_header) {
      if (line != kCsvHeader) fail("expected header '" + std::string(kCsvHeader) + "'");
      saw_header = true;
      continue;
    }
    if (line.empty()) continue;
    const auto f = detail::SplitComma(line);
    if (f.size() != 5) fail("expected 5 fields, got " + std::to_string(f.size()));
    ProbeSample s;
    if (!detail::ParseNumber(f[0], s.size) || s.size < 1) fail("bad size_bytes '" + std::string(f[0]) + "'");
    if (!detail::ParseNumber(f[1], s.delay) || !(s.delay >= 0.0) || !std::isfinite(s.delay)) {
      fail("bad delay_s '" + std::string(f[1]) + "'");
    }
    const auto dir = ParseDirection(f[2]);
    if (!dir) fail("bad direction '" + std::string(f[2]) + "'");
    s.direction = *dir;
    if (!detail::ParseNumber(f[3], s.seq)) fail("bad seq '" + std::string(f[3]) + "'");
    if (!detail::ParseNumber(f[4], s.sent_at)) fail("bad sent_at '" + std::string(f[4]) + "'");
    if (!seen.insert({s.size, s.direction, s.seq}).second) {
      fail("duplicate seq " + std::to_string(s.seq) + " for size " + std::to_string(s.size));
    }
    set.samples.push_back(s);
  }
  if (!saw_header) {
    throw Error(ErrorKind::kMalformedCsv, "empty input, missing header");
  }
  return set;
}

}  // namespace avband
