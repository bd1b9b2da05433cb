#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "avband/error.hpp"
#include "avband/numeric.hpp"
#include "avband/samples.hpp"

namespace avband::ripe {

// Records dumped by RIPE Test Traffic Measurement boxes: SNDP lines on the
// sending box, RCDP lines on the receiving box, joined on sequence number.

struct SndpRecord {
  int version = 0;
  double unix_time = 0.0;
  std::string target_host;  // -h
  int port = 0;             // -p
  Bytes size = 0;           // -n
  std::uint64_t seq = 0;    // -s
  std::vector<std::pair<std::string, std::string>> extra_flags;  // in line order
};

struct RcdpRecord {
  // The two leading integers and the hex flags are undocumented; they are
  // kept verbatim.
  std::int64_t field1 = 0;
  std::int64_t field2 = 0;
  std::string src_addr;
  int src_port = 0;
  std::string dst_addr;
  int dst_port = 0;
  double arrival_time = 0.0;
  Seconds delay = 0.0;
  std::string flags1;
  std::string flags2;
  std::uint64_t seq = 0;
  Seconds precision1 = 0.0;
  Seconds precision2 = 0.0;
};

namespace detail {

inline std::vector<std::string_view> Tokenize(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

inline bool IsHexField(std::string_view s) {
  if (s.size() < 3 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X')) return false;
  return std::all_of(s.begin() + 2, s.end(),
                     [](char c) { return std::isxdigit(static_cast<unsigned char>(c)) != 0; });
}

[[noreturn]] inline void Malformed(std::size_t line_no, std::string_view what) {
  std::string msg;
  if (line_no > 0) msg = "line " + std::to_string(line_no) + ": ";
  throw Error(ErrorKind::kMalformedLine, msg + std::string(what));
}

}  // namespace detail

// Tokens are whitespace separated; the -h/-p/-n/-s pairs may come in any
// order and unknown flags are kept in extra_flags.
inline SndpRecord ParseSndp(std::string_view line, std::size_t line_no = 0) {
  using avband::detail::ParseNumber;
  const auto tok = detail::Tokenize(line);
  if (tok.empty() || tok[0] != "SNDP") detail::Malformed(line_no, "expected SNDP tag");
  if (tok.size() < 3) detail::Malformed(line_no, "SNDP line truncated before timestamp");
  SndpRecord rec;
  if (!ParseNumber(tok[1], rec.version)) detail::Malformed(line_no, "token 1: bad version '" + std::string(tok[1]) + "'");
  if (!ParseNumber(tok[2], rec.unix_time)) detail::Malformed(line_no, "token 2: bad unix time '" + std::string(tok[2]) + "'");
  bool have_size = false;
  bool have_seq = false;
  for (std::size_t i = 3; i < tok.size(); i += 2) {
    const std::string_view flag = tok[i];
    if (flag.size() < 2 || flag[0] != '-') {
      detail::Malformed(line_no, "token " + std::to_string(i) + ": expected a flag, got '" + std::string(flag) + "'");
    }
    if (i + 1 >= tok.size()) {
      detail::Malformed(line_no, "token " + std::to_string(i) + ": flag " + std::string(flag) + " has no value");
    }
    const std::string_view value = tok[i + 1];
    const std::string where = "token " + std::to_string(i + 1) + ": ";
    if (flag == "-h") {
      rec.target_host = std::string(value);
    } else if (flag == "-p") {
      if (!ParseNumber(value, rec.port)) detail::Malformed(line_no, where + "bad port");
    } else if (flag == "-n") {
      if (!ParseNumber(value, rec.size)) detail::Malformed(line_no, where + "bad size");
      if (rec.size < 1) detail::Malformed(line_no, where + "size must be >= 1 byte");
      have_size = true;
    } else if (flag == "-s") {
      if (!ParseNumber(value, rec.seq)) detail::Malformed(line_no, where + "bad sequence number");
      have_seq = true;
    } else {
      rec.extra_flags.emplace_back(std::string(flag), std::string(value));
    }
  }
  if (!have_size) detail::Malformed(line_no, "missing -n (packet size)");
  if (!have_seq) detail::Malformed(line_no, "missing -s (sequence number)");
  return rec;
}

inline std::string FormatSndp(const SndpRecord& rec) {
  std::string out = "SNDP " + std::to_string(rec.version) + " " + FormatDouble(rec.unix_time);
  if (!rec.target_host.empty()) out += " -h " + rec.target_host;
  out += " -p " + std::to_string(rec.port);
  out += " -n " + std::to_string(rec.size);
  out += " -s " + std::to_string(rec.seq);
  for (const auto& [flag, value] : rec.extra_flags) out += " " + flag + " " + value;
  return out;
}

// Tag plus 13 positional fields.
inline constexpr std::size_t kRcdpFieldCount = 14;

// Positional parse. Tokens beyond the last defined field are ignored and,
// when `warnings` is given, reported there.
inline RcdpRecord ParseRcdp(std::string_view line, std::size_t line_no = 0,
                            Warnings* warnings = nullptr) {
  using avband::detail::ParseNumber;
  const auto tok = detail::Tokenize(line);
  if (tok.empty() || tok[0] != "RCDP") detail::Malformed(line_no, "expected RCDP tag");
  if (tok.size() < kRcdpFieldCount) {
    detail::Malformed(line_no, "token " + std::to_string(tok.size()) + ": RCDP line has " +
                                   std::to_string(tok.size()) + " tokens, need " +
                                   std::to_string(kRcdpFieldCount));
  }
  auto bad = [&](std::size_t index, std::string_view what) {
    detail::Malformed(line_no, "token " + std::to_string(index) + ": bad " + std::string(what) +
                                   " '" + std::string(tok[index]) + "'");
  };
  RcdpRecord rec;
  if (!ParseNumber(tok[1], rec.field1)) bad(1, "integer");
  if (!ParseNumber(tok[2], rec.field2)) bad(2, "integer");
  rec.src_addr = std::string(tok[3]);
  if (!ParseNumber(tok[4], rec.src_port)) bad(4, "source port");
  rec.dst_addr = std::string(tok[5]);
  if (!ParseNumber(tok[6], rec.dst_port)) bad(6, "destination port");
  if (!ParseNumber(tok[7], rec.arrival_time)) bad(7, "arrival time");
  if (!ParseNumber(tok[8], rec.delay) || !std::isfinite(rec.delay)) bad(8, "delay");
  if (rec.delay < 0.0) bad(8, "delay (negative)");
  if (!detail::IsHexField(tok[9])) bad(9, "hex flags");
  if (!detail::IsHexField(tok[10])) bad(10, "hex flags");
  rec.flags1 = std::string(tok[9]);
  rec.flags2 = std::string(tok[10]);
  if (!ParseNumber(tok[11], rec.seq)) bad(11, "sequence number");
  if (!ParseNumber(tok[12], rec.precision1)) bad(12, "clock precision");
  if (!ParseNumber(tok[13], rec.precision2)) bad(13, "clock precision");
  if (tok.size() > kRcdpFieldCount && warnings) {
    warnings->push_back((line_no ? "line " + std::to_string(line_no) + ": " : std::string()) +
                        "ignored " + std::to_string(tok.size() - kRcdpFieldCount) +
                        " trailing token(s) on RCDP line");
  }
  return rec;
}

enum class PathDirection { kForward, kReverse };

inline Direction ToSampleDirection(PathDirection d) {
  return d == PathDirection::kForward ? Direction::kOneWayForward : Direction::kOneWayReverse;
}

struct MatchedPair {
  std::uint64_t seq = 0;
  Bytes size = 0;
  Seconds delay = 0.0;
  double send_time = 0.0;
  double arrival_time = 0.0;
  Direction direction = Direction::kOneWayForward;

  bool operator==(const MatchedPair&) const = default;
};

struct MatchResult {
  std::vector<MatchedPair> pairs;  // ascending seq
  std::size_t unmatched_send = 0;
  std::size_t unmatched_recv = 0;
  std::size_t duplicate_send = 0;
  std::size_t duplicate_recv = 0;
  Warnings warnings;
};

// Joins sender and receiver records on sequence number. Duplicate sequence
// numbers keep the earliest record (by send time or arrival time), so the
// result does not depend on input order.
inline MatchResult MatchPairs(const std::vector<SndpRecord>& send,
                              const std::vector<RcdpRecord>& recv, PathDirection direction) {
  MatchResult result;
  std::map<std::uint64_t, const SndpRecord*> by_seq_send;
  for (const auto& s : send) {
    auto [it, inserted] = by_seq_send.emplace(s.seq, &s);
    if (!inserted) {
      ++result.duplicate_send;
      const SndpRecord* kept = it->second;
      if (std::tie(s.unix_time, s.size) < std::tie(kept->unix_time, kept->size)) it->second = &s;
    }
  }
  std::map<std::uint64_t, const RcdpRecord*> by_seq_recv;
  for (const auto& r : recv) {
    auto [it, inserted] = by_seq_recv.emplace(r.seq, &r);
    if (!inserted) {
      ++result.duplicate_recv;
      const RcdpRecord* kept = it->second;
      if (std::tie(r.arrival_time, r.delay) < std::tie(kept->arrival_time, kept->delay)) it->second = &r;
    }
  }
  for (const auto& [seq, s] : by_seq_send) {
    const auto it = by_seq_recv.find(seq);
    if (it == by_seq_recv.end()) {
      ++result.unmatched_send;
      continue;
    }
    const RcdpRecord* r = it->second;
    result.pairs.push_back(
        {seq, s->size, r->delay, s->unix_time, r->arrival_time, ToSampleDirection(direction)});
  }
  for (const auto& [seq, r] : by_seq_recv) {
    if (!by_seq_send.contains(seq)) ++result.unmatched_recv;
  }
  if (result.duplicate_send + result.duplicate_recv > 0) {
    result.warnings.push_back(std::to_string(result.duplicate_send) + " duplicate sender and " +
                              std::to_string(result.duplicate_recv) +
                              " duplicate receiver sequence number(s); kept earliest");
  }
  if (result.pairs.empty()) result.warnings.push_back("0 matches: no sequence numbers matched");
  return result;
}

inline SampleSet PairsToSamples(const std::vector<MatchedPair>& pairs, std::string source = {}) {
  SampleSet set;
  set.source = std::move(source);
  set.samples.reserve(pairs.size());
  for (const auto& p : pairs) {
    set.samples.push_back({p.size, p.delay, p.direction, p.seq, p.send_time});
  }
  return set;
}

// Time-adjacent pairing: every packet of the largest size is paired with
// the smallest-size packet sent nearest in time (earlier one on ties), and
// the per-pair delay differences are averaged.
struct AdjacentPairing {
  Bytes small_size = 0;
  Bytes large_size = 0;
  std::vector<Seconds> differences;  // large minus small, one per large packet

  std::optional<Seconds> MeanDifference() const {
    if (differences.empty()) return std::nullopt;
    CompensatedSum s;
    for (double d : differences) s.Add(d);
    return s.Value() / static_cast<double>(differences.size());
  }
};

inline AdjacentPairing PairAdjacent(const std::vector<MatchedPair>& pairs) {
  AdjacentPairing out;
  if (pairs.empty()) return out;
  const auto [lo, hi] = std::minmax_element(
      pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.size < b.size; });
  out.small_size = lo->size;
  out.large_size = hi->size;
  if (out.small_size == out.large_size) return out;
  std::vector<const MatchedPair*> small;
  for (const auto& p : pairs) {
    if (p.size == out.small_size) small.push_back(&p);
  }
  std::sort(small.begin(), small.end(), [](const auto* a, const auto* b) {
    return std::tie(a->send_time, a->seq) < std::tie(b->send_time, b->seq);
  });
  std::vector<const MatchedPair*> large;
  for (const auto& p : pairs) {
    if (p.size == out.large_size) large.push_back(&p);
  }
  std::sort(large.begin(), large.end(), [](const auto* a, const auto* b) {
    return std::tie(a->send_time, a->seq) < std::tie(b->send_time, b->seq);
  });
  for (const MatchedPair* big : large) {
    auto it = std::lower_bound(small.begin(), small.end(), big->send_time,
                               [](const MatchedPair* p, double t) { return p->send_time < t; });
    const MatchedPair* best = nullptr;
    if (it != small.end()) best = *it;
    if (it != small.begin()) {
      const MatchedPair* before = *std::prev(it);
      if (!best || big->send_time - before->send_time <= best->send_time - big->send_time) {
        best = before;
      }
    }
    out.differences.push_back(big->delay - best->delay);
  }
  return out;
}

// Reads a dump, keeping lines tagged `tag`. Blank lines and '#' comments
// are skipped; lines with any other tag are skipped and counted in a
// warning. A line with the right tag that fails to parse is fatal, and the
// message names `name` and the line number.
template <typename Record, typename Parser>
std::vector<Record> ReadDump(std::istream& is, std::string_view name, std::string_view tag,
                             Parser parse, Warnings* warnings) {
  std::vector<Record> out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t foreign = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto tok = detail::Tokenize(line);
    if (tok.empty() || tok[0].starts_with('#')) continue;
    if (tok[0] != tag) {
      ++foreign;
      continue;
    }
    try {
      out.push_back(parse(line, line_no));
    } catch (const Error& e) {
      throw Error(ErrorKind::kMalformedLine, std::string(name) + ": " +
                                                 std::string(e.what()).substr(
                                                     ErrorKindName(e.kind()).size() + 2));
    }
  }
  if (foreign > 0 && warnings) {
    warnings->push_back(std::string(name) + ": skipped " + std::to_string(foreign) +
                        " line(s) not tagged " + std::string(tag));
  }
  return out;
}

inline std::vector<SndpRecord> ReadSndp(std::istream& is, std::string_view name,
                                        Warnings* warnings = nullptr) {
  return ReadDump<SndpRecord>(
      is, name, "SNDP", [](std::string_view l, std::size_t n) { return ParseSndp(l, n); },
      warnings);
}

inline std::vector<RcdpRecord> ReadRcdp(std::istream& is, std::string_view name,
                                        Warnings* warnings = nullptr) {
  return ReadDump<RcdpRecord>(
      is, name, "RCDP",
      [warnings, name](std::string_view l, std::size_t n) {
        Warnings local;
        auto rec = ParseRcdp(l, n, &local);
        if (warnings) {
          for (auto& w : local) warnings->push_back(std::string(name) + ": " + w);
        }
        return rec;
      },
      warnings);
}

}  // namespace avband::ripe
