#pragma once

#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "avband/error.hpp"
#include "avband/path.hpp"
#include "avband/samples.hpp"

namespace avband {

// Plain-text path description, one `[hop]` section per hop in path order:
//
//   # comment
//   [hop]
//   capacity_bps = 10e6
//   propagation_s = 0.001
//   discipline = fifo             # fifo | interleave
//   cross_model = poisson         # none | poisson | onoff | scripted
//   cross_size_bytes = 1000
//   cross_rate_pps = 625          # or cross_utilization = 0.5
//   cross_on_s = 0.01             # onoff only
//   cross_off_s = 0.01            # onoff only
//   cross_arrivals_s = 0.1, 0.25  # scripted only
//
// cross_utilization is converted to a rate once the section is complete, so
// key order within a section does not matter.

namespace detail {

inline std::string_view Trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline PathSpec ParsePathConfig(std::istream& is) {
  PathSpec path;
  std::optional<double> pending_utilization;
  bool in_hop = false;
  bool have_capacity = false;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw Error(ErrorKind::kMalformedConfig, "line " + std::to_string(line_no) + ": " + why);
  };
  auto finish_hop = [&] {
    if (!in_hop) return;
    if (!have_capacity) fail("hop " + std::to_string(path.hops.size() - 1) + " has no capacity_bps");
    Hop& h = path.hops.back();
    if (pending_utilization) {
      if (*pending_utilization < 0.0) fail("cross_utilization must be >= 0");
      h.cross.arrival_rate = *pending_utilization * h.capacity / ToBits(h.cross.packet_size);
    }
    pending_utilization.reset();
  };
  auto number = [&](std::string_view key, std::string_view text) {
    double v = 0.0;
    if (!detail::ParseNumber(text, v)) fail("bad number for " + std::string(key) + ": '" + std::string(text) + "'");
    return v;
  };

  std::string raw;
  while (std::getline(is, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::Trim(line);
    if (line.empty()) continue;
    if (line == "[hop]") {
      finish_hop();
      path.hops.emplace_back();
      in_hop = true;
      have_capacity = false;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected 'key = value' or '[hop]'");
    if (!in_hop) fail("key outside a [hop] section");
    const auto key = detail::Trim(line.substr(0, eq));
    const auto value = detail::Trim(line.substr(eq + 1));
    Hop& h = path.hops.back();
    if (key == "capacity_bps") {
      h.capacity = number(key, value);
      have_capacity = true;
    } else if (key == "propagation_s") {
      h.propagation = number(key, value);
    } else if (key == "discipline") {
      if (value == "fifo") h.discipline = HopDiscipline::kFifo;
      else if (value == "interleave") h.discipline = HopDiscipline::kInterleave;
      else fail("unknown discipline '" + std::string(value) + "'");
    } else if (key == "cross_model") {
      h.cross.enabled = value != "none";
      if (value == "poisson") h.cross.model = CrossModel::kPoisson;
      else if (value == "onoff") h.cross.model = CrossModel::kOnOff;
      else if (value == "scripted") h.cross.model = CrossModel::kScripted;
      else if (value != "none") fail("unknown cross_model '" + std::string(value) + "'");
    } else if (key == "cross_size_bytes") {
      const double v = number(key, value);
      if (v < 1 || v != static_cast<double>(static_cast<Bytes>(v))) fail("cross_size_bytes must be a positive integer");
      h.cross.packet_size = static_cast<Bytes>(v);
    } else if (key == "cross_rate_pps") {
      h.cross.arrival_rate = number(key, value);
    } else if (key == "cross_utilization") {
      pending_utilization = number(key, value);
    } else if (key == "cross_on_s") {
      h.cross.on_duration = number(key, value);
    } else if (key == "cross_off_s") {
      h.cross.off_duration = number(key, value);
    } else if (key == "cross_arrivals_s") {
      h.cross.scripted_arrivals.clear();
      std::string_view rest = value;
      while (!rest.empty()) {
        const auto comma = rest.find(',');
        h.cross.scripted_arrivals.push_back(number(key, detail::Trim(rest.substr(0, comma))));
        if (comma == std::string_view::npos) break;
        rest = rest.substr(comma + 1);
      }
    } else {
      fail("unknown key '" + std::string(key) + "'");
    }
  }
  finish_hop();
  if (path.hops.empty()) throw Error(ErrorKind::kEmptyPath, "config defines no [hop] sections");
  try {
    path.Validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kMalformedConfig, e.what());
  }
  return path;
}

inline PathSpec ParsePathConfig(std::string_view text) {
  std::istringstream is{std::string(text)};
  return ParsePathConfig(is);
}

}  // namespace avband
