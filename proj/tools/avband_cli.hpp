#pragma once

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "avband/error.hpp"
#include "avband/estimators.hpp"
#include "avband/path_config.hpp"
#include "avband/pathsim.hpp"
#include "avband/probe.hpp"
#include "avband/ripe.hpp"
#include "avband/samples.hpp"
#include "json.hpp"

namespace avband::cli {

using nlohmann::json;

enum ExitCode : int {
  kExitOk = 0,
  kExitOperational = 1,  // I/O, network, malformed files
  kExitInvalid = 2,      // bad arguments, insufficient or degenerate data
};

inline int ExitCodeFor(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kEmptySet:
    case ErrorKind::kMixedDirections:
    case ErrorKind::kInsufficientData:
    case ErrorKind::kDegenerateInput:
    case ErrorKind::kNonIncreasingDelay:
    case ErrorKind::kSizeOrder:
    case ErrorKind::kNonPositiveDelay:
    case ErrorKind::kNonPositiveDenominator:
    case ErrorKind::kInterceptExceedsDelay:
    case ErrorKind::kNegativeResidual:
      return kExitInvalid;
    default:
      return kExitOperational;
  }
}

inline constexpr const char* kFormatEnv = "AVBAND_FORMAT";

inline std::string DefaultFormat() {
  const char* env = std::getenv(kFormatEnv);
  if (env && std::string(env) == "json") return "json";
  return "human";
}

// Three significant digits in Mbps, keeping trailing zeros ("15.0 Mbps",
// "15200 Mbps").
inline std::string FormatMbps(double bps) {
  const double mbps = bps / 1e6;
  if (mbps == 0.0 || !std::isfinite(mbps)) return FormatDouble(mbps) + " Mbps";
  const int magnitude = static_cast<int>(std::floor(std::log10(std::fabs(mbps))));
  const double unit = std::pow(10.0, magnitude - 2);
  const double rounded = std::round(mbps / unit) * unit;
  const int decimals = std::max(0, 2 - static_cast<int>(std::floor(std::log10(std::fabs(rounded)))));
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << rounded << " Mbps";
  return os.str();
}

inline std::string FormatSeconds(double s) {
  std::ostringstream os;
  os << std::setprecision(6) << s << " s";
  return os.str();
}

// ---------------------------------------------------------------------------
// JSON building blocks. Every numeric key carries its unit as a suffix.

inline json StatsJson(const std::vector<SizeDelayStats>& stats) {
  json arr = json::array();
  for (const auto& s : stats) {
    arr.push_back({{"size_bytes", s.size},
                   {"count", s.count},
                   {"d_min_s", s.d_min},
                   {"d_mean_s", s.d_mean},
                   {"d_stddev_s", s.d_stddev}});
  }
  return arr;
}

inline json FitJson(const AffineFit& fit) {
  json j = {{"slope_s_per_byte", fit.slope},
            {"intercept_s", fit.intercept},
            {"r_squared", fit.r_squared},
            {"n_points", fit.n_points}};
  if (auto rate = fit.Rate()) j["rate_bps"] = *rate;
  return j;
}

inline json EstimateJson(const PathEstimate& est) {
  json j = {{"method", EstimateMethodName(est.method)},
            {"small_size_bytes", est.small_size},
            {"large_size_bytes", est.large_size}};
  if (est.b_av) j["b_av_bps"] = *est.b_av;
  if (est.capacity) j["capacity_bps"] = *est.capacity;
  if (est.d_min) j["d_min_s"] = *est.d_min;
  if (est.intercept_a) j["intercept_a_s"] = *est.intercept_a;
  if (est.mean_fit) j["mean_fit"] = FitJson(*est.mean_fit);
  if (est.min_fit) j["min_fit"] = FitJson(*est.min_fit);
  return j;
}

inline void AppendWarnings(json& envelope, const Warnings& warnings) {
  for (const auto& w : warnings) envelope["warnings"].push_back(w);
}

inline json Envelope(std::string_view command, json inputs) {
  return {{"command", command}, {"inputs", std::move(inputs)}, {"warnings", json::array()}};
}

// ---------------------------------------------------------------------------
// Human-readable rendering.

inline void PrintStatsTable(std::ostream& os, const std::vector<SizeDelayStats>& stats) {
  os << "  size_B   count      d_min_s     d_mean_s   d_stddev_s\n";
  for (const auto& s : stats) {
    os << std::setw(8) << s.size << std::setw(8) << s.count << std::fixed << std::setprecision(6)
       << std::setw(13) << s.d_min << std::setw(13) << s.d_mean << std::setw(13) << s.d_stddev
       << '\n';
  }
  os.unsetf(std::ios::floatfield);
}

inline void PrintEstimate(std::ostream& os, const PathEstimate& est) {
  os << "method: " << EstimateMethodName(est.method) << " (" << est.small_size << " B .. "
     << est.large_size << " B)\n";
  auto line = [&os](const char* label, const std::string& value) {
    os << "  " << std::left << std::setw(22) << label << std::right << value << '\n';
  };
  line("available bandwidth:", est.b_av ? FormatMbps(*est.b_av) : "n/a");
  line("capacity:", est.capacity ? FormatMbps(*est.capacity) : "n/a");
  line("d_min:", est.d_min ? FormatSeconds(*est.d_min) : "n/a");
  line("intercept a:", est.intercept_a ? FormatSeconds(*est.intercept_a) : "n/a");
}

inline void PrintWarnings(std::ostream& os, const json& envelope) {
  if (envelope["warnings"].empty()) return;
  os << "warnings:\n";
  for (const auto& w : envelope["warnings"]) os << "  - " << w.get<std::string>() << '\n';
}

// ---------------------------------------------------------------------------
// Shared option handling.

struct EstimateFlags {
  std::string method = "auto";
  std::string stat = "both";
  double outlier_k = 0.0;  // 0 disables filtering

  EstimateOptions ToOptions() const {
    EstimateOptions o;
    if (method == "two-point") o.method = EstimateMethod::kTwoPoint;
    else if (method == "fit") o.method = EstimateMethod::kRegression;
    o.use_mean = stat != "min";
    o.use_min = stat != "mean";
    return o;
  }
};

inline void AddEstimateFlags(CLI::App* cmd, EstimateFlags& f) {
  cmd->add_option("--method", f.method, "two-point, fit (regression) or auto")
      ->check(CLI::IsMember({"auto", "two-point", "fit"}));
  cmd->add_option("--stat", f.stat,
                  "which statistic to use: mean (available bandwidth), min (capacity, d_min) or both")
      ->check(CLI::IsMember({"both", "min", "mean"}));
  cmd->add_option("--filter-outliers", f.outlier_k,
                  "drop delays above median + K*IQR per size before estimating (off by default)")
      ->check(CLI::NonNegativeNumber);
}

inline SampleSet MaybeFilter(const SampleSet& set, double k) {
  return k > 0.0 ? FilterOutliers(set, k) : set;
}

inline bool HasEstimate(const PathEstimate& est) {
  return est.b_av || est.capacity || est.d_min;
}

inline int Emit(std::ostream& out, const json& envelope, bool as_json,
                const std::function<void()>& human) {
  if (as_json) {
    out << envelope.dump(2) << '\n';
  } else {
    human();
    PrintWarnings(out, envelope);
  }
  return kExitOk;
}

inline SampleSet LoadSamples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  return ReadCsv(in, path);
}

inline void SaveSamples(const std::string& path, const SampleSet& set) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  WriteCsv(out, set);
}

inline SampleSet SelectDirection(const SampleSet& set, const std::string& direction) {
  const auto parts = SplitByDirection(set);
  if (!direction.empty()) {
    const auto d = ParseDirection(direction);
    if (!d) throw Error(ErrorKind::kInvalidArgument, "unknown direction '" + direction + "'");
    const auto it = parts.find(*d);
    if (it == parts.end()) {
      throw Error(ErrorKind::kInsufficientData, "no samples with direction " + direction);
    }
    return it->second;
  }
  if (parts.size() > 1) {
    throw Error(ErrorKind::kMixedDirections,
                "samples mix directions; pick one with --direction");
  }
  return set;
}

// ---------------------------------------------------------------------------
// Commands.

struct ProbeArgs {
  probe::ProbeConfig config;
  std::string mode = "icmp";
  std::string samples_out;
  EstimateFlags estimate;
};

inline int CmdProbe(ProbeArgs args, bool as_json, std::ostream& out) {
  args.config.mode = args.mode == "udp" ? probe::ProbeMode::kUdpEcho : probe::ProbeMode::kIcmpEcho;
  args.config.Validate();
  probe::ProbeReport report = probe::RunProbe(args.config);
  report.samples = MaybeFilter(report.samples, args.estimate.outlier_k);
  if (!args.samples_out.empty()) SaveSamples(args.samples_out, report.samples);

  const auto& cfg = report.config;
  json inputs = {{"target", cfg.target},
                 {"resolved_address", report.resolved_address},
                 {"mode", args.mode == "udp" ? "udp_echo" : "icmp_echo"},
                 {"sizes_bytes", cfg.sizes},
                 {"retries", cfg.retries},
                 {"pacing_s", cfg.pacing},
                 {"timeout_s", cfg.timeout}};
  json envelope = Envelope("probe", inputs);
  json per_size = json::array();
  for (const auto& c : report.per_size) {
    per_size.push_back({{"size_bytes", c.size},
                        {"wire_size_bytes", c.wire_size},
                        {"sent", c.sent},
                        {"received", c.received},
                        {"lost", c.lost}});
  }
  envelope["probe"] = {{"per_size", per_size}, {"stray_replies", report.stray_replies}};
  AppendWarnings(envelope, report.warnings);

  auto print_counts = [&] {
    out << "probe " << cfg.target << " (" << report.resolved_address << ")\n";
    for (const auto& c : report.per_size) {
      out << "  " << c.size << " B payload (" << c.wire_size << " B on wire): sent " << c.sent
          << ", received " << c.received << ", lost " << c.lost << '\n';
    }
  };

  probe::ProbeResult result;
  try {
    report.warnings.clear();
    result = probe::EstimateFromReport(report, args.estimate.ToOptions());
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kInsufficientData && e.kind() != ErrorKind::kEmptySet) throw;
    envelope["error"] = e.what();
    Emit(out, envelope, as_json, [&] {
      print_counts();
      out << "no estimate: " << e.what() << '\n';
    });
    return kExitInvalid;
  }
  envelope["stats"] = StatsJson(result.stats);
  envelope["estimate"] = EstimateJson(result.estimate);
  envelope["estimate"]["channel"] = "outgoing (round-trip based)";
  AppendWarnings(envelope, result.report.warnings);
  AppendWarnings(envelope, result.estimate.warnings);
  Emit(out, envelope, as_json, [&] {
    print_counts();
    PrintStatsTable(out, result.stats);
    PrintEstimate(out, result.estimate);
  });
  return HasEstimate(result.estimate) ? kExitOk : kExitInvalid;
}

struct EstimateArgs {
  std::string samples_file;
  std::string direction;
  EstimateFlags estimate;
};

// Aggregates, estimates and fills the common envelope fields.
inline int EstimateAndEmit(json& envelope, const SampleSet& set, const EstimateFlags& flags,
                           bool as_json, std::ostream& out,
                           const std::function<void(const std::vector<SizeDelayStats>&,
                                                    PathEstimate&)>& adjust = {},
                           const std::function<void()>& human_prefix = {}) {
  if (set.empty()) throw Error(ErrorKind::kInsufficientData, "no samples");
  Warnings warnings;
  const auto stats = Aggregate(MaybeFilter(set, flags.outlier_k), &warnings);
  PathEstimate est = EstimatePath(stats, flags.ToOptions());
  if (adjust) adjust(stats, est);
  envelope["stats"] = StatsJson(stats);
  envelope["estimate"] = EstimateJson(est);
  AppendWarnings(envelope, warnings);
  AppendWarnings(envelope, est.warnings);
  Emit(out, envelope, as_json, [&] {
    if (human_prefix) human_prefix();
    PrintStatsTable(out, stats);
    PrintEstimate(out, est);
  });
  return HasEstimate(est) ? kExitOk : kExitInvalid;
}

inline int CmdEstimate(const EstimateArgs& args, bool as_json, std::ostream& out) {
  const SampleSet set = SelectDirection(LoadSamples(args.samples_file), args.direction);
  json envelope = Envelope("estimate", {{"samples_file", args.samples_file},
                                        {"samples", set.size()},
                                        {"method", args.estimate.method},
                                        {"stat", args.estimate.stat}});
  return EstimateAndEmit(envelope, set, args.estimate, as_json, out);
}

struct IngestArgs {
  std::string send_file;
  std::string recv_file;
  std::string direction = "forward";
  std::string pairing = "per-size";
  std::string target;
  std::string samples_out;
  EstimateFlags estimate;
};

inline int CmdIngest(const IngestArgs& args, bool as_json, std::ostream& out) {
  Warnings warnings;
  std::ifstream send_in(args.send_file);
  if (!send_in) throw Error(ErrorKind::kIo, "cannot open " + args.send_file);
  std::ifstream recv_in(args.recv_file);
  if (!recv_in) throw Error(ErrorKind::kIo, "cannot open " + args.recv_file);
  auto send = ripe::ReadSndp(send_in, args.send_file, &warnings);
  const auto recv = ripe::ReadRcdp(recv_in, args.recv_file, &warnings);
  if (!args.target.empty()) {
    std::erase_if(send, [&](const auto& r) { return r.target_host != args.target; });
  }
  const auto direction =
      args.direction == "reverse" ? ripe::PathDirection::kReverse : ripe::PathDirection::kForward;
  auto match = ripe::MatchPairs(send, recv, direction);
  warnings.insert(warnings.end(), match.warnings.begin(), match.warnings.end());
  const SampleSet set =
      ripe::PairsToSamples(match.pairs, args.send_file + "+" + args.recv_file);
  if (!args.samples_out.empty()) SaveSamples(args.samples_out, set);

  json envelope = Envelope("ingest", {{"send_file", args.send_file},
                                      {"recv_file", args.recv_file},
                                      {"direction", args.direction},
                                      {"pairing", args.pairing},
                                      {"send_records", send.size()},
                                      {"recv_records", recv.size()}});
  json pairs = json::array();
  for (const auto& p : match.pairs) {
    pairs.push_back({{"seq", p.seq}, {"size_bytes", p.size}, {"delay_s", p.delay}});
  }
  envelope["matching"] = {{"pairs", match.pairs.size()},
                          {"unmatched_send", match.unmatched_send},
                          {"unmatched_recv", match.unmatched_recv},
                          {"duplicate_send", match.duplicate_send},
                          {"duplicate_recv", match.duplicate_recv},
                          {"matched", pairs}};
  AppendWarnings(envelope, warnings);

  auto human_prefix = [&] {
    out << "ingest " << args.send_file << " -> " << args.recv_file << ": " << match.pairs.size()
        << " pair(s), " << match.unmatched_send << " unmatched sender, " << match.unmatched_recv
        << " unmatched receiver record(s)\n";
    for (const auto& p : match.pairs) {
      out << "  seq " << p.seq << "  " << p.size << " B  " << FormatDouble(p.delay) << " s\n";
    }
  };

  if (match.pairs.empty()) {
    envelope["error"] = "no matched pairs";
    Emit(out, envelope, as_json, human_prefix);
    return kExitInvalid;
  }
  if (match.pairs.size() == 2 && match.pairs[0].size != match.pairs[1].size) {
    const auto& a = match.pairs[0].size < match.pairs[1].size ? match.pairs[0] : match.pairs[1];
    const auto& b = &a == &match.pairs[0] ? match.pairs[1] : match.pairs[0];
    envelope["matching"]["delay_difference_s"] = b.delay - a.delay;
  }

  std::function<void(const std::vector<SizeDelayStats>&, PathEstimate&)> adjust;
  if (args.pairing == "adjacent") {
    adjust = [&](const std::vector<SizeDelayStats>&, PathEstimate& est) {
      const auto adj = ripe::PairAdjacent(match.pairs);
      const auto mean = adj.MeanDifference();
      envelope["matching"]["adjacent"] = {{"pairs", adj.differences.size()},
                                          {"small_size_bytes", adj.small_size},
                                          {"large_size_bytes", adj.large_size}};
      est.b_av.reset();
      if (!mean || !(*mean > 0.0)) {
        est.warnings.push_back("b_av unavailable: adjacent pairs give no positive mean difference");
        return;
      }
      envelope["matching"]["adjacent"]["mean_difference_s"] = *mean;
      est.b_av = ToBits(adj.large_size - adj.small_size) / *mean;
    };
  }
  return EstimateAndEmit(envelope, set, args.estimate, as_json, out, adjust, human_prefix);
}

struct SimulateArgs {
  std::string config_file;
  ExperimentConfig experiment;
  std::string samples_out;
  EstimateFlags estimate;
};

inline int CmdSimulate(SimulateArgs args, bool as_json, std::ostream& out) {
  std::ifstream in(args.config_file);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + args.config_file);
  const PathSpec path = ParsePathConfig(in);
  const Experiment exp = RunExperiment(path, args.experiment);
  if (!args.samples_out.empty()) SaveSamples(args.samples_out, exp.samples);

  json envelope = Envelope("simulate", {{"config_file", args.config_file},
                                        {"hops", path.hops.size()},
                                        {"sizes_bytes", args.experiment.sizes},
                                        {"probes_per_size", args.experiment.probes_per_size},
                                        {"pacing_s", args.experiment.pacing},
                                        {"seed", args.experiment.seed}});
  const GroundTruth& truth = exp.truth;
  envelope["ground_truth"] = {{"capacity_bps", truth.capacity},
                              {"available_bandwidth_bps", truth.available_bandwidth},
                              {"serial_rate_bps", truth.serial_rate},
                              {"d_min_zero_size_s", truth.d_min_zero_size},
                              {"utilization", truth.utilization}};

  json comparison = json::array();
  std::vector<std::vector<std::string>> rows;
  auto compare = [&](const char* quantity, std::optional<double> estimate, const char* truth_name,
                     double truth_value, bool rate) {
    json row = {{"quantity", quantity}, {"truth_field", truth_name}, {"truth", truth_value}};
    std::string est_text = "n/a";
    std::string err_text = "n/a";
    if (estimate) {
      row["estimate"] = *estimate;
      row["relative_error"] = RelativeError(*estimate, truth_value);
      est_text = rate ? FormatMbps(*estimate) : FormatSeconds(*estimate);
      std::ostringstream e;
      e << std::scientific << std::setprecision(2) << RelativeError(*estimate, truth_value);
      err_text = e.str();
    }
    comparison.push_back(row);
    rows.push_back({quantity, est_text, rate ? FormatMbps(truth_value) : FormatSeconds(truth_value),
                    truth_name, err_text});
  };

  auto adjust = [&](const std::vector<SizeDelayStats>&, PathEstimate& est) {
    compare("capacity_bps", est.capacity, "serial_rate_bps", truth.serial_rate, true);
    compare("b_av_bps", est.b_av, "available_bandwidth_bps", truth.available_bandwidth, true);
    compare("d_min_s", est.d_min, "d_min_zero_size_s", truth.d_min_zero_size, false);
    envelope["comparison"] = comparison;
  };
  auto human_prefix = [&] {
    out << "simulate " << args.config_file << ": " << path.hops.size() << " hop(s), seed "
        << args.experiment.seed << ", " << args.experiment.probes_per_size << " probes/size\n";
    out << "ground truth: capacity " << FormatMbps(truth.capacity) << ", available "
        << FormatMbps(truth.available_bandwidth) << ", serial rate "
        << FormatMbps(truth.serial_rate) << ", d_min " << FormatSeconds(truth.d_min_zero_size)
        << '\n';
  };
  const int rc = EstimateAndEmit(envelope, exp.samples, args.estimate, as_json, out, adjust,
                                 human_prefix);
  if (!as_json) {
    out << "estimate vs ground truth:\n";
    for (const auto& r : rows) {
      out << "  " << std::left << std::setw(14) << r[0] << std::right << std::setw(16) << r[1]
          << std::setw(16) << r[2] << "  (" << r[3] << ")  rel.err " << r[4] << '\n';
    }
  }
  return rc;
}

struct FitArgs {
  std::string samples_file;
  std::string stat = "min";
  std::string direction;
  bool dump_points = false;
};

inline int CmdFit(const FitArgs& args, bool as_json, std::ostream& out) {
  const SampleSet set = SelectDirection(LoadSamples(args.samples_file), args.direction);
  if (set.empty()) throw Error(ErrorKind::kInsufficientData, "no samples");
  Warnings warnings;
  const auto stats = Aggregate(set, &warnings);
  const auto statistic = args.stat == "mean" ? DelayStatistic::kMean : DelayStatistic::kMin;
  const auto points = StatsToPoints(stats, statistic);
  const AffineFit fit = FitAffine(std::span<const SizeDelayPoint>(points));

  json envelope = Envelope("fit", {{"samples_file", args.samples_file}, {"stat", args.stat}});
  envelope["stats"] = StatsJson(stats);
  envelope["fit"] = FitJson(fit);
  envelope["fit"]["statistic"] = args.stat;
  if (args.dump_points) {
    json pts = json::array();
    for (const auto& p : points) pts.push_back({{"size_bytes", p.size}, {"delay_s", p.delay}});
    envelope["points"] = pts;
  }
  if (!fit.Rate()) warnings.push_back("slope is not positive; no rate can be derived");
  AppendWarnings(envelope, warnings);
  Emit(out, envelope, as_json, [&] {
    PrintStatsTable(out, stats);
    out << "fit (" << args.stat << " delays, " << fit.n_points << " points)\n"
        << "  slope:      " << FormatDouble(fit.slope) << " s/B\n"
        << "  intercept:  " << FormatSeconds(fit.intercept) << '\n'
        << "  r^2:        " << FormatDouble(fit.r_squared) << '\n'
        << "  " << (statistic == DelayStatistic::kMin ? "capacity:   " : "b_av:       ")
        << (fit.Rate() ? FormatMbps(*fit.Rate()) : "n/a") << '\n';
    if (args.dump_points) {
      out << "size_bytes,delay_s\n";
      for (const auto& p : points) out << p.size << ',' << FormatDouble(p.delay) << '\n';
    }
  });
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline int Run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Available bandwidth, capacity and minimal delay from packet-size/delay probing",
               "avband"};
  app.require_subcommand(1);
  std::string format = DefaultFormat();
  app.add_option("--format", format, "human or json (default from $AVBAND_FORMAT)")
      ->check(CLI::IsMember({"human", "json"}));

  ProbeArgs probe_args;
  auto* probe_cmd = app.add_subcommand("probe", "probe a host with echo requests of several sizes");
  probe_cmd->add_option("target", probe_args.config.target, "host name or IPv4 address")->required();
  probe_cmd->add_option("--sizes", probe_args.config.sizes, "payload sizes in bytes, ascending")
      ->delimiter(',');
  probe_cmd->add_option("--retries", probe_args.config.retries, "probes per size");
  probe_cmd->add_option("--pacing", probe_args.config.pacing, "gap between probes, seconds");
  probe_cmd->add_option("--timeout", probe_args.config.timeout, "per-probe timeout, seconds");
  probe_cmd->add_option("--mode", probe_args.mode, "icmp or udp (echo service)")
      ->check(CLI::IsMember({"icmp", "udp"}));
  probe_cmd->add_option("--port", probe_args.config.port, "UDP echo port");
  probe_cmd->add_option("--warmup", probe_args.config.warmup, "discarded probes per size");
  probe_cmd->add_option("--samples-out", probe_args.samples_out, "write samples as CSV");
  AddEstimateFlags(probe_cmd, probe_args.estimate);

  EstimateArgs estimate_args;
  auto* estimate_cmd = app.add_subcommand("estimate", "estimate from a samples CSV file");
  estimate_cmd->add_option("samples_file", estimate_args.samples_file)->required();
  estimate_cmd->add_option("--direction", estimate_args.direction,
                           "round_trip, one_way_forward or one_way_reverse");
  AddEstimateFlags(estimate_cmd, estimate_args.estimate);

  IngestArgs ingest_args;
  auto* ingest_cmd = app.add_subcommand("ingest", "match RIPE TTM sender/receiver dumps");
  ingest_cmd->add_option("send_file", ingest_args.send_file, "sender dump (SNDP lines)")->required();
  ingest_cmd->add_option("recv_file", ingest_args.recv_file, "receiver dump (RCDP lines)")->required();
  ingest_cmd->add_option("--direction", ingest_args.direction)
      ->check(CLI::IsMember({"forward", "reverse"}));
  ingest_cmd->add_option("--pairing", ingest_args.pairing,
                         "per-size aggregation or time-adjacent large/small pairs")
      ->check(CLI::IsMember({"per-size", "adjacent"}));
  ingest_cmd->add_option("--target", ingest_args.target, "keep SNDP lines with this -h host only");
  ingest_cmd->add_option("--samples-out", ingest_args.samples_out, "write samples as CSV");
  AddEstimateFlags(ingest_cmd, ingest_args.estimate);

  SimulateArgs sim_args;
  auto* sim_cmd = app.add_subcommand("simulate", "simulate probing over a described path");
  sim_cmd->add_option("path_config", sim_args.config_file)->required();
  sim_cmd->add_option("--sizes", sim_args.experiment.sizes, "probe sizes in bytes")->delimiter(',');
  sim_cmd->add_option("--probes", sim_args.experiment.probes_per_size, "probes per size");
  sim_cmd->add_option("--pacing", sim_args.experiment.pacing, "gap between probes, seconds");
  sim_cmd->add_option("--seed", sim_args.experiment.seed, "random seed");
  sim_cmd->add_option("--samples-out", sim_args.samples_out, "write samples as CSV");
  AddEstimateFlags(sim_cmd, sim_args.estimate);

  FitArgs fit_args;
  auto* fit_cmd = app.add_subcommand("fit", "least-squares line of delay against size");
  fit_cmd->add_option("samples_file", fit_args.samples_file)->required();
  fit_cmd->add_option("--stat", fit_args.stat, "fit per-size min or mean delays")
      ->check(CLI::IsMember({"min", "mean"}));
  fit_cmd->add_option("--direction", fit_args.direction);
  fit_cmd->add_flag("--dump-points", fit_args.dump_points, "also print the fitted points");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitInvalid;
  }
  const bool as_json = format == "json";
  try {
    if (*probe_cmd) return CmdProbe(probe_args, as_json, out);
    if (*estimate_cmd) return CmdEstimate(estimate_args, as_json, out);
    if (*ingest_cmd) return CmdIngest(ingest_args, as_json, out);
    if (*sim_cmd) return CmdSimulate(sim_args, as_json, out);
    if (*fit_cmd) return CmdFit(fit_args, as_json, out);
  } catch (const Error& e) {
    err << "avband: " << e.what() << '\n';
    return ExitCodeFor(e.kind());
  } catch (const std::exception& e) {
    err << "avband: " << e.what() << '\n';
    return kExitOperational;
  }
  return kExitInvalid;
}

}  // namespace avband::cli
