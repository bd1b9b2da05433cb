#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "../tools/avband_cli.hpp"

namespace avband::cli {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;

  json Json() const { return json::parse(out); }
};

Outcome Cli(std::vector<std::string> args) {
  args.insert(args.begin(), "avband");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  Outcome o;
  o.code = Run(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string Fixture(const std::string& name) { return std::string(AVBAND_FIXTURE_DIR) + "/" + name; }
std::string Config(const std::string& name) { return std::string(AVBAND_CONFIG_DIR) + "/" + name; }

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("avband_cli_" + std::to_string(::getpid()) + "_" +
                                         std::to_string(counter_++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string File(const std::string& name, const std::string& contents = {}) const {
    const auto p = (path_ / name).string();
    if (!contents.empty()) std::ofstream(p) << contents;
    return p;
  }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

constexpr double kMbps = 1e6;

// --- estimate --------------------------------------------------------------------

TEST(CliEstimate, ForwardFixture) {
  const auto o = Cli({"--format", "json", "estimate", Fixture("forward_dmean_571us.csv")});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto j = o.Json();
  EXPECT_EQ(j["command"], "estimate");
  EXPECT_NEAR(j["estimate"]["b_av_bps"].get<double>() / kMbps, 12.9, 0.05);
}

TEST(CliEstimate, ReverseFixture) {
  const auto o = Cli({"--format", "json", "estimate", Fixture("reverse_dmin_492us_dmean_511us.csv")});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto j = o.Json();
  EXPECT_NEAR(j["estimate"]["capacity_bps"].get<double>() / kMbps, 15.0, 0.05);
  EXPECT_NEAR(j["estimate"]["b_av_bps"].get<double>() / kMbps, 14.466, 0.05);
}

TEST(CliEstimate, HumanOutputUsesThreeSignificantDigits) {
  const auto o = Cli({"--format", "human", "estimate", Fixture("reverse_dmin_492us_dmean_511us.csv")});
  ASSERT_EQ(o.code, 0);
  EXPECT_NE(o.out.find("15.0 Mbps"), std::string::npos) << o.out;
  EXPECT_NE(o.out.find("14.5 Mbps"), std::string::npos) << o.out;
}

TEST(CliEstimate, AdslRoundTrip) {
  const auto o = Cli({"--format", "json", "estimate", Fixture("adsl_rtt.csv")});
  ASSERT_EQ(o.code, 0);
  EXPECT_NEAR(o.Json()["estimate"]["b_av_bps"].get<double>(), 333333.33, 0.01);
}

TEST(CliEstimate, StatAndMethodSelection) {
  const auto file = Fixture("reverse_dmin_492us_dmean_511us.csv");
  auto j = Cli({"--format", "json", "estimate", file, "--stat", "min"}).Json();
  EXPECT_TRUE(j["estimate"].contains("capacity_bps"));
  EXPECT_FALSE(j["estimate"].contains("b_av_bps"));
  j = Cli({"--format", "json", "estimate", file, "--stat", "mean"}).Json();
  EXPECT_FALSE(j["estimate"].contains("capacity_bps"));
  EXPECT_TRUE(j["estimate"].contains("b_av_bps"));
  j = Cli({"--format", "json", "estimate", Fixture("exact_line.csv"), "--method", "fit"}).Json();
  EXPECT_EQ(j["estimate"]["method"], "regression");
  EXPECT_NEAR(j["estimate"]["capacity_bps"].get<double>(), 10e6, 1e-3);
  EXPECT_NEAR(j["estimate"]["d_min_s"].get<double>(), 0.001, 1e-12);
}

TEST(CliEstimate, ExitCodes) {
  EXPECT_EQ(Cli({"estimate", Fixture("empty.csv")}).code, 1);
  EXPECT_EQ(Cli({"estimate", Fixture("header_only.csv")}).code, 2);
  const auto bad = Cli({"estimate", Fixture("bad_row.csv")});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("row 3"), std::string::npos) << bad.err;
  EXPECT_EQ(Cli({"estimate", Fixture("no_such_file.csv")}).code, 1);
  EXPECT_EQ(Cli({"estimate"}).code, 2);
  EXPECT_EQ(Cli({"estimate", Fixture("exact_line.csv"), "--stat", "median"}).code, 2);
  EXPECT_EQ(Cli({"bogus"}).code, 2);
  EXPECT_EQ(Cli({}).code, 2);
  EXPECT_EQ(Cli({"--help"}).code, 0);
}

TEST(CliEstimate, MixedDirectionsNeedSelection) {
  TempDir tmp;
  const auto file = tmp.File("mixed.csv",
                             "size_bytes,delay_s,direction,seq,sent_at\n"
                             "100,0.010,one_way_forward,0,0\n"
                             "1000,0.011,one_way_forward,1,0\n"
                             "100,0.020,one_way_reverse,2,0\n"
                             "1000,0.022,one_way_reverse,3,0\n");
  const auto mixed = Cli({"estimate", file});
  EXPECT_EQ(mixed.code, 2);
  EXPECT_NE(mixed.err.find("MixedDirections"), std::string::npos);
  const auto fwd = Cli({"--format", "json", "estimate", file, "--direction", "one_way_forward"});
  ASSERT_EQ(fwd.code, 0) << fwd.err;
  EXPECT_NEAR(fwd.Json()["estimate"]["b_av_bps"].get<double>(), 7200.0 / 0.001, 1e-3);
}

TEST(CliEstimate, OutlierFilterDropsSpike) {
  TempDir tmp;
  std::string csv = "size_bytes,delay_s,direction,seq,sent_at\n";
  for (int i = 0; i < 8; ++i) csv += "100,0.010,round_trip," + std::to_string(i) + ",0\n";
  for (int i = 0; i < 8; ++i) csv += "1100,0.011,round_trip," + std::to_string(8 + i) + ",0\n";
  csv += "1100,0.5,round_trip,16,0\n";
  const auto file = tmp.File("spike.csv", csv);
  const auto raw = Cli({"--format", "json", "estimate", file}).Json();
  const auto filtered = Cli({"--format", "json", "estimate", file, "--filter-outliers", "1.5"}).Json();
  EXPECT_LT(raw["estimate"]["b_av_bps"].get<double>(), 1e6);
  EXPECT_NEAR(filtered["estimate"]["b_av_bps"].get<double>(), 8e6, 1.0);
}

// --- JSON contract -----------------------------------------------------------------

TEST(CliJson, DerivedFieldsRecomputeFromStats) {
  for (const char* name : {"forward_dmean_571us.csv", "reverse_dmin_492us_dmean_511us.csv",
                           "adsl_rtt.csv"}) {
    SCOPED_TRACE(name);
    const auto j = Cli({"--format", "json", "estimate", Fixture(name)}).Json();
    const auto& s = j["stats"];
    ASSERT_EQ(s.size(), 2u);
    const auto w1 = s[0]["size_bytes"].get<Bytes>();
    const auto w2 = s[1]["size_bytes"].get<Bytes>();
    const double mean1 = s[0]["d_mean_s"], mean2 = s[1]["d_mean_s"];
    const double min1 = s[0]["d_min_s"], min2 = s[1]["d_min_s"];
    EXPECT_EQ(j["estimate"]["b_av_bps"].get<double>(),
              8.0 * static_cast<double>(w2 - w1) / (mean2 - mean1));
    EXPECT_EQ(j["estimate"]["capacity_bps"].get<double>(),
              8.0 * static_cast<double>(w2 - w1) / (min2 - min1));
    EXPECT_EQ(j["estimate"]["d_min_s"].get<double>(),
              (static_cast<double>(w2) * min1 - static_cast<double>(w1) * min2) /
                  static_cast<double>(w2 - w1));
    EXPECT_EQ(j["estimate"]["small_size_bytes"], w1);
    EXPECT_EQ(j["estimate"]["large_size_bytes"], w2);
  }
}

TEST(CliJson, EnvironmentSetsDefaultFormat) {
  const auto file = Fixture("forward_dmean_571us.csv");
  ::setenv(kFormatEnv, "json", 1);
  const auto from_env = Cli({"estimate", file});
  const auto overridden = Cli({"--format", "human", "estimate", file});
  ::unsetenv(kFormatEnv);
  const auto plain = Cli({"estimate", file});
  EXPECT_NO_THROW(from_env.Json());
  EXPECT_EQ(from_env.out.front(), '{');
  EXPECT_NE(overridden.out.front(), '{');
  EXPECT_NE(plain.out.front(), '{');
  EXPECT_EQ(Cli({"--format", "xml", "estimate", file}).code, 2);
}

TEST(CliFormat, Mbps) {
  EXPECT_EQ(FormatMbps(15.024e6), "15.0 Mbps");
  EXPECT_EQ(FormatMbps(12.946e6), "12.9 Mbps");
  EXPECT_EQ(FormatMbps(14.466e6), "14.5 Mbps");
  EXPECT_EQ(FormatMbps(333333.33), "0.333 Mbps");
  EXPECT_EQ(FormatMbps(15189e6), "15200 Mbps");
  EXPECT_EQ(FormatMbps(100e6), "100 Mbps");
  EXPECT_EQ(FormatMbps(9.9996e6), "10.0 Mbps");
}

// --- ingest --------------------------------------------------------------------------

TEST(CliIngest, PaperTables) {
  const auto o = Cli({"--format", "json", "ingest", Fixture("table1_send.txt"), Fixture("table2_recv.txt")});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto j = o.Json();
  EXPECT_EQ(j["matching"]["pairs"], 2);
  EXPECT_EQ(j["matching"]["unmatched_send"], 1);
  EXPECT_EQ(j["matching"]["delay_difference_s"].get<double>(), 0.044084 - 0.043591);
  EXPECT_NEAR(j["matching"]["delay_difference_s"].get<double>(), 0.000493, 1e-12);
}

TEST(CliIngest, SwappedFilesWarnNoMatches) {
  const auto o = Cli({"--format", "json", "ingest", Fixture("table2_recv.txt"), Fixture("table1_send.txt")});
  EXPECT_NE(o.code, 0);
  bool warned = false;
  if (!o.out.empty()) {
    const auto j = o.Json();
    for (const auto& w : j["warnings"]) warned |= w.get<std::string>().find("0 matches") != std::string::npos;
  }
  warned |= o.err.find("0 matches") != std::string::npos;
  EXPECT_TRUE(warned) << o.out << o.err;
}

TEST(CliIngest, WritesSamplesAndEstimates) {
  TempDir tmp;
  std::string snd, rcv;
  for (int i = 0; i < 20; ++i) {
    const int size = i % 2 ? 1024 : 100;
    const double delay = 0.040 + (size == 1024 ? 0.000571 : 0.0);
    snd += "SNDP 9 " + std::to_string(1000 + i) + " -h tt01.ripe.net -p 6000 -n " + std::to_string(size) +
           " -s " + std::to_string(500 + i) + "\n";
    std::ostringstream line;
    line << "RCDP 12 2 1.2.3.4 60322 5.6.7.8 6000 " << 1000 + i << ".5 " << delay
         << " 0X2107 0X2107 " << 500 + i << " 0.000002 0.000008\n";
    rcv += line.str();
  }
  const auto out_csv = tmp.File("samples.csv");
  const auto o = Cli({"--format", "json", "ingest", tmp.File("s.txt", snd), tmp.File("r.txt", rcv),
                      "--samples-out", out_csv});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto j = o.Json();
  EXPECT_EQ(j["matching"]["pairs"], 20);
  EXPECT_NEAR(j["estimate"]["b_av_bps"].get<double>() / kMbps, 12.946, 0.05);
  const auto reread = Cli({"--format", "json", "estimate", out_csv, "--direction", "one_way_forward"});
  ASSERT_EQ(reread.code, 0) << reread.err;
  EXPECT_EQ(reread.Json()["estimate"]["b_av_bps"], j["estimate"]["b_av_bps"]);
  const auto adj = Cli({"--format", "json", "ingest", tmp.File("s.txt"), tmp.File("r.txt"), "--pairing", "adjacent"});
  ASSERT_EQ(adj.code, 0) << adj.err;
  EXPECT_NEAR(adj.Json()["matching"]["adjacent"]["mean_difference_s"].get<double>(), 0.000571, 1e-12);
}

TEST(CliIngest, MalformedLineNamesFileAndLine) {
  TempDir tmp;
  const auto snd = tmp.File("bad.txt", "SNDP 9 1 -h x -p 6000 -n 100 -s 1\nSNDP nine\n");
  const auto o = Cli({"ingest", snd, Fixture("table2_recv.txt")});
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("MalformedLine"), std::string::npos) << o.err;
  EXPECT_NE(o.err.find("line 2"), std::string::npos) << o.err;
}

// --- simulate ----------------------------------------------------------------------------

TEST(CliSimulate, IdlePathRecoversGroundTruth) {
  const auto o = Cli({"--format", "json", "simulate", Config("two_hop_idle.conf")});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto j = o.Json();
  int compared = 0;
  for (const auto& row : j["comparison"]) {
    SCOPED_TRACE(row.dump());
    if (row["quantity"] == "b_av_bps") continue;  // mean delays equal min delays here too
    EXPECT_LT(row["relative_error"].get<double>(), 1e-6);
    ++compared;
  }
  EXPECT_EQ(compared, 2);
  const double serial = 1.0 / (1.0 / 10e6 + 1.0 / 100e6);
  EXPECT_NEAR(j["ground_truth"]["serial_rate_bps"].get<double>(), serial, 1e-6);
  EXPECT_NEAR(j["ground_truth"]["d_min_zero_size_s"].get<double>(), 0.003, 1e-15);
}

TEST(CliSimulate, SameSeedSameBytes) {
  const auto a = Cli({"--format", "json", "simulate", Config("two_hop_access_u50.conf"), "--seed", "7"});
  const auto b = Cli({"--format", "json", "simulate", Config("two_hop_access_u50.conf"), "--seed", "7"});
  const auto c = Cli({"--format", "json", "simulate", Config("two_hop_access_u50.conf"), "--seed", "8"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out, c.out);
  const auto h1 = Cli({"simulate", Config("two_hop_access_u50.conf"), "--seed", "7"});
  const auto h2 = Cli({"simulate", Config("two_hop_access_u50.conf"), "--seed", "7"});
  EXPECT_EQ(h1.out, h2.out);
}

TEST(CliSimulate, CoreU95ShowsFiveMbpsAvailable) {
  const auto j = Cli({"--format", "json", "simulate", Config("two_hop_core_u95.conf")}).Json();
  EXPECT_NEAR(j["ground_truth"]["available_bandwidth_bps"].get<double>(), 5e6, 1e-3);
  EXPECT_NEAR(j["ground_truth"]["capacity_bps"].get<double>(), 10e6, 1e-3);
  const auto human = Cli({"simulate", Config("two_hop_core_u95.conf")});
  EXPECT_NE(human.out.find("available 5.00 Mbps"), std::string::npos) << human.out;
}

TEST(CliSimulate, UnstableHopIsOperationalError) {
  TempDir tmp;
  const auto conf = tmp.File("unstable.conf",
                             "[hop]\ncapacity_bps = 10e6\npropagation_s = 0\n"
                             "cross_model = poisson\ncross_size_bytes = 500\ncross_utilization = 1.2\n");
  const auto o = Cli({"simulate", conf});
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("UnstableHop"), std::string::npos) << o.err;
  EXPECT_EQ(Cli({"simulate", tmp.File("missing.conf")}).code, 1);
}

// --- fit ------------------------------------------------------------------------------------

TEST(CliFit, ExactLine) {
  const auto o = Cli({"--format", "json", "fit", Fixture("exact_line.csv"), "--dump-points"});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto j = o.Json();
  EXPECT_NEAR(j["fit"]["r_squared"].get<double>(), 1.0, 1e-12);
  EXPECT_NEAR(j["fit"]["rate_bps"].get<double>(), 10e6, 1e-3);
  EXPECT_NEAR(j["fit"]["intercept_s"].get<double>(), 0.001, 1e-12);
  ASSERT_EQ(j["points"].size(), 4u);
  EXPECT_EQ(j["points"][0]["size_bytes"], 100);
  const auto human = Cli({"fit", Fixture("exact_line.csv"), "--dump-points"});
  EXPECT_NE(human.out.find("size_bytes,delay_s\n100,"), std::string::npos) << human.out;
}

TEST(CliFit, TwoSizesMatchTwoPointFormulas) {
  const auto file = Fixture("reverse_dmin_492us_dmean_511us.csv");
  const auto fit_min = Cli({"--format", "json", "fit", file, "--stat", "min"}).Json();
  const auto fit_mean = Cli({"--format", "json", "fit", file, "--stat", "mean"}).Json();
  const auto est = Cli({"--format", "json", "estimate", file}).Json();
  const double cap = est["estimate"]["capacity_bps"], bav = est["estimate"]["b_av_bps"];
  EXPECT_NEAR(fit_min["fit"]["rate_bps"].get<double>(), cap, cap * 1e-9);
  EXPECT_NEAR(fit_mean["fit"]["rate_bps"].get<double>(), bav, bav * 1e-9);
}

TEST(CliFit, SingleSizeIsDegenerate) {
  TempDir tmp;
  const auto file = tmp.File("one.csv",
                             "size_bytes,delay_s,direction,seq,sent_at\n"
                             "100,0.010,round_trip,0,0\n100,0.011,round_trip,1,0\n");
  const auto o = Cli({"fit", file});
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("DegenerateInput"), std::string::npos) << o.err;
}

TEST(CliFit, MinCapacityAtLeastMeanBandwidthUnderCrossTraffic) {
  TempDir tmp;
  const auto samples = tmp.File("sim.csv");
  ASSERT_EQ(Cli({"simulate", Config("two_hop_access_u50.conf"), "--probes", "200", "--sizes",
                 "100,500,1000,1500", "--samples-out", samples})
                .code,
            0);
  const auto min_fit = Cli({"--format", "json", "fit", samples, "--stat", "min"}).Json();
  const auto mean_fit = Cli({"--format", "json", "fit", samples, "--stat", "mean"}).Json();
  EXPECT_GE(min_fit["fit"]["rate_bps"].get<double>(), mean_fit["fit"]["rate_bps"].get<double>());
}

// --- probe ------------------------------------------------------------------------------------

TEST(CliProbe, UsageErrorsBeforeSending) {
  EXPECT_EQ(Cli({"probe", "127.0.0.1", "--sizes", "64"}).code, 2);
  EXPECT_EQ(Cli({"probe", "127.0.0.1", "--retries", "0"}).code, 2);
  EXPECT_EQ(Cli({"probe", "127.0.0.1", "--mode", "tcp"}).code, 2);
  EXPECT_EQ(Cli({"probe"}).code, 2);
}

TEST(CliProbe, UnknownHost) {
  const auto o = Cli({"probe", "no-such-host.invalid"});
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("ResolveFailure"), std::string::npos) << o.err;
}

TEST(CliProbe, LoopbackJson) {
  const auto o = Cli({"--format", "json", "probe", "127.0.0.1", "--sizes", "64,1064", "--retries", "30",
                      "--pacing", "0", "--filter-outliers", "1.5"});
  if (o.code == 1 && o.err.find("PermissionDenied") != std::string::npos) {
    GTEST_SKIP() << "no ICMP socket permission";
  }
  ASSERT_EQ(o.code, 0) << o.err;
  const auto j = o.Json();
  ASSERT_TRUE(j["estimate"].contains("b_av_bps")) << o.out;
  EXPECT_GT(j["estimate"]["b_av_bps"].get<double>(), 0.0);
  EXPECT_EQ(j["probe"]["per_size"].size(), 2u);
  EXPECT_EQ(j["estimate"]["channel"], "outgoing (round-trip based)");
}

// --- installed binary --------------------------------------------------------------------------

int RunBinary(const std::string& args, std::string* output) {
  const std::string cmd = std::string(AVBAND_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return -1;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) output->append(buf, n);
  const int status = ::pclose(pipe);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(CliBinary, ExitCodesAndEnvFormat) {
  std::string out;
  EXPECT_EQ(RunBinary("estimate " + Fixture("forward_dmean_571us.csv"), &out), 0);
  EXPECT_NE(out.find("12.9 Mbps"), std::string::npos) << out;
  out.clear();
  EXPECT_EQ(RunBinary("estimate " + Fixture("empty.csv"), &out), 1);
  out.clear();
  EXPECT_EQ(RunBinary("estimate " + Fixture("header_only.csv"), &out), 2);
  out.clear();
  EXPECT_EQ(RunBinary("probe 127.0.0.1 --sizes 64", &out), 2);
  out.clear();
  EXPECT_EQ(RunBinary("--help", &out), 0);
  out.clear();
  EXPECT_EQ(RunBinary(std::string("estimate ") + Fixture("adsl_rtt.csv"), &out), 0);
  EXPECT_NE(out.find("0.333 Mbps"), std::string::npos) << out;
  out.clear();
  const std::string env_cmd = "AVBAND_FORMAT=json " + std::string(AVBAND_CLI_PATH) + " estimate " +
                              Fixture("adsl_rtt.csv");
  FILE* pipe = ::popen(env_cmd.c_str(), "r");
  ASSERT_NE(pipe, nullptr);
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) out.append(buf, n);
  ::pclose(pipe);
  EXPECT_EQ(json::parse(out)["command"], "estimate");
}

}  // namespace
}  // namespace avband::cli
