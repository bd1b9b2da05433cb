#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "avband/error.hpp"
#include "avband/estimators.hpp"
#include "avband/numeric.hpp"
#include "avband/path.hpp"
#include "avband/samples.hpp"

namespace avband {

// Analytic reference values for a path.
struct GroundTruth {
  BitsPerSecond capacity = 0.0;             // slowest hop
  BitsPerSecond available_bandwidth = 0.0;  // least unused capacity
  // Rate recovered by size-vs-delay slopes on a store-and-forward path,
  // 1 / sum(1 / C_i). Equals capacity only for a single hop.
  BitsPerSecond serial_rate = 0.0;
  Seconds d_min_zero_size = 0.0;  // total propagation
  std::vector<double> utilization;

  Seconds FixedDelayAt(Bytes w) const {
    return ToBits(w) / serial_rate + d_min_zero_size;
  }
};

inline GroundTruth ComputeGroundTruth(const PathSpec& path) {
  path.Validate();
  GroundTruth truth;
  truth.capacity = std::numeric_limits<double>::infinity();
  truth.available_bandwidth = std::numeric_limits<double>::infinity();
  CompensatedSum inverse_rate;
  CompensatedSum propagation;
  for (const Hop& h : path.hops) {
    const double u = h.cross.Utilization(h.capacity);
    truth.utilization.push_back(u);
    truth.capacity = std::min(truth.capacity, h.capacity);
    truth.available_bandwidth =
        std::min(truth.available_bandwidth, h.capacity * std::max(0.0, 1.0 - u));
    inverse_rate.Add(1.0 / h.capacity);
    propagation.Add(h.propagation);
  }
  truth.serial_rate = 1.0 / inverse_rate.Value();
  truth.d_min_zero_size = propagation.Value();
  return truth;
}

namespace detail {

inline std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Arrival instants of one hop's cross traffic, generated lazily in order.
class CrossSource {
 public:
  CrossSource(const CrossTraffic& spec, std::uint64_t stream_seed)
      : spec_(spec), rng_(stream_seed) {
    if (spec_.enabled && spec_.model == CrossModel::kScripted) {
      std::sort(spec_.scripted_arrivals.begin(), spec_.scripted_arrivals.end());
    }
    if (spec_.enabled && spec_.model == CrossModel::kOnOff) {
      const double period = spec_.on_duration + spec_.off_duration;
      per_cycle_ = std::max<std::int64_t>(
          1, static_cast<std::int64_t>(std::llround(spec_.arrival_rate * period)));
    }
    Advance();
  }

  Seconds next() const { return next_; }

  void Advance() {
    if (!spec_.enabled || (spec_.model != CrossModel::kScripted && spec_.arrival_rate <= 0.0)) {
      next_ = std::numeric_limits<double>::infinity();
      return;
    }
    switch (spec_.model) {
      case CrossModel::kPoisson: {
        // 53 random mantissa bits, u in [0, 1).
        const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
        clock_ += -std::log1p(-u) / spec_.arrival_rate;
        next_ = clock_;
        break;
      }
      case CrossModel::kOnOff: {
        const double period = spec_.on_duration + spec_.off_duration;
        const double gap = spec_.on_duration / static_cast<double>(per_cycle_);
        const std::int64_t cycle = index_ / per_cycle_;
        const std::int64_t slot = index_ % per_cycle_;
        next_ = static_cast<double>(cycle) * period + static_cast<double>(slot) * gap;
        ++index_;
        break;
      }
      case CrossModel::kScripted: {
        const auto i = static_cast<std::size_t>(index_++);
        next_ = i < spec_.scripted_arrivals.size() ? spec_.scripted_arrivals[i]
                                                   : std::numeric_limits<double>::infinity();
        break;
      }
    }
  }

 private:
  CrossTraffic spec_;
  std::mt19937_64 rng_;
  std::int64_t per_cycle_ = 1;
  std::int64_t index_ = 0;
  Seconds clock_ = 0.0;
  Seconds next_ = 0.0;
};

}  // namespace detail

// Event-driven model of a chain of single-server hops with infinite buffers.
// Each hop's server state advances only forward in time, so probes must be
// sent with non-decreasing departure times. Cross traffic at every hop is an
// independent process; its random stream is derived from (seed, hop index).
class PathSimulator {
 public:
  PathSimulator(PathSpec path, std::uint64_t seed) : path_(std::move(path)) {
    path_.Validate();
    for (std::size_t i = 0; i < path_.hops.size(); ++i) {
      const Hop& h = path_.hops[i];
      const double u = h.cross.Utilization(h.capacity);
      if (u >= 1.0) {
        throw Error(ErrorKind::kUnstableHop, "hop " + std::to_string(i) + " utilization " +
                                                 FormatDouble(u) + " >= 1");
      }
      const std::uint64_t stream = detail::SplitMix64(seed ^ detail::SplitMix64(i + 1));
      hops_.push_back(HopState{detail::CrossSource(h.cross, stream), 0.0});
    }
  }

  // Injects a w-byte probe at time `at` and returns its end-to-end delay.
  Seconds Send(Bytes w, Seconds at) {
    if (w < 1) throw Error(ErrorKind::kInvalidArgument, "probe size must be >= 1 byte");
    if (at < last_send_) {
      throw Error(ErrorKind::kInvalidArgument, "probe send times must be non-decreasing");
    }
    last_send_ = at;
    Seconds t = at;
    for (std::size_t i = 0; i < hops_.size(); ++i) {
      t = Traverse(path_.hops[i], hops_[i], w, t) + path_.hops[i].propagation;
    }
    return t - at;
  }

  const PathSpec& path() const { return path_; }

 private:
  struct HopState {
    detail::CrossSource cross;
    Seconds busy_until;  // instant the server drains everything admitted so far
  };

  // Returns the instant the probe's last bit leaves the hop.
  static Seconds Traverse(const Hop& hop, HopState& st, Bytes w, Seconds arrival) {
    const Seconds cross_service = ToBits(hop.cross.packet_size) / hop.capacity;
    // Cross packets that arrived before the probe are queued ahead of it.
    while (st.cross.next() < arrival) {
      st.busy_until = std::max(st.busy_until, st.cross.next()) + cross_service;
      st.cross.Advance();
    }
    Seconds start = std::max(arrival, st.busy_until);
    Seconds remaining = ToBits(w) / hop.capacity;
    if (hop.discipline == HopDiscipline::kInterleave) {
      // Cross packets arriving before the probe completes are served first;
      // the probe resumes where it stopped.
      while (st.cross.next() < start + remaining) {
        const Seconds a = st.cross.next();
        if (a > start) {
          remaining -= a - start;
          start = a;
        }
        start += cross_service;
        st.cross.Advance();
      }
    }
    st.busy_until = start + remaining;
    return st.busy_until;
  }

  PathSpec path_;
  std::vector<HopState> hops_;
  Seconds last_send_ = -std::numeric_limits<double>::infinity();
};

// Delay of a single probe through a fresh simulation.
inline Seconds SimulateProbe(const PathSpec& path, Bytes w, std::uint64_t seed,
                             Seconds start_time) {
  PathSimulator sim(path, seed);
  return sim.Send(w, start_time);
}

struct ExperimentConfig {
  std::vector<Bytes> sizes = {100, 1024};
  std::int64_t probes_per_size = 10;
  Seconds pacing = 0.01;
  std::uint64_t seed = 1;
  // Cross traffic starts at t = 0 with empty queues; the first probe leaves
  // at start_time so queues are warmed up.
  Seconds start_time = 1.0;
};

struct Experiment {
  SampleSet samples;
  GroundTruth truth;
};

// Sends probes_per_size probes of every size, cycling through the sizes in
// ascending order each round so all sizes see the same cross-traffic epoch.
inline Experiment RunExperiment(const PathSpec& path, const ExperimentConfig& config) {
  if (config.probes_per_size < 1) {
    throw Error(ErrorKind::kInvalidArgument, "probes_per_size must be >= 1");
  }
  if (config.sizes.empty()) throw Error(ErrorKind::kInvalidArgument, "no probe sizes");
  if (!(config.pacing >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "pacing must be >= 0");
  std::vector<Bytes> sizes = config.sizes;
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());

  PathSimulator sim(path, config.seed);
  Experiment exp;
  exp.truth = ComputeGroundTruth(path);
  exp.samples.source = "sim:seed=" + std::to_string(config.seed);
  std::uint64_t seq = 0;
  Seconds t = config.start_time;
  for (std::int64_t round = 0; round < config.probes_per_size; ++round) {
    for (Bytes w : sizes) {
      ProbeSample s;
      s.size = w;
      s.delay = sim.Send(w, t);
      s.direction = Direction::kOneWayForward;
      s.seq = seq++;
      s.sent_at = t;
      exp.samples.samples.push_back(s);
      t += config.pacing;
    }
  }
  return exp;
}

}  // namespace avband
