#pragma once

#include <string>
#include <vector>

#include "avband/error.hpp"
#include "avband/numeric.hpp"

namespace avband {

enum class CrossModel {
  kPoisson,   // exponential inter-arrivals at arrival_rate
  kOnOff,     // deterministic: evenly spaced bursts during on periods
  kScripted,  // explicit arrival instants, for hand-traced scenarios
};

// Competing traffic entering one hop's queue.
struct CrossTraffic {
  bool enabled = false;
  CrossModel model = CrossModel::kPoisson;
  double arrival_rate = 0.0;  // mean packets/s
  Bytes packet_size = 1000;
  Seconds on_duration = 0.010;   // kOnOff only
  Seconds off_duration = 0.010;  // kOnOff only
  std::vector<Seconds> scripted_arrivals;  // kScripted only, absolute times

  // Long-run share of the link consumed, rate * bits / capacity. Scripted
  // arrivals are a finite transient and count as zero load.
  double Utilization(BitsPerSecond capacity) const {
    if (!enabled || model == CrossModel::kScripted) return 0.0;
    return arrival_rate * ToBits(packet_size) / capacity;
  }
};

// How the hop's server orders the probe against cross traffic.
enum class HopDiscipline {
  kFifo,        // store-and-forward, first come first served
  kInterleave,  // cross packets preempt an in-progress probe, which resumes
};

struct Hop {
  BitsPerSecond capacity = 0.0;
  Seconds propagation = 0.0;
  CrossTraffic cross;
  HopDiscipline discipline = HopDiscipline::kFifo;
};

struct PathSpec {
  std::vector<Hop> hops;

  // Checks structural invariants; stability (utilization < 1) is checked by
  // the simulator since the fluid formulas remain valid without it.
  void Validate() const {
    if (hops.empty()) throw Error(ErrorKind::kEmptyPath, "path has no hops");
    for (std::size_t i = 0; i < hops.size(); ++i) {
      const Hop& h = hops[i];
      if (!(h.capacity > 0.0)) {
        throw Error(ErrorKind::kInvalidArgument,
                    "hop " + std::to_string(i) + " capacity must be > 0");
      }
      if (!(h.propagation >= 0.0)) {
        throw Error(ErrorKind::kInvalidArgument,
                    "hop " + std::to_string(i) + " propagation must be >= 0");
      }
      if (h.cross.arrival_rate < 0.0 || h.cross.packet_size < 1) {
        throw Error(ErrorKind::kInvalidArgument,
                    "hop " + std::to_string(i) + " cross traffic rate/size invalid");
      }
      if (h.cross.model == CrossModel::kOnOff &&
          !(h.cross.on_duration > 0.0 && h.cross.off_duration >= 0.0)) {
        throw Error(ErrorKind::kInvalidArgument,
                    "hop " + std::to_string(i) + " on/off durations invalid");
      }
    }
  }
};

}  // namespace avband
