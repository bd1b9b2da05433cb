#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>

namespace avband {

using Bytes = std::int64_t;
using Seconds = double;
using BitsPerSecond = double;

inline constexpr double kBitsPerByte = 8.0;

inline constexpr double ToBits(Bytes bytes) {
  return kBitsPerByte * static_cast<double>(bytes);
}

// Neumaier-compensated accumulator. Keeps long sums of small delays exact to
// a few ulps regardless of length, which the regression code relies on.
class CompensatedSum {
 public:
  void Add(double value) {
    const double t = sum_ + value;
    if (std::fabs(sum_) >= std::fabs(value)) {
      compensation_ += (sum_ - t) + value;
    } else {
      compensation_ += (value - t) + sum_;
    }
    sum_ = t;
  }

  double Value() const { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

inline double RelativeError(double estimate, double truth) {
  if (truth == 0.0) return std::fabs(estimate);
  return std::fabs(estimate - truth) / std::fabs(truth);
}

}  // namespace avband
