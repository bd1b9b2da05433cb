#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avband/error.hpp"
#include "avband/numeric.hpp"
#include "avband/path.hpp"
#include "avband/samples.hpp"

namespace avband {

// Throughput and delay formulas relating packet size to delay.
//
// Sizes enter in bytes and leave the formulas as bits/s; the byte->bit
// conversion happens in exactly one place per formula (ToBits). Every
// estimator validates its preconditions and throws avband::Error with a
// specific kind instead of returning a non-physical number.

namespace detail {

inline void RequireSize(Bytes w, const char* name) {
  if (w < 1) {
    throw Error(ErrorKind::kInvalidArgument,
                std::string(name) + " must be >= 1 byte, got " + std::to_string(w));
  }
}

inline void RequireTwoPoint(Bytes w1, Seconds d1, Bytes w2, Seconds d2) {
  RequireSize(w1, "w1");
  if (w2 <= w1) {
    throw Error(ErrorKind::kSizeOrder, "need w2 > w1, got w1=" + std::to_string(w1) +
                                           " w2=" + std::to_string(w2));
  }
  if (!(d1 > 0.0)) throw Error(ErrorKind::kNonPositiveDelay, "d1 must be > 0");
  if (!(d2 > d1)) {
    throw Error(ErrorKind::kNonIncreasingDelay,
                "delay does not grow with size (d2 - d1 = " + FormatDouble(d2 - d1) +
                    " s); noise dominates, collect more samples");
  }
}

}  // namespace detail

// Throughput of a directly connected hop: bits carried per second of delay.
inline BitsPerSecond SingleHopThroughput(Bytes w, Seconds d) {
  detail::RequireSize(w, "w");
  if (!(d > 0.0)) throw Error(ErrorKind::kNonPositiveDelay, "delay must be > 0");
  return ToBits(w) / d;
}

// Minimum possible delay of a w-byte packet over a store-and-forward path:
// per-hop transmission plus propagation. w = 0 gives the zero-size limit.
inline Seconds FixedDelay(const PathSpec& path, Bytes w) {
  if (path.hops.empty()) throw Error(ErrorKind::kEmptyPath, "path has no hops");
  if (w < 0) throw Error(ErrorKind::kInvalidArgument, "w must be >= 0");
  CompensatedSum inverse_rate;
  CompensatedSum propagation;
  for (const Hop& h : path.hops) {
    if (!(h.capacity > 0.0) || !(h.propagation >= 0.0)) {
      throw Error(ErrorKind::kInvalidArgument, "hop needs capacity > 0, propagation >= 0");
    }
    inverse_rate.Add(1.0 / h.capacity);
    propagation.Add(h.propagation);
  }
  return ToBits(w) * inverse_rate.Value() + propagation.Value();
}

// Queueing residual of one observation above the fixed delay.
inline Seconds VariableComponent(Seconds d, Seconds d_fixed) {
  if (d < d_fixed) {
    throw Error(ErrorKind::kNegativeResidual,
                "delay " + FormatDouble(d) + " s below fixed delay " + FormatDouble(d_fixed) +
                    " s; wrong fixed delay or clock error");
  }
  return d - d_fixed;
}

// Single-packet bandwidth after removing the size-independent intercept.
inline BitsPerSecond BandwidthFromIntercept(Bytes w, Seconds d_av, Seconds a) {
  detail::RequireSize(w, "w");
  if (!(d_av > a)) {
    throw Error(ErrorKind::kInterceptExceedsDelay,
                "intercept " + FormatDouble(a) + " s >= delay " + FormatDouble(d_av) + " s");
  }
  return ToBits(w) / (d_av - a);
}

// Available bandwidth from mean delays at two sizes.
inline BitsPerSecond AvailableBandwidthTwoPoint(Bytes w1, Seconds d1, Bytes w2, Seconds d2) {
  detail::RequireTwoPoint(w1, d1, w2, d2);
  return ToBits(w2 - w1) / (d2 - d1);
}

// Capacity from per-size minimum delays at two sizes.
inline BitsPerSecond CapacityTwoPoint(Bytes w1, Seconds d1_min, Bytes w2, Seconds d2_min) {
  detail::RequireTwoPoint(w1, d1_min, w2, d2_min);
  return ToBits(w2 - w1) / (d2_min - d1_min);
}

inline BitsPerSecond CapacityFromDmin(Bytes w, Seconds d_fixed, Seconds d_min) {
  detail::RequireSize(w, "w");
  if (!(d_fixed > d_min)) {
    throw Error(ErrorKind::kNonPositiveDenominator,
                "fixed delay " + FormatDouble(d_fixed) + " s must exceed d_min " +
                    FormatDouble(d_min) + " s");
  }
  return ToBits(w) / (d_fixed - d_min);
}

// Zero-size delay: where the line through (w1, d1) and (w2, d2) meets the
// delay axis. A negative result is returned as is; it is non-physical and
// means the inputs are noise-dominated, so callers must check the sign.
inline Seconds DminTwoPoint(Bytes w1, Seconds d1, Bytes w2, Seconds d2) {
  if (w2 <= w1) {
    throw Error(ErrorKind::kSizeOrder, "need w2 > w1, got w1=" + std::to_string(w1) +
                                           " w2=" + std::to_string(w2));
  }
  if (d2 < d1) {
    throw Error(ErrorKind::kNonIncreasingDelay, "need d2 >= d1 for a zero-size intercept");
  }
  const double x1 = static_cast<double>(w1);
  const double x2 = static_cast<double>(w2);
  return (x2 * d1 - x1 * d2) / (x2 - x1);
}

// ---------------------------------------------------------------------------
// Regression of delay on size.

struct SizeDelayPoint {
  Bytes size = 0;
  Seconds delay = 0.0;
};

struct AffineFit {
  double slope = 0.0;      // seconds per byte
  Seconds intercept = 0.0;
  double r_squared = 0.0;
  std::size_t n_points = 0;

  // End-to-end rate implied by the slope; only meaningful when slope > 0.
  std::optional<BitsPerSecond> Rate() const {
    if (!(slope > 0.0)) return std::nullopt;
    return kBitsPerByte / slope;
  }
};

// Ordinary least squares of delay on size, computed on centered data with
// compensated sums so r^2 stays stable for very long inputs.
inline AffineFit FitAffine(std::span<const SizeDelayPoint> points) {
  if (points.size() < 2) {
    throw Error(ErrorKind::kDegenerateInput, "affine fit needs at least 2 points");
  }
  CompensatedSum sx, sy;
  for (const auto& p : points) {
    sx.Add(static_cast<double>(p.size));
    sy.Add(p.delay);
  }
  const double n = static_cast<double>(points.size());
  const double x_mean = sx.Value() / n;
  const double y_mean = sy.Value() / n;
  CompensatedSum sxx, sxy, syy;
  for (const auto& p : points) {
    const double dx = static_cast<double>(p.size) - x_mean;
    const double dy = p.delay - y_mean;
    sxx.Add(dx * dx);
    sxy.Add(dx * dy);
    syy.Add(dy * dy);
  }
  if (!(sxx.Value() > 0.0)) {
    throw Error(ErrorKind::kDegenerateInput, "all points share one packet size");
  }
  AffineFit fit;
  fit.n_points = points.size();
  fit.slope = sxy.Value() / sxx.Value();
  fit.intercept = y_mean - fit.slope * x_mean;
  CompensatedSum ss_res;
  for (const auto& p : points) {
    const double r = p.delay - (fit.intercept + fit.slope * static_cast<double>(p.size));
    ss_res.Add(r * r);
  }
  const double ss_tot = syy.Value();
  fit.r_squared = ss_tot > 0.0 ? std::clamp(1.0 - ss_res.Value() / ss_tot, 0.0, 1.0) : 1.0;
  return fit;
}

enum class DelayStatistic { kMin, kMean };

inline std::vector<SizeDelayPoint> StatsToPoints(std::span<const SizeDelayStats> stats,
                                                 DelayStatistic statistic) {
  std::vector<SizeDelayPoint> points;
  for (const auto& s : stats) {
    if (s.count < 1) continue;
    points.push_back({s.size, statistic == DelayStatistic::kMin ? s.d_min : s.d_mean});
  }
  return points;
}

// One point per size (its minimum or mean delay).
inline AffineFit FitAffine(std::span<const SizeDelayStats> stats, DelayStatistic statistic) {
  const auto points = StatsToPoints(stats, statistic);
  return FitAffine(std::span<const SizeDelayPoint>(points));
}

// ---------------------------------------------------------------------------
// Intercept as a linear function of hop count and path length.

struct InterceptObservation {
  double hops = 0.0;
  double length = 0.0;  // caller-defined units
  Seconds intercept = 0.0;
};

struct InterceptModel {
  double alpha = 0.0;  // seconds per hop
  double beta = 0.0;   // seconds per length unit
  double residual_norm = 0.0;
  double alpha_stderr = 0.0;  // 0 when there are no residual degrees of freedom
  double beta_stderr = 0.0;
  // Set when hops and length are collinear: a single combined coefficient is
  // reported (in alpha when hops carries signal, otherwise in beta).
  bool rank_deficient = false;
  Warnings warnings;
};

// Least squares for intercept ~ alpha * hops + beta * length (no constant
// term), via modified Gram-Schmidt QR on the two regressor columns.
inline InterceptModel FitInterceptModel(std::span<const InterceptObservation> obs) {
  if (obs.size() < 2) {
    throw Error(ErrorKind::kDegenerateInput, "intercept model needs >= 2 observations");
  }
  const std::size_t m = obs.size();
  std::vector<double> x1(m), x2(m), y(m);
  for (std::size_t i = 0; i < m; ++i) {
    x1[i] = obs[i].hops;
    x2[i] = obs[i].length;
    y[i] = obs[i].intercept;
  }
  auto dot = [m](const std::vector<double>& a, const std::vector<double>& b) {
    CompensatedSum s;
    for (std::size_t i = 0; i < m; ++i) s.Add(a[i] * b[i]);
    return s.Value();
  };
  const double norm1 = std::sqrt(dot(x1, x1));
  const double norm2 = std::sqrt(dot(x2, x2));
  if (norm1 == 0.0 && norm2 == 0.0) {
    throw Error(ErrorKind::kDegenerateInput, "hops and length are all zero");
  }

  InterceptModel model;
  // One-column fit used when the design is rank deficient.
  auto fit_single = [&](const std::vector<double>& x, double norm, double& coef, double& se) {
    coef = dot(x, y) / (norm * norm);
    CompensatedSum s;
    for (std::size_t i = 0; i < m; ++i) {
      const double r = y[i] - coef * x[i];
      s.Add(r * r);
    }
    model.residual_norm = std::sqrt(s.Value());
    se = model.residual_norm / std::sqrt(static_cast<double>(m - 1)) / norm;
  };

  if (norm2 == 0.0) {
    model.rank_deficient = true;
    fit_single(x1, norm1, model.alpha, model.alpha_stderr);
    model.warnings.push_back("length is zero everywhere; beta unconstrained, fitted hop count only");
    return model;
  }
  if (norm1 == 0.0) {
    model.rank_deficient = true;
    fit_single(x2, norm2, model.beta, model.beta_stderr);
    model.warnings.push_back("hop count is zero everywhere; alpha unconstrained, fitted length only");
    return model;
  }

  std::vector<double> q1(m), v(m);
  for (std::size_t i = 0; i < m; ++i) q1[i] = x1[i] / norm1;
  const double r12 = dot(q1, x2);
  for (std::size_t i = 0; i < m; ++i) v[i] = x2[i] - r12 * q1[i];
  const double r22 = std::sqrt(dot(v, v));
  if (r22 <= 1e-12 * norm2) {
    model.rank_deficient = true;
    fit_single(x1, norm1, model.alpha, model.alpha_stderr);
    model.warnings.push_back(
        "hop count and length are collinear; alpha is the combined coefficient, beta set to 0");
    return model;
  }

  std::vector<double> q2(m), y1(m);
  for (std::size_t i = 0; i < m; ++i) q2[i] = v[i] / r22;
  const double c1 = dot(q1, y);
  for (std::size_t i = 0; i < m; ++i) y1[i] = y[i] - c1 * q1[i];
  model.beta = dot(q2, y1) / r22;
  model.alpha = (c1 - r12 * model.beta) / norm1;
  CompensatedSum ss;
  for (std::size_t i = 0; i < m; ++i) {
    const double r = y[i] - model.alpha * x1[i] - model.beta * x2[i];
    ss.Add(r * r);
  }
  model.residual_norm = std::sqrt(ss.Value());
  if (m > 2) {
    // Covariance sigma^2 (R^T R)^-1 with R the 2x2 triangular factor.
    const double sigma2 = ss.Value() / static_cast<double>(m - 2);
    const double inv11 = 1.0 / norm1;
    const double inv12 = -r12 / (norm1 * r22);
    const double inv22 = 1.0 / r22;
    model.alpha_stderr = std::sqrt(sigma2 * (inv11 * inv11 + inv12 * inv12));
    model.beta_stderr = std::sqrt(sigma2) * inv22;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Path-level estimate from per-size statistics.

enum class EstimateMethod {
  kAuto,        // two-point with exactly two sizes, regression beyond
  kTwoPoint,    // smallest and largest size only
  kRegression,  // affine fit over all sizes
};

struct EstimateOptions {
  EstimateMethod method = EstimateMethod::kAuto;
  bool use_mean = true;  // produce available bandwidth (and mean-line intercept)
  bool use_min = true;   // produce capacity and zero-size delay
};

// Slack for the soft check available bandwidth <= capacity.
inline constexpr double kCapacitySlack = 0.05;

struct PathEstimate {
  std::optional<BitsPerSecond> b_av;
  std::optional<BitsPerSecond> capacity;
  std::optional<Seconds> d_min;
  std::optional<Seconds> intercept_a;
  EstimateMethod method = EstimateMethod::kTwoPoint;  // the one actually used
  Bytes small_size = 0;
  Bytes large_size = 0;
  std::optional<AffineFit> mean_fit;
  std::optional<AffineFit> min_fit;
  Warnings warnings;
};

inline std::string_view EstimateMethodName(EstimateMethod m) {
  switch (m) {
    case EstimateMethod::kAuto: return "auto";
    case EstimateMethod::kTwoPoint: return "two_point";
    case EstimateMethod::kRegression: return "regression";
  }
  return "auto";
}

// Mean delays give the available bandwidth, minimum delays give capacity and
// the zero-size delay. A field that cannot be computed is left empty and a
// warning says why; nothing is clamped or invented.
inline PathEstimate EstimatePath(std::span<const SizeDelayStats> stats,
                                 const EstimateOptions& options = {}) {
  std::vector<SizeDelayStats> usable;
  for (const auto& s : stats) {
    if (s.count >= 1) usable.push_back(s);
  }
  std::sort(usable.begin(), usable.end(),
            [](const auto& a, const auto& b) { return a.size < b.size; });
  for (std::size_t i = 1; i < usable.size(); ++i) {
    if (usable[i].size == usable[i - 1].size) {
      throw Error(ErrorKind::kInvalidArgument,
                  "duplicate stats for size " + std::to_string(usable[i].size));
    }
  }
  if (usable.size() < 2) {
    throw Error(ErrorKind::kInsufficientData,
                "need at least 2 packet sizes with samples, have " + std::to_string(usable.size()));
  }

  PathEstimate est;
  est.small_size = usable.front().size;
  est.large_size = usable.back().size;
  est.method = options.method;
  if (est.method == EstimateMethod::kAuto) {
    est.method = usable.size() > 2 ? EstimateMethod::kRegression : EstimateMethod::kTwoPoint;
  }

  auto attempt = [&est](const char* field, auto&& compute) -> std::optional<double> {
    try {
      return compute();
    } catch (const Error& e) {
      est.warnings.push_back(std::string(field) + " unavailable: " + e.what());
      return std::nullopt;
    }
  };
  auto positive = [&est](const char* field, std::optional<double> v) -> std::optional<double> {
    if (v && !(*v > 0.0)) {
      est.warnings.push_back(std::string(field) + " unavailable: non-physical value " +
                             FormatDouble(*v) + " (noise-dominated input)");
      return std::nullopt;
    }
    return v;
  };

  const auto& lo = usable.front();
  const auto& hi = usable.back();
  if (est.method == EstimateMethod::kTwoPoint) {
    if (options.use_mean) {
      est.b_av = attempt("b_av", [&] {
        return AvailableBandwidthTwoPoint(lo.size, lo.d_mean, hi.size, hi.d_mean);
      });
    }
    if (options.use_min) {
      est.capacity = attempt("capacity", [&] {
        return CapacityTwoPoint(lo.size, lo.d_min, hi.size, hi.d_min);
      });
      est.d_min = positive("d_min", attempt("d_min", [&] {
                             return DminTwoPoint(lo.size, lo.d_min, hi.size, hi.d_min);
                           }));
      est.intercept_a = est.d_min;
    }
  } else {
    if (options.use_mean) {
      est.mean_fit = FitAffine(std::span<const SizeDelayStats>(usable), DelayStatistic::kMean);
      est.b_av = est.mean_fit->Rate();
      if (!est.b_av) est.warnings.push_back("b_av unavailable: mean-delay slope is not positive");
      est.intercept_a = positive("intercept_a", est.mean_fit->intercept);
    }
    if (options.use_min) {
      est.min_fit = FitAffine(std::span<const SizeDelayStats>(usable), DelayStatistic::kMin);
      est.capacity = est.min_fit->Rate();
      if (!est.capacity) est.warnings.push_back("capacity unavailable: min-delay slope is not positive");
      est.d_min = positive("d_min", est.min_fit->intercept);
    }
  }

  if (est.b_av && est.capacity && *est.b_av > *est.capacity * (1.0 + kCapacitySlack)) {
    est.warnings.push_back("available bandwidth " + FormatDouble(*est.b_av) +
                           " bit/s exceeds capacity " + FormatDouble(*est.capacity) +
                           " bit/s by more than 5%");
  }
  return est;
}

}  // namespace avband
