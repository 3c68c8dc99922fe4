#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace abrlab {

// Units convention, used everywhere above the simulator internals:
// bandwidth / bitrate / throughput in Mbps, delay in ms, time in seconds.
// The only place bytes and packets appear is inside simnet. The reward
// converts delay to seconds (see policy.hpp).

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BandwidthSample {
  double t_s = 0.0;
  double bandwidth_mbps = 0.0;
  double prop_delay_ms = 0.0;

  friend bool operator==(const BandwidthSample&, const BandwidthSample&) = default;
};

// Ground-truth link trace: one sample per second, strictly increasing t.
struct NetTrace {
  std::string id;
  std::vector<BandwidthSample> samples;

  void validate() const {
    if (samples.empty()) throw DataError("trace '" + id + "': empty");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      if (s.bandwidth_mbps < 0.0)
        throw DataError("trace '" + id + "': negative bandwidth at sample " + std::to_string(i));
      if (s.prop_delay_ms < 0.0)
        throw DataError("trace '" + id + "': negative prop delay at sample " + std::to_string(i));
      if (i > 0 && std::abs(samples[i].t_s - samples[i - 1].t_s - 1.0) > 1e-9)
        throw DataError("trace '" + id + "': non-uniform sample spacing at sample " +
                        std::to_string(i));
    }
  }

  double duration_s() const { return static_cast<double>(samples.size()); }

  // Step-hold lookup: the value of the sample covering time t.
  const BandwidthSample& at_time(double t_s) const {
    const double rel = t_s - samples.front().t_s;
    const auto idx = static_cast<std::size_t>(std::clamp(
        std::floor(rel), 0.0, static_cast<double>(samples.size() - 1)));
    return samples[idx];
  }

  double bandwidth_at(double t_s) const { return at_time(t_s).bandwidth_mbps; }
  double prop_delay_at(double t_s) const { return at_time(t_s).prop_delay_ms; }

  double max_bandwidth() const {
    double m = 0.0;
    for (const auto& s : samples) m = std::max(m, s.bandwidth_mbps);
    return m;
  }

  friend bool operator==(const NetTrace&, const NetTrace&) = default;
};

// RTCP-style per-interval signal. `delay_ms` is the RTT proxy
// (2x mean one-way delay, see simnet).
struct LinkFeedback {
  double t_s = 0.0;
  double throughput_mbps = 0.0;
  double loss_ratio = 0.0;
  double delay_ms = 0.0;
  double jitter_ms = 0.0;

  void validate() const {
    if (loss_ratio < 0.0 || loss_ratio > 1.0) throw DataError("feedback: loss ratio out of [0,1]");
    if (throughput_mbps < 0.0) throw DataError("feedback: negative throughput");
    if (delay_ms < 0.0) throw DataError("feedback: negative delay");
  }
};

// Covering ranges of a network state; mu/sigma/omega in Mbps, d_prop in ms.
struct DeltaRange {
  double mu = 0.0;
  double sigma = 0.0;
  double omega = 0.0;
  double d_prop = 0.0;

  friend bool operator==(const DeltaRange&, const DeltaRange&) = default;
};

// Minimum range thresholds: 0.2 / 0.2 / 2 Mbps, 3 ms.
inline constexpr DeltaRange kDeltaFloor{0.2, 0.2, 2.0, 3.0};

inline DeltaRange elementwise_max(const DeltaRange& a, const DeltaRange& b) {
  return {std::max(a.mu, b.mu), std::max(a.sigma, b.sigma), std::max(a.omega, b.omega),
          std::max(a.d_prop, b.d_prop)};
}

// The meta-learning task key: a cluster center over windowed bandwidth
// statistics plus propagation delay, with covering ranges.
struct NetworkState {
  double mu = 0.0;        // Mbps
  double sigma = 0.0;     // Mbps
  double omega = 0.0;     // Mbps, windowed sum of |adjacent differences|
  double d_prop_ms = 0.0;
  DeltaRange delta;

  void validate(const DeltaRange& floor = kDeltaFloor) const {
    if (sigma < 0.0) throw DataError("network state: sigma < 0");
    if (omega < 0.0) throw DataError("network state: omega < 0");
    if (delta.mu < floor.mu || delta.sigma < floor.sigma || delta.omega < floor.omega ||
        delta.d_prop < floor.d_prop)
      throw DataError("network state: delta below minimum thresholds");
  }

  friend bool operator==(const NetworkState&, const NetworkState&) = default;
};

}  // namespace abrlab
