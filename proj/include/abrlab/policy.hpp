#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <span>
#include <vector>

#include "abrlab/nnet.hpp"
#include "abrlab/types.hpp"

namespace abrlab {

// State featurization, the exponential action-to-bitrate map, the QoE
// reward, and the discounted lookahead return.

inline constexpr int kChannels = 5;       // throughput, target, loss, delay, jitter
inline constexpr int kHistorySteps = 30;  // past 3 s at 0.1 s ticks
inline constexpr int kStateDim = kChannels * kHistorySteps;

// One controller tick of raw (unnormalized) observations.
struct TickObservation {
  double throughput_mbps = 0.0;
  double target_mbps = 0.0;
  double loss_ratio = 0.0;
  double delay_ms = 0.0;
  double jitter_ms = 0.0;
};

struct FeatureNorms {
  double rate_mbps = 2.5;  // ladder max
  double delay_ms = 1000.0;
};

// Flatten the last 3 s of history, channel-major, oldest first; short
// histories are zero-padded at the old end.
inline std::vector<double> featurize(std::span<const TickObservation> history,
                                     const FeatureNorms& norms = {}) {
  std::vector<double> s(static_cast<std::size_t>(kStateDim), 0.0);
  const std::size_t n = std::min<std::size_t>(history.size(), kHistorySteps);
  const std::size_t base = history.size() - n;  // most recent n entries
  for (std::size_t k = 0; k < n; ++k) {
    const auto& o = history[base + k];
    const std::size_t slot = static_cast<std::size_t>(kHistorySteps) - n + k;
    s[0 * kHistorySteps + slot] = o.throughput_mbps / norms.rate_mbps;
    s[1 * kHistorySteps + slot] = o.target_mbps / norms.rate_mbps;
    s[2 * kHistorySteps + slot] = o.loss_ratio;
    s[3 * kHistorySteps + slot] = o.delay_ms / norms.delay_ms;
    s[4 * kHistorySteps + slot] = o.jitter_ms / norms.delay_ms;
  }
  return s;
}

// b_t = b_prev * e^a, clamped to the ladder range.
inline double apply_action(double b_prev_mbps, double action, double lo_mbps = 0.1,
                           double hi_mbps = 2.5) {
  return std::clamp(b_prev_mbps * std::exp(action), lo_mbps, hi_mbps);
}

struct RewardWeights {
  double throughput = 50.0;
  double loss = 50.0;
  double delay = 200.0;
  double smooth = 20.0;
};

// QoE reward of one tick. Delay arrives in ms and is weighted in seconds;
// with the 200 weight that makes 5 ms of delay trade against 0.02 Mbps of
// throughput, keeping the terms commensurate.
inline double reward(double throughput_mbps, double loss_ratio, double delay_ms, double b_t_mbps,
                     double b_prev_mbps, const RewardWeights& w = {}) {
  return w.throughput * throughput_mbps - w.loss * loss_ratio - w.delay * (delay_ms / 1000.0) -
         w.smooth * std::abs(b_t_mbps - b_prev_mbps);
}

// Discounted sum of the next `horizon` rewards starting at t, truncated at
// the end of the episode.
inline double cumulative_reward(std::span<const double> rewards, std::size_t t, double gamma,
                                int horizon = 30) {
  double r = 0.0;
  double g = 1.0;
  for (int k = 0; k < horizon && t + static_cast<std::size_t>(k) < rewards.size(); ++k) {
    r += g * rewards[t + static_cast<std::size_t>(k)];
    g *= gamma;
  }
  return r;
}

inline std::vector<double> policy_probs(const MlpParams& p, std::span<const double> state) {
  return mlp_forward(p, state).probs;
}

inline std::size_t argmax_action(std::span<const double> probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  return best;
}

}  // namespace abrlab
