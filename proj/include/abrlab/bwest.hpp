#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include "abrlab/types.hpp"

namespace abrlab {

// Bandwidth estimation and filtering: full-pipe detection from loss and
// queuing delay, additive + multiplicative probing while the pipe is
// unfilled, and an offline retroactive adjustment pass.
//
// All delays here are one-way ms; callers feeding RTT-style measurements
// halve them first.

// Full pipe when loss exceeds 5% or delay exceeds the propagation floor
// plus its tolerated jitter. Strict inequalities: boundary equality is
// not full pipe.
inline bool detect_full_pipe(double loss_ratio, double delay_ms, double dprop_ms,
                             double dprop_sigma_ms) {
  return loss_ratio > 0.05 || delay_ms > dprop_ms + dprop_sigma_ms;
}

// One multiplicative probe step: prev * (e^(-prev - 1.3) + 1).
inline double probe_step(double prev_mbps) {
  return prev_mbps * (std::exp(-prev_mbps - 1.3) + 1.0);
}

// Running min of observed delay over a W_d window, capped from above to
// avoid overestimating the floor at session start.
class PropDelayTracker {
 public:
  PropDelayTracker(std::size_t window_len, double cap_ms)
      : window_len_(std::max<std::size_t>(window_len, 1)), cap_ms_(cap_ms) {}

  double update(double delay_ms) {
    window_.push_back(delay_ms);
    if (window_.size() > window_len_) window_.pop_front();
    return current();
  }

  double current() const {
    double m = cap_ms_;
    for (double d : window_) m = std::min(m, d);
    return m;
  }

  bool empty() const { return window_.empty(); }

 private:
  std::size_t window_len_;
  double cap_ms_;
  std::deque<double> window_;
};

struct BandwidthEstimate {
  double t_s = 0.0;
  double b_hat_mbps = 0.0;
  bool full_pipe = false;
};

// One aligned row of the estimation log; retro_adjust consumes these.
struct EstimateStep {
  double t_s = 0.0;
  double b_hat = 0.0;   // Mbps
  double eta = 0.0;     // measured throughput, Mbps
  double pb1 = 0.0;     // multiplicative probe value
  double pb2 = 0.0;     // additive probe value (= current delta_mu)
  double dprop_ms = 0.0;
  bool full_pipe = false;

  BandwidthEstimate estimate() const { return {t_s, b_hat, full_pipe}; }
};

struct EstimatorConfig {
  std::size_t dprop_window_len = 10;  // W_d in feedback intervals
  double dprop_sigma_ms = 5.0;
  double dprop_cap_ms = 200.0;
};

// Stateful estimator fed by 1 s feedback aggregates.
class BandwidthEstimator {
 public:
  explicit BandwidthEstimator(const EstimatorConfig& cfg)
      : cfg_(cfg), dprop_(cfg.dprop_window_len, cfg.dprop_cap_ms) {}

  // delta_mu is the current task's covering range for mu; before any task
  // exists it defaults to the 0.2 Mbps floor. floor_delay_ms is the delay
  // statistic fed to the propagation-floor running min; it defaults to the
  // feedback delay, but a caller that can aggregate more tightly (e.g. the
  // per-interval minimum) may pass that instead.
  EstimateStep update(const LinkFeedback& fb, double delta_mu = kDeltaFloor.mu,
                      double floor_delay_ms = -1.0) {
    EstimateStep step;
    step.t_s = fb.t_s;
    step.eta = fb.throughput_mbps;
    step.pb2 = delta_mu;
    step.dprop_ms = dprop_.update(floor_delay_ms >= 0.0 ? floor_delay_ms : fb.delay_ms);
    step.full_pipe =
        detect_full_pipe(fb.loss_ratio, fb.delay_ms, step.dprop_ms, cfg_.dprop_sigma_ms);
    if (step.full_pipe) {
      step.b_hat = fb.throughput_mbps;
      pb1_ = 0.0;
    } else {
      pb1_ = last_full_pipe_ ? probe_step(fb.throughput_mbps) : probe_step(pb1_);
      step.pb1 = pb1_;
      step.b_hat = std::max(fb.throughput_mbps + step.pb2, pb1_);
    }
    last_full_pipe_ = step.full_pipe;
    return step;
  }

  double prop_delay_ms() const { return dprop_.current(); }
  bool last_full_pipe() const { return last_full_pipe_; }
  double pb1() const { return pb1_; }

 private:
  EstimatorConfig cfg_;
  PropDelayTracker dprop_;
  bool last_full_pipe_ = true;  // session start counts as a probe restart
  double pb1_ = 0.0;
};

// Offline pass: once a later full-pipe estimate is known, tighten the
// unfilled-run estimates that preceded it. For each unfilled run, pick
// t' = argmax pb1 subject to pb1 < B_later; rows after t' become
// max(pb1[t'] - eta[t'], pb2[t]) + eta[t]. Runs with no later full-pipe
// estimate, or where no pb1 qualifies, are left unchanged.
inline std::vector<EstimateStep> retro_adjust(std::vector<EstimateStep> steps) {
  const std::size_t n = steps.size();
  std::size_t i = 0;
  while (i < n) {
    if (steps[i].full_pipe) {
      ++i;
      continue;
    }
    std::size_t end = i;  // inclusive end of the unfilled run
    while (end + 1 < n && !steps[end + 1].full_pipe) ++end;
    if (end + 1 < n) {
      const double b_later = steps[end + 1].b_hat;
      bool found = false;
      std::size_t t_prime = 0;
      for (std::size_t k = i; k <= end; ++k) {
        if (steps[k].pb1 < b_later && (!found || steps[k].pb1 > steps[t_prime].pb1)) {
          found = true;
          t_prime = k;
        }
      }
      if (found) {
        const double lift = steps[t_prime].pb1 - steps[t_prime].eta;
        for (std::size_t k = t_prime + 1; k <= end; ++k)
          steps[k].b_hat = std::max(lift, steps[k].pb2) + steps[k].eta;
      }
    }
    i = end + 1;
  }
  return steps;
}

}  // namespace abrlab
