#pragma once

#include <algorithm>
#include <cmath>

#include "abrlab/types.hpp"

namespace abrlab {

// Rule-based comparator in the AIMD spirit: loss thresholds drive the
// multiplicative rate moves, and an exponentially smoothed delay gradient
// acts as the overuse detector. Constants follow common descriptions of
// this controller family; this exists for relative comparison, not for
// fidelity to any production stack.

struct GccConfig {
  double increase = 1.05;
  double decrease = 0.85;
  double loss_high = 0.10;
  double loss_low = 0.02;
  double overuse_grad_ms_per_s = 2.0;  // smoothed delay gradient threshold
  double grad_smoothing = 0.3;         // EWMA weight of the newest gradient
  double update_interval_s = 1.0;
  double backoff_hold_s = 1.0;
  double min_rate = 0.1;
  double max_rate = 2.5;
};

class GccController {
 public:
  explicit GccController(double init_rate_mbps, GccConfig cfg = {})
      : cfg_(cfg), rate_(std::clamp(init_rate_mbps, cfg.min_rate, cfg.max_rate)) {}

  // Consume one feedback sample (any cadence); the rules fire once per
  // update interval on the aggregated signal.
  double step(const LinkFeedback& fb) {
    acc_loss_ += fb.loss_ratio;
    acc_delay_ += fb.delay_ms;
    acc_n_ += 1;
    if (last_update_t_ < 0.0) last_update_t_ = fb.t_s;
    const double elapsed = fb.t_s - last_update_t_;
    if (elapsed + 1e-9 < cfg_.update_interval_s) return rate_;

    const double loss = acc_loss_ / static_cast<double>(acc_n_);
    const double delay = acc_delay_ / static_cast<double>(acc_n_);
    acc_loss_ = acc_delay_ = 0.0;
    acc_n_ = 0;
    last_update_t_ = fb.t_s;

    bool overuse = false;
    if (have_delay_) {
      const double grad = (delay - prev_delay_ms_) / elapsed;
      smoothed_grad_ =
          cfg_.grad_smoothing * grad + (1.0 - cfg_.grad_smoothing) * smoothed_grad_;
      overuse = smoothed_grad_ > cfg_.overuse_grad_ms_per_s;
    }
    prev_delay_ms_ = delay;
    have_delay_ = true;

    if (fb.t_s < backoff_until_) return rate_;

    if (loss > cfg_.loss_high || overuse) {
      rate_ *= cfg_.decrease;
      backoff_until_ = fb.t_s + cfg_.backoff_hold_s;
    } else if (loss < cfg_.loss_low) {
      rate_ *= cfg_.increase;
    }
    rate_ = std::clamp(rate_, cfg_.min_rate, cfg_.max_rate);
    return rate_;
  }

  double rate() const { return rate_; }

 private:
  GccConfig cfg_;
  double rate_;
  double last_update_t_ = -1.0;
  double backoff_until_ = -1.0;
  double acc_loss_ = 0.0;
  double acc_delay_ = 0.0;
  int acc_n_ = 0;
  double prev_delay_ms_ = 0.0;
  bool have_delay_ = false;
  double smoothed_grad_ = 0.0;
};

}  // namespace abrlab
