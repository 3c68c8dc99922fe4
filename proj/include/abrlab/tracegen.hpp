#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "abrlab/rng.hpp"
#include "abrlab/taskspace.hpp"
#include "abrlab/types.hpp"

namespace abrlab {

class TrajectoryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TraceGenConfig {
  double max_bw_mbps = 2.5;
  int window_len = 8;
  double center_stddev_frac = 0.5;  // Gaussian stddev as a fraction of delta
  int perm_budget = 200;            // orderings tried per sample pool
  int pool_budget = 50;             // pools tried per trajectory
};

struct CenterSample {
  double mu = 0.0;
  double sigma = 0.0;
  double d_prop_ms = 0.0;
};

namespace detail {

// Gaussian truncated to [center - delta, center + delta] (intersected with
// v >= 0), peaked at the center.
inline double truncated_gaussian(Rng& rng, double center, double delta, double stddev_frac) {
  if (delta <= 0.0) return std::max(center, 0.0);
  const double lo = std::max(center - delta, 0.0);
  const double hi = center + delta;
  const double sd = stddev_frac * delta;
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.gaussian(center, sd);
    if (v >= lo && v <= hi) return v;
  }
  return std::clamp(center, lo, hi);
}

}  // namespace detail

// Draw the trajectory's own (mu, sigma, d_prop) from Gaussians centered at
// the task center, truncated to the covering ranges.
inline CenterSample sample_center(const NetworkState& task, Rng& rng,
                                  double stddev_frac = 0.5) {
  CenterSample c;
  c.mu = detail::truncated_gaussian(rng, task.mu, task.delta.mu, stddev_frac);
  c.sigma = std::max(detail::truncated_gaussian(rng, task.sigma, task.delta.sigma, stddev_frac), 0.0);
  c.d_prop_ms = detail::truncated_gaussian(rng, task.d_prop_ms, task.delta.d_prop, stddev_frac);
  return c;
}

// Beta(a, b) on [0, max] matched to the requested mean and variance.
// Infeasible variance (sigma^2 >= mu (max - mu) after rescaling) is clamped
// to 0.99 of the feasible bound.
struct BetaFit {
  double a = 1.0;
  double b = 1.0;
  bool clamped = false;
};

inline BetaFit beta_moment_match(double mu, double sigma, double max_bw) {
  BetaFit fit;
  const double m = mu / max_bw;
  double v = (sigma / max_bw) * (sigma / max_bw);
  const double v_max = m * (1.0 - m);
  if (v >= v_max) {
    v = 0.99 * 0.99 * v_max;
    fit.clamped = true;
  }
  const double s = v_max / v - 1.0;
  fit.a = m * s;
  fit.b = (1.0 - m) * s;
  return fit;
}

inline bool window_box_ok(std::span<const double> bw, const NetworkState& task, int window_len) {
  const std::size_t w = static_cast<std::size_t>(window_len);
  if (bw.size() < w) return false;
  for (std::size_t start = 0; start + w <= bw.size(); ++start) {
    const WindowStats ws = window_stats(bw.subspan(start, w), task.d_prop_ms);
    if (std::abs(ws.mu - task.mu) > task.delta.mu) return false;
    if (std::abs(ws.sigma - task.sigma) > task.delta.sigma) return false;
    if (std::abs(ws.omega - task.omega) > task.delta.omega) return false;
  }
  return true;
}

// Synthesize a 1 s granularity trajectory whose every sliding window stays
// inside the task's covering box. Samples are drawn i.i.d. (Gaussian when
// the 3-sigma interval fits in [0, max], beta otherwise) and rearranged by
// random permutation until an ordering with compatible window stats is
// found; the pool is redrawn when the permutation budget runs out.
inline NetTrace generate_trajectory(const NetworkState& task, int length_s, double max_bw,
                                    Rng& rng, const TraceGenConfig& cfg = {},
                                    const std::string& id = "synthetic") {
  if (length_s < cfg.window_len)
    throw TrajectoryError("generate_trajectory: length below the stats window");
  if (!(max_bw > 0.0)) throw TrajectoryError("generate_trajectory: max_bw must be positive");

  for (int pool_try = 0; pool_try < cfg.pool_budget; ++pool_try) {
    const CenterSample c = sample_center(task, rng, cfg.center_stddev_frac);
    std::vector<double> pool(static_cast<std::size_t>(length_s));
    if (c.sigma <= 0.0) {
      std::fill(pool.begin(), pool.end(), std::clamp(c.mu, 0.0, max_bw));
    } else if (c.mu - 3.0 * c.sigma >= 0.0 && c.mu + 3.0 * c.sigma <= max_bw) {
      for (auto& v : pool) v = std::clamp(rng.gaussian(c.mu, c.sigma), 0.0, max_bw);
    } else if (c.mu <= 0.0) {
      std::fill(pool.begin(), pool.end(), 0.0);
    } else if (c.mu >= max_bw) {
      std::fill(pool.begin(), pool.end(), max_bw);
    } else {
      const BetaFit fit = beta_moment_match(c.mu, c.sigma, max_bw);
      if (fit.clamped)
        std::fprintf(stderr,
                     "tracegen: sigma %.4f infeasible for mu %.4f on [0, %.2f]; clamped\n",
                     c.sigma, c.mu, max_bw);
      for (auto& v : pool) v = max_bw * rng.beta(fit.a, fit.b);
    }

    for (int perm = 0; perm < cfg.perm_budget; ++perm) {
      rng.shuffle(pool);
      if (!window_box_ok(pool, task, cfg.window_len)) continue;
      NetTrace trace;
      trace.id = id;
      trace.samples.reserve(pool.size());
      for (std::size_t t = 0; t < pool.size(); ++t)
        trace.samples.push_back({static_cast<double>(t), pool[t], c.d_prop_ms});
      trace.validate();
      return trace;
    }
  }
  throw TrajectoryError("generate_trajectory: rejection budget exhausted for task mu=" +
                        std::to_string(task.mu) + " sigma=" + std::to_string(task.sigma) +
                        " omega=" + std::to_string(task.omega));
}

}  // namespace abrlab
