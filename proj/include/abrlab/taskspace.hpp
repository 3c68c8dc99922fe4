#pragma once

#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "abrlab/config.hpp"
#include "abrlab/rng.hpp"
#include "abrlab/types.hpp"

namespace abrlab {

struct WindowStats {
  double mu = 0.0;
  double sigma = 0.0;   // population standard deviation
  double omega = 0.0;   // sum of |adjacent differences|
  double d_prop_ms = 0.0;
  int window_len = 0;
};

// Statistics of one full W_r window of bandwidth values.
inline WindowStats window_stats(std::span<const double> bw_mbps, double d_prop_ms) {
  WindowStats s;
  s.window_len = static_cast<int>(bw_mbps.size());
  if (bw_mbps.empty()) return s;
  double sum = 0.0;
  for (double v : bw_mbps) sum += v;
  s.mu = sum / static_cast<double>(bw_mbps.size());
  double ss = 0.0;
  for (double v : bw_mbps) ss += (v - s.mu) * (v - s.mu);
  s.sigma = std::sqrt(ss / static_cast<double>(bw_mbps.size()));
  for (std::size_t i = 1; i < bw_mbps.size(); ++i) s.omega += std::abs(bw_mbps[i] - bw_mbps[i - 1]);
  s.d_prop_ms = d_prop_ms;
  return s;
}

// Sliding window over the live estimate stream; emits nothing until the
// window is full (warm-up).
class WindowTracker {
 public:
  explicit WindowTracker(int window_len) : window_len_(window_len) {}

  void push(double b_hat_mbps, double d_prop_ms) {
    window_.push_back(b_hat_mbps);
    if (window_.size() > static_cast<std::size_t>(window_len_)) window_.pop_front();
    d_prop_ms_ = d_prop_ms;
  }

  bool warm() const { return window_.size() == static_cast<std::size_t>(window_len_); }

  std::optional<WindowStats> current() const {
    if (!warm()) return std::nullopt;
    std::vector<double> v(window_.begin(), window_.end());
    return window_stats(v, d_prop_ms_);
  }

  void reset() { window_.clear(); }

 private:
  int window_len_;
  std::deque<double> window_;
  double d_prop_ms_ = 0.0;
};

// Build a task from the current window, with ranges |now - then| floored
// at the minimum thresholds. Absent `then` means a zero measured delta.
inline NetworkState make_task(const WindowStats& now, const std::optional<WindowStats>& then,
                              const DeltaRange& floor = kDeltaFloor) {
  DeltaRange measured;
  if (then) {
    measured.mu = std::abs(now.mu - then->mu);
    measured.sigma = std::abs(now.sigma - then->sigma);
    measured.omega = std::abs(now.omega - then->omega);
    measured.d_prop = std::abs(now.d_prop_ms - then->d_prop_ms);
  }
  NetworkState task;
  task.mu = now.mu;
  task.sigma = now.sigma;
  task.omega = now.omega;
  task.d_prop_ms = now.d_prop_ms;
  task.delta = elementwise_max(measured, floor);
  return task;
}

// Meta-testing fires when any attribute drifts past half the covering
// range (strict).
inline bool should_activate(const WindowStats& current, const NetworkState& task) {
  return std::abs(current.mu - task.mu) > task.delta.mu / 2.0 ||
         std::abs(current.sigma - task.sigma) > task.delta.sigma / 2.0 ||
         std::abs(current.omega - task.omega) > task.delta.omega / 2.0 ||
         std::abs(current.d_prop_ms - task.d_prop_ms) > task.delta.d_prop / 2.0;
}

// Binned empirical density over (mu, sigma, omega, delta_mu, delta_sigma,
// delta_omega), with d_prop factored out as an independent 1-D histogram.
// Sampling draws a bin by mass, then a point uniformly within the bin.
class TaskDistribution {
 public:
  struct JointKey {
    int mu = 0, sigma = 0, omega = 0, d_mu = 0, d_sigma = 0, d_omega = 0;
    auto operator<=>(const JointKey&) const = default;
  };

  struct BinWidths {
    double mu = 0.1;
    double sigma = 0.05;
    double omega = 0.5;
    double d_mu = 0.1;     // floor / 2
    double d_sigma = 0.1;
    double d_omega = 1.0;
    double d_prop = 5.0;
  };

  BinWidths widths;
  DeltaRange floor = kDeltaFloor;
  std::map<JointKey, double> joint;   // normalized masses; ordered for determinism
  std::map<int, double> dprop;
  // Corpus statistics carried alongside the density.
  double dprop_sigma_ms = 0.0;
  double dprop_cap_ms = 0.0;
  double max_bw_mbps = 0.0;

  static int bin_of(double v, double width) {
    return static_cast<int>(std::floor(v / width + 1e-9));
  }

  void add_sample(const WindowStats& stats, const DeltaRange& measured_delta) {
    JointKey k;
    k.mu = bin_of(stats.mu, widths.mu);
    k.sigma = bin_of(stats.sigma, widths.sigma);
    k.omega = bin_of(stats.omega, widths.omega);
    k.d_mu = bin_of(measured_delta.mu, widths.d_mu);
    k.d_sigma = bin_of(measured_delta.sigma, widths.d_sigma);
    k.d_omega = bin_of(measured_delta.omega, widths.d_omega);
    joint[k] += 1.0;
    dprop[bin_of(stats.d_prop_ms, widths.d_prop)] += 1.0;
  }

  void normalize() {
    double jt = 0.0, dt = 0.0;
    for (const auto& [k, m] : joint) jt += m;
    for (const auto& [k, m] : dprop) dt += m;
    if (jt <= 0.0 || dt <= 0.0) throw DataError("task distribution: no samples");
    for (auto& [k, m] : joint) m /= jt;
    for (auto& [k, m] : dprop) m /= dt;
  }

  NetworkState sample(Rng& rng) const {
    const JointKey k = draw_joint(rng);
    auto in_bin = [&rng](int bin, double width) {
      return (static_cast<double>(bin) + rng.uniform()) * width;
    };
    NetworkState task;
    task.mu = in_bin(k.mu, widths.mu);
    task.sigma = in_bin(k.sigma, widths.sigma);
    task.omega = in_bin(k.omega, widths.omega);
    DeltaRange d;
    d.mu = in_bin(k.d_mu, widths.d_mu);
    d.sigma = in_bin(k.d_sigma, widths.d_sigma);
    d.omega = in_bin(k.d_omega, widths.d_omega);
    d.d_prop = 0.0;  // synthetic trajectories hold d_prop constant
    task.d_prop_ms = in_bin(draw_dprop(rng), widths.d_prop);
    task.delta = elementwise_max(d, floor);
    task.validate(floor);
    return task;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("distribution: cannot write '" + path + "'");
    out.precision(17);
    out << "abrlab-dist 1\n";
    out << "widths " << widths.mu << " " << widths.sigma << " " << widths.omega << " "
        << widths.d_mu << " " << widths.d_sigma << " " << widths.d_omega << " " << widths.d_prop
        << "\n";
    out << "floor " << floor.mu << " " << floor.sigma << " " << floor.omega << " " << floor.d_prop
        << "\n";
    out << "stats " << dprop_sigma_ms << " " << dprop_cap_ms << " " << max_bw_mbps << "\n";
    for (const auto& [k, m] : joint)
      out << "joint " << k.mu << " " << k.sigma << " " << k.omega << " " << k.d_mu << " "
          << k.d_sigma << " " << k.d_omega << " " << m << "\n";
    for (const auto& [k, m] : dprop) out << "dprop " << k << " " << m << "\n";
  }

  static TaskDistribution load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("distribution: cannot open '" + path + "'");
    TaskDistribution dist;
    std::string line;
    int lineno = 0;
    if (!std::getline(in, line) || line.rfind("abrlab-dist 1", 0) != 0)
      throw ParseError(path + ":1: not an abrlab-dist v1 file");
    ++lineno;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string tag;
      ss >> tag;
      bool ok = true;
      if (tag == "widths") {
        ss >> dist.widths.mu >> dist.widths.sigma >> dist.widths.omega >> dist.widths.d_mu >>
            dist.widths.d_sigma >> dist.widths.d_omega >> dist.widths.d_prop;
        ok = !ss.fail();
      } else if (tag == "floor") {
        ss >> dist.floor.mu >> dist.floor.sigma >> dist.floor.omega >> dist.floor.d_prop;
        ok = !ss.fail();
      } else if (tag == "stats") {
        ss >> dist.dprop_sigma_ms >> dist.dprop_cap_ms >> dist.max_bw_mbps;
        ok = !ss.fail();
      } else if (tag == "joint") {
        JointKey k;
        double m = 0.0;
        ss >> k.mu >> k.sigma >> k.omega >> k.d_mu >> k.d_sigma >> k.d_omega >> m;
        ok = !ss.fail();
        if (ok) dist.joint[k] += m;
      } else if (tag == "dprop") {
        int k = 0;
        double m = 0.0;
        ss >> k >> m;
        ok = !ss.fail();
        if (ok) dist.dprop[k] += m;
      } else {
        ok = false;
      }
      if (!ok) throw ParseError(path + ":" + std::to_string(lineno) + ": malformed line");
    }
    if (dist.joint.empty() || dist.dprop.empty())
      throw ParseError(path + ": distribution has no bins");
    return dist;
  }

 private:
  JointKey draw_joint(Rng& rng) const {
    double u = rng.uniform();
    for (const auto& [k, m] : joint) {
      u -= m;
      if (u < 0.0) return k;
    }
    return joint.rbegin()->first;
  }

  int draw_dprop(Rng& rng) const {
    double u = rng.uniform();
    for (const auto& [k, m] : dprop) {
      u -= m;
      if (u < 0.0) return k;
    }
    return dprop.rbegin()->first;
  }
};

// Slide W_r over every corpus trace at 1 s steps; each position where a
// window state_interval_s earlier also exists contributes one sample.
// The window's d_prop is the minimum prop delay within it (running-min
// semantics, matching the online estimator).
inline TaskDistribution fit_distribution(std::span<const NetTrace> corpus, const LabConfig& cfg) {
  if (corpus.empty()) throw DataError("fit_distribution: empty corpus");
  TaskDistribution dist;
  dist.widths.mu = cfg.bin_mu;
  dist.widths.sigma = cfg.bin_sigma;
  dist.widths.omega = cfg.bin_omega;
  dist.widths.d_mu = cfg.delta_floor.mu / 2.0;
  dist.widths.d_sigma = cfg.delta_floor.sigma / 2.0;
  dist.widths.d_omega = cfg.delta_floor.omega / 2.0;
  dist.widths.d_prop = cfg.bin_dprop_ms;
  dist.floor = cfg.delta_floor;

  const int w = cfg.window_len();
  const int lag = static_cast<int>(std::lround(cfg.state_interval_s));
  std::vector<double> window_mins;
  bool any = false;
  for (const auto& trace : corpus) {
    trace.validate();
    const int n = static_cast<int>(trace.samples.size());
    std::vector<WindowStats> per_t(n);
    std::vector<bool> valid(n, false);
    for (int t = w - 1; t < n; ++t) {
      std::vector<double> bw(static_cast<std::size_t>(w));
      double dmin = trace.samples[static_cast<std::size_t>(t - w + 1)].prop_delay_ms;
      for (int j = 0; j < w; ++j) {
        const auto& s = trace.samples[static_cast<std::size_t>(t - w + 1 + j)];
        bw[static_cast<std::size_t>(j)] = s.bandwidth_mbps;
        dmin = std::min(dmin, s.prop_delay_ms);
      }
      per_t[static_cast<std::size_t>(t)] = window_stats(bw, dmin);
      valid[static_cast<std::size_t>(t)] = true;
      window_mins.push_back(dmin);
    }
    dist.max_bw_mbps = std::max(dist.max_bw_mbps, trace.max_bandwidth());
    for (int t = w - 1 + lag; t < n; ++t) {
      if (!valid[static_cast<std::size_t>(t)] || !valid[static_cast<std::size_t>(t - lag)]) continue;
      const auto& now = per_t[static_cast<std::size_t>(t)];
      const auto& then = per_t[static_cast<std::size_t>(t - lag)];
      DeltaRange d;
      d.mu = std::abs(now.mu - then.mu);
      d.sigma = std::abs(now.sigma - then.sigma);
      d.omega = std::abs(now.omega - then.omega);
      d.d_prop = std::abs(now.d_prop_ms - then.d_prop_ms);
      dist.add_sample(now, d);
      any = true;
    }
  }
  if (!any)
    throw DataError("fit_distribution: corpus too small for any full window (need >= " +
                    std::to_string(w + lag) + " s per trace)");
  dist.normalize();

  // Corpus delay statistics for the estimator: spread and upper cap of the
  // per-window running-min values.
  double mean = 0.0;
  for (double v : window_mins) mean += v;
  mean /= static_cast<double>(window_mins.size());
  double ss = 0.0;
  for (double v : window_mins) ss += (v - mean) * (v - mean);
  dist.dprop_sigma_ms = std::sqrt(ss / static_cast<double>(window_mins.size()));
  std::sort(window_mins.begin(), window_mins.end());
  const auto p99 = static_cast<std::size_t>(0.99 * static_cast<double>(window_mins.size() - 1));
  dist.dprop_cap_ms = window_mins[p99];
  return dist;
}

}  // namespace abrlab
