#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "abrlab/types.hpp"

namespace abrlab {

// Every knob in one flat struct. Values are read from a `key = value`
// config file and overridable one by one from the CLI.
struct LabConfig {
  // Windowing
  double window_s = 8.0;          // W_r, sliding stats window
  double state_interval_s = 4.0;  // interval between compared windows when fitting deltas
  double tick_s = 0.1;            // decision / feature granularity
  double dprop_window_s = 10.0;   // W_d, running-min window for prop delay (our default; not pinned upstream)
  double feedback_s = 1.0;        // cadence of estimator-facing feedback aggregates

  // Task ranges
  DeltaRange delta_floor = kDeltaFloor;

  // Estimator corpus statistics (recomputed by `fit-dist`, then carried in config)
  double dprop_sigma_ms = 5.0;
  double dprop_cap_ms = 200.0;

  // Bitrate ladder and action grid
  double ladder_min_mbps = 0.1;
  double ladder_max_mbps = 2.5;
  double ladder_step_mbps = 0.1;
  double action_max = 2.0;
  double action_step = 0.2;
  double init_bitrate_mbps = 0.5;

  // Reward weights; delay enters in seconds
  double reward_throughput_w = 50.0;
  double reward_loss_w = 50.0;
  double reward_delay_w = 200.0;
  double reward_smooth_w = 20.0;

  // Policy network
  int hidden1 = 128;
  int hidden2 = 64;
  int hidden3 = 32;
  std::string activation = "tanh";  // or "relu"
  double discount = 0.99;
  int reward_horizon_steps = 30;  // 3 s lookahead at tick_s

  // Training loop sizes
  int inner_steps = 3;
  int episodes_k = 8;
  int tasks_m = 5;
  double inner_lr = 1e-3;   // alpha
  double outer_lr = 3e-4;   // beta
  double clip_eps = 0.2;    // epsilon
  double episode_s = 60.0;
  int rounds = 200;
  int checkpoint_every = 10;

  // Distribution binning
  double bin_mu = 0.1;
  double bin_sigma = 0.05;
  double bin_omega = 0.5;
  double bin_dprop_ms = 5.0;
  // Delta bins default to half the corresponding floor (see taskspace).

  // Trajectory generation
  double max_bw_mbps = 2.5;       // overridden by corpus max when fitting
  double center_stddev_frac = 0.5;  // Gaussian stddev = frac * delta when sampling centers
  int reject_perms = 200;
  int reject_pools = 50;

  // Simulator
  int fps = 30;
  int mtu_bytes = 1200;
  double queue_ms = 250.0;
  double late_frame_ms = 400.0;
  double frame_jitter = 0.15;
  double random_loss = 0.0;
  double pace_multiplier = 1.0;

  // Online runtime
  double adapt_budget_s = 2.0;
  std::size_t cache_capacity = 64;
  double cache_q_mu = 0.1;
  double cache_q_sigma = 0.1;
  double cache_q_omega = 1.0;
  double cache_q_dprop_ms = 5.0;

  std::uint64_t seed = 1;

  std::vector<double> ladder() const {
    std::vector<double> out;
    for (double b = ladder_min_mbps; b <= ladder_max_mbps + 1e-9; b += ladder_step_mbps)
      out.push_back(std::round(b * 1e6) / 1e6);
    return out;
  }

  std::vector<double> action_grid() const {
    std::vector<double> out;
    for (double a = -action_max; a <= action_max + 1e-9; a += action_step)
      out.push_back(std::round(a * 1e6) / 1e6);
    return out;
  }

  int window_len() const { return static_cast<int>(std::lround(window_s)); }
  int episode_steps() const { return static_cast<int>(std::lround(episode_s / tick_s)); }

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0)) throw DataError(std::string("config: ") + name + " must be positive");
    };
    positive(window_s, "window_s");
    positive(state_interval_s, "state_interval_s");
    positive(tick_s, "tick_s");
    positive(dprop_window_s, "dprop_window_s");
    positive(ladder_step_mbps, "ladder_step_mbps");
    positive(action_step, "action_step");
    positive(episode_s, "episode_s");
    positive(inner_lr, "inner_lr");
    positive(outer_lr, "outer_lr");
    positive(clip_eps, "clip_eps");
    if (ladder_min_mbps <= 0.0 || ladder_max_mbps < ladder_min_mbps)
      throw DataError("config: bad ladder bounds");
    if (activation != "tanh" && activation != "relu")
      throw DataError("config: activation must be tanh or relu");
    if (inner_steps < 0 || episodes_k < 1 || tasks_m < 1)
      throw DataError("config: bad loop sizes");
  }

  void set(const std::string& key, const std::string& value);
  static LabConfig from_file(const std::string& path);
  std::string serialize() const;
  std::uint64_t hash() const;
};

namespace detail {
inline double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ParseError("config: bad numeric value '" + v + "' for key '" + key + "'");
  }
}
}  // namespace detail

inline void LabConfig::set(const std::string& key, const std::string& value) {
  auto num = [&] { return detail::parse_double(value, key); };
  if (key == "window_s") window_s = num();
  else if (key == "state_interval_s") state_interval_s = num();
  else if (key == "tick_s") tick_s = num();
  else if (key == "dprop_window_s") dprop_window_s = num();
  else if (key == "feedback_s") feedback_s = num();
  else if (key == "delta_floor_mu") delta_floor.mu = num();
  else if (key == "delta_floor_sigma") delta_floor.sigma = num();
  else if (key == "delta_floor_omega") delta_floor.omega = num();
  else if (key == "delta_floor_dprop_ms") delta_floor.d_prop = num();
  else if (key == "dprop_sigma_ms") dprop_sigma_ms = num();
  else if (key == "dprop_cap_ms") dprop_cap_ms = num();
  else if (key == "ladder_min_mbps") ladder_min_mbps = num();
  else if (key == "ladder_max_mbps") ladder_max_mbps = num();
  else if (key == "ladder_step_mbps") ladder_step_mbps = num();
  else if (key == "action_max") action_max = num();
  else if (key == "action_step") action_step = num();
  else if (key == "init_bitrate_mbps") init_bitrate_mbps = num();
  else if (key == "reward_throughput_w") reward_throughput_w = num();
  else if (key == "reward_loss_w") reward_loss_w = num();
  else if (key == "reward_delay_w") reward_delay_w = num();
  else if (key == "reward_smooth_w") reward_smooth_w = num();
  else if (key == "hidden1") hidden1 = static_cast<int>(num());
  else if (key == "hidden2") hidden2 = static_cast<int>(num());
  else if (key == "hidden3") hidden3 = static_cast<int>(num());
  else if (key == "activation") activation = value;
  else if (key == "discount") discount = num();
  else if (key == "reward_horizon_steps") reward_horizon_steps = static_cast<int>(num());
  else if (key == "inner_steps") inner_steps = static_cast<int>(num());
  else if (key == "episodes_k") episodes_k = static_cast<int>(num());
  else if (key == "tasks_m") tasks_m = static_cast<int>(num());
  else if (key == "inner_lr") inner_lr = num();
  else if (key == "outer_lr") outer_lr = num();
  else if (key == "clip_eps") clip_eps = num();
  else if (key == "episode_s") episode_s = num();
  else if (key == "rounds") rounds = static_cast<int>(num());
  else if (key == "checkpoint_every") checkpoint_every = static_cast<int>(num());
  else if (key == "bin_mu") bin_mu = num();
  else if (key == "bin_sigma") bin_sigma = num();
  else if (key == "bin_omega") bin_omega = num();
  else if (key == "bin_dprop_ms") bin_dprop_ms = num();
  else if (key == "max_bw_mbps") max_bw_mbps = num();
  else if (key == "center_stddev_frac") center_stddev_frac = num();
  else if (key == "reject_perms") reject_perms = static_cast<int>(num());
  else if (key == "reject_pools") reject_pools = static_cast<int>(num());
  else if (key == "fps") fps = static_cast<int>(num());
  else if (key == "mtu_bytes") mtu_bytes = static_cast<int>(num());
  else if (key == "queue_ms") queue_ms = num();
  else if (key == "late_frame_ms") late_frame_ms = num();
  else if (key == "frame_jitter") frame_jitter = num();
  else if (key == "random_loss") random_loss = num();
  else if (key == "pace_multiplier") pace_multiplier = num();
  else if (key == "adapt_budget_s") adapt_budget_s = num();
  else if (key == "cache_capacity") cache_capacity = static_cast<std::size_t>(num());
  else if (key == "cache_q_mu") cache_q_mu = num();
  else if (key == "cache_q_sigma") cache_q_sigma = num();
  else if (key == "cache_q_omega") cache_q_omega = num();
  else if (key == "cache_q_dprop_ms") cache_q_dprop_ms = num();
  else if (key == "seed") seed = static_cast<std::uint64_t>(num());
  else throw ParseError("config: unknown key '" + key + "'");
}

inline LabConfig LabConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("config: cannot open '" + path + "'");
  LabConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ParseError("config: '" + path + "' line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

inline std::string LabConfig::serialize() const {
  std::ostringstream out;
  out.precision(17);
  out << "window_s = " << window_s << "\n"
      << "state_interval_s = " << state_interval_s << "\n"
      << "tick_s = " << tick_s << "\n"
      << "dprop_window_s = " << dprop_window_s << "\n"
      << "feedback_s = " << feedback_s << "\n"
      << "delta_floor_mu = " << delta_floor.mu << "\n"
      << "delta_floor_sigma = " << delta_floor.sigma << "\n"
      << "delta_floor_omega = " << delta_floor.omega << "\n"
      << "delta_floor_dprop_ms = " << delta_floor.d_prop << "\n"
      << "dprop_sigma_ms = " << dprop_sigma_ms << "\n"
      << "dprop_cap_ms = " << dprop_cap_ms << "\n"
      << "ladder_min_mbps = " << ladder_min_mbps << "\n"
      << "ladder_max_mbps = " << ladder_max_mbps << "\n"
      << "ladder_step_mbps = " << ladder_step_mbps << "\n"
      << "action_max = " << action_max << "\n"
      << "action_step = " << action_step << "\n"
      << "init_bitrate_mbps = " << init_bitrate_mbps << "\n"
      << "reward_throughput_w = " << reward_throughput_w << "\n"
      << "reward_loss_w = " << reward_loss_w << "\n"
      << "reward_delay_w = " << reward_delay_w << "\n"
      << "reward_smooth_w = " << reward_smooth_w << "\n"
      << "hidden1 = " << hidden1 << "\n"
      << "hidden2 = " << hidden2 << "\n"
      << "hidden3 = " << hidden3 << "\n"
      << "activation = " << activation << "\n"
      << "discount = " << discount << "\n"
      << "reward_horizon_steps = " << reward_horizon_steps << "\n"
      << "inner_steps = " << inner_steps << "\n"
      << "episodes_k = " << episodes_k << "\n"
      << "tasks_m = " << tasks_m << "\n"
      << "inner_lr = " << inner_lr << "\n"
      << "outer_lr = " << outer_lr << "\n"
      << "clip_eps = " << clip_eps << "\n"
      << "episode_s = " << episode_s << "\n"
      << "rounds = " << rounds << "\n"
      << "checkpoint_every = " << checkpoint_every << "\n"
      << "bin_mu = " << bin_mu << "\n"
      << "bin_sigma = " << bin_sigma << "\n"
      << "bin_omega = " << bin_omega << "\n"
      << "bin_dprop_ms = " << bin_dprop_ms << "\n"
      << "max_bw_mbps = " << max_bw_mbps << "\n"
      << "center_stddev_frac = " << center_stddev_frac << "\n"
      << "reject_perms = " << reject_perms << "\n"
      << "reject_pools = " << reject_pools << "\n"
      << "fps = " << fps << "\n"
      << "mtu_bytes = " << mtu_bytes << "\n"
      << "queue_ms = " << queue_ms << "\n"
      << "late_frame_ms = " << late_frame_ms << "\n"
      << "frame_jitter = " << frame_jitter << "\n"
      << "random_loss = " << random_loss << "\n"
      << "pace_multiplier = " << pace_multiplier << "\n"
      << "adapt_budget_s = " << adapt_budget_s << "\n"
      << "cache_capacity = " << cache_capacity << "\n"
      << "cache_q_mu = " << cache_q_mu << "\n"
      << "cache_q_sigma = " << cache_q_sigma << "\n"
      << "cache_q_omega = " << cache_q_omega << "\n"
      << "cache_q_dprop_ms = " << cache_q_dprop_ms << "\n"
      << "seed = " << seed << "\n";
  return out.str();
}

inline std::uint64_t LabConfig::hash() const {
  // FNV-1a over the canonical serialization.
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : serialize()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace abrlab
