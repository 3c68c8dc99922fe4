#pragma once

#include <deque>
#include <span>
#include <vector>

#include "abrlab/config.hpp"
#include "abrlab/policy.hpp"
#include "abrlab/simnet.hpp"
#include "abrlab/tracegen.hpp"
#include "abrlab/types.hpp"

namespace abrlab {

struct Transition {
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;
  double behavior_prob = 0.0;  // pi(a | s) under the policy that acted
};

struct Episode {
  std::vector<Transition> steps;
  double mean_reward() const {
    if (steps.empty()) return 0.0;
    double r = 0.0;
    for (const auto& t : steps) r += t.reward;
    return r / static_cast<double>(steps.size());
  }
};

inline SimConfig sim_config_from(const LabConfig& cfg) {
  SimConfig sc;
  sc.fps = cfg.fps;
  sc.mtu_bytes = cfg.mtu_bytes;
  sc.queue_ms = cfg.queue_ms;
  sc.late_frame_ms = cfg.late_frame_ms;
  sc.frame_jitter = cfg.frame_jitter;
  sc.random_loss = cfg.random_loss;
  sc.pace_multiplier = cfg.pace_multiplier;
  sc.ladder = cfg.ladder();
  sc.init_bitrate_mbps = cfg.init_bitrate_mbps;
  return sc;
}

inline TraceGenConfig tracegen_config_from(const LabConfig& cfg) {
  TraceGenConfig tc;
  tc.max_bw_mbps = cfg.max_bw_mbps;
  tc.window_len = cfg.window_len();
  tc.center_stddev_frac = cfg.center_stddev_frac;
  tc.perm_budget = cfg.reject_perms;
  tc.pool_budget = cfg.reject_pools;
  return tc;
}

// Run one policy-controlled episode over a given trace. Actions are
// sampled from the policy during training and taken greedily during
// evaluation.
inline Episode run_episode(const MlpParams& params, const NetTrace& trace, const LabConfig& cfg,
                           Rng& rng, bool sample_actions) {
  const auto grid = cfg.action_grid();
  Episode ep;
  Session session(trace, sim_config_from(cfg), rng.fork());
  std::deque<TickObservation> history;
  double b = cfg.init_bitrate_mbps;
  const int steps = std::min<int>(cfg.episode_steps(),
                                  static_cast<int>(trace.duration_s() / cfg.tick_s));
  ep.steps.reserve(static_cast<std::size_t>(steps));
  FeatureNorms norms{cfg.ladder_max_mbps, 1000.0};
  for (int step = 0; step < steps; ++step) {
    std::vector<TickObservation> hist(history.begin(), history.end());
    auto state = featurize(hist, norms);
    const auto tr = mlp_forward(params, state);
    const std::size_t a = sample_actions ? rng.categorical(tr.probs) : argmax_action(tr.probs);
    const double b_prev = b;
    b = apply_action(b, grid[a], cfg.ladder_min_mbps, cfg.ladder_max_mbps);
    session.set_target_bitrate(b);
    session.advance(cfg.tick_s);
    const LinkFeedback fb = session.feedback(cfg.tick_s);
    const double r = reward(fb.throughput_mbps, fb.loss_ratio, fb.delay_ms, b, b_prev,
                            {cfg.reward_throughput_w, cfg.reward_loss_w, cfg.reward_delay_w,
                             cfg.reward_smooth_w});
    history.push_back({fb.throughput_mbps, b, fb.loss_ratio, fb.delay_ms, fb.jitter_ms});
    if (history.size() > static_cast<std::size_t>(kHistorySteps)) history.pop_front();
    ep.steps.push_back({std::move(state), static_cast<int>(a), r, tr.probs[a]});
  }
  return ep;
}

// Episode for a task: generate a fresh synthetic trajectory, then roll.
inline Episode run_task_episode(const MlpParams& params, const NetworkState& task,
                                const LabConfig& cfg, Rng& rng, bool sample_actions) {
  const auto trace = generate_trajectory(task, static_cast<int>(cfg.episode_s), cfg.max_bw_mbps,
                                         rng, tracegen_config_from(cfg));
  return run_episode(params, trace, cfg, rng, sample_actions);
}

}  // namespace abrlab
