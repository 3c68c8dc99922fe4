#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "abrlab/config.hpp"
#include "abrlab/nnet.hpp"
#include "abrlab/rollout.hpp"
#include "abrlab/taskspace.hpp"

namespace abrlab {

// Inner loop: advantage-weighted log-likelihood ascent on trajectories of
// one task. Outer loop: PPO-clipped surrogate over trajectories of the
// adapted per-task policies, ascending the shared initialization.

class GradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PreparedBatch {
  std::vector<const Transition*> samples;
  std::vector<double> advantages;
};

// Returns-to-go over the reward horizon, baseline fit on this batch, and
// centered advantages.
inline PreparedBatch prepare_batch(std::span<const Episode> episodes, const LabConfig& cfg) {
  PreparedBatch out;
  std::vector<std::vector<double>> states;
  std::vector<double> returns;
  for (const auto& ep : episodes) {
    std::vector<double> rewards;
    rewards.reserve(ep.steps.size());
    for (const auto& t : ep.steps) rewards.push_back(t.reward);
    for (std::size_t i = 0; i < ep.steps.size(); ++i) {
      out.samples.push_back(&ep.steps[i]);
      states.push_back(ep.steps[i].state);
      returns.push_back(cumulative_reward(rewards, i, cfg.discount, cfg.reward_horizon_steps));
    }
  }
  if (out.samples.empty()) throw GradientError("prepare_batch: empty batch");
  const auto fit = baseline_fit(states, returns);
  out.advantages.reserve(returns.size());
  for (std::size_t i = 0; i < returns.size(); ++i)
    out.advantages.push_back(returns[i] - baseline_eval(fit.coeffs, states[i]));
  return out;
}

struct SurrogateValue {
  double loss = 0.0;
  MlpParams grad;  // same shape as the policy net
};

// L(theta) = mean over (s, a) of log pi_theta(a|s) * advantage.
inline SurrogateValue reinforce_surrogate(const MlpParams& params, const PreparedBatch& batch) {
  SurrogateValue out;
  out.grad = MlpParams::zeros_like(params);
  const double n = static_cast<double>(batch.samples.size());
  std::vector<double> dlogits(static_cast<std::size_t>(params.output_dim()));
  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    const auto& t = *batch.samples[i];
    const auto tr = mlp_forward(params, t.state);
    const double adv = batch.advantages[i];
    out.loss += std::log(tr.probs[static_cast<std::size_t>(t.action)]) * adv / n;
    for (std::size_t j = 0; j < dlogits.size(); ++j) {
      const double indicator = static_cast<int>(j) == t.action ? 1.0 : 0.0;
      dlogits[j] = adv / n * (indicator - tr.probs[j]);
    }
    mlp_backward(params, tr, dlogits, out.grad);
  }
  return out;
}

// PPO-clipped surrogate: ratios are the current initialization's action
// probabilities against the pre-round snapshot's; advantages come from the
// adapted policies' rollouts.
inline SurrogateValue ppo_surrogate(const MlpParams& params, const MlpParams& old_params,
                                    const PreparedBatch& batch, double eps) {
  SurrogateValue out;
  out.grad = MlpParams::zeros_like(params);
  const double n = static_cast<double>(batch.samples.size());
  std::vector<double> dlogits(static_cast<std::size_t>(params.output_dim()));
  for (std::size_t i = 0; i < batch.samples.size(); ++i) {
    const auto& t = *batch.samples[i];
    const auto tr = mlp_forward(params, t.state);
    const double p_new = tr.probs[static_cast<std::size_t>(t.action)];
    const double p_old =
        mlp_forward(old_params, t.state).probs[static_cast<std::size_t>(t.action)];
    const double adv = batch.advantages[i];
    const double ratio = p_new / p_old;
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
    const double f = ratio * adv;
    const double g = clipped * adv;
    double dloss_dratio;
    if (f <= g) {
      out.loss += f / n;
      dloss_dratio = adv;
    } else {
      out.loss += g / n;
      dloss_dratio = (ratio > 1.0 - eps && ratio < 1.0 + eps) ? adv : 0.0;
    }
    const double seed = dloss_dratio * ratio / n;  // d ratio / d log p_new = ratio
    if (seed != 0.0) {
      for (std::size_t j = 0; j < dlogits.size(); ++j) {
        const double indicator = static_cast<int>(j) == t.action ? 1.0 : 0.0;
        dlogits[j] = seed * (indicator - tr.probs[j]);
      }
      mlp_backward(params, tr, dlogits, out.grad);
    }
  }
  return out;
}

// One ascent step on the inner surrogate.
inline MlpParams policy_gradient_step(const MlpParams& params, std::span<const Episode> episodes,
                                      double alpha, const LabConfig& cfg,
                                      double* loss_out = nullptr) {
  const auto batch = prepare_batch(episodes, cfg);
  const auto sur = reinforce_surrogate(params, batch);
  if (!sur.grad.finite()) throw GradientError("policy_gradient_step: non-finite gradient");
  MlpParams next = params;
  next.axpy(alpha, sur.grad);
  if (loss_out) *loss_out = sur.loss;
  return next;
}

using EpisodeSampler = std::function<Episode(const MlpParams&, Rng&)>;

inline EpisodeSampler task_episode_sampler(const NetworkState& task, const LabConfig& cfg) {
  return [task, cfg](const MlpParams& params, Rng& rng) {
    return run_task_episode(params, task, cfg, rng, /*sample_actions=*/true);
  };
}

struct InnerReport {
  double pre_adapt_reward = 0.0;   // mean episode reward of the first batch
  double post_step_loss = 0.0;     // surrogate at the last step
};

// Task-specific adaptation: inner_steps x { roll K episodes, fit baseline,
// ascend }. Works on a copy; the initialization is never touched.
inline MlpParams inner_adapt(const MlpParams& theta0, const EpisodeSampler& sampler,
                             const LabConfig& cfg, Rng& rng, InnerReport* report = nullptr) {
  MlpParams theta = theta0;
  for (int step = 0; step < cfg.inner_steps; ++step) {
    std::vector<Episode> episodes;
    episodes.reserve(static_cast<std::size_t>(cfg.episodes_k));
    for (int k = 0; k < cfg.episodes_k; ++k) episodes.push_back(sampler(theta, rng));
    if (report && step == 0) {
      double r = 0.0;
      for (const auto& ep : episodes) r += ep.mean_reward();
      report->pre_adapt_reward = r / static_cast<double>(episodes.size());
    }
    double loss = 0.0;
    theta = policy_gradient_step(theta, episodes, cfg.inner_lr, cfg, &loss);
    if (report) report->post_step_loss = loss;
  }
  return theta;
}

struct TaskRound {
  NetworkState task;
  double pre_adapt_reward = 0.0;
  double post_adapt_reward = 0.0;
  bool failed = false;
  std::string error;
};

struct RoundReport {
  int round = 0;
  double outer_loss = 0.0;
  double mean_pre_reward = 0.0;
  double mean_post_reward = 0.0;
  int tasks_done = 0;
  int tasks_failed = 0;
  double wall_ms = 0.0;
  std::vector<TaskRound> tasks;
};

namespace detail {

inline void parallel_indexed(int n, int jobs, const std::function<void(int)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int workers = std::min(jobs, n);
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail

// One outer round: sample M tasks, adapt each, evaluate with the adapted
// policies, and ascend the initialization on the PPO-clipped surrogate.
// Tasks whose trajectory generation fails are skipped and logged in the
// report. Rollouts for distinct tasks run in parallel; the gradient and
// update are sequential.
inline MlpParams outer_update(const MlpParams& theta0, const TaskDistribution& dist,
                              const LabConfig& cfg, Rng& rng, RoundReport& report,
                              int jobs = 1) {
  const MlpParams theta_old = theta0;

  struct TaskWork {
    NetworkState task;
    std::uint64_t seed = 0;
    std::vector<Episode> eval_episodes;
    TaskRound round;
  };
  std::vector<TaskWork> work(static_cast<std::size_t>(cfg.tasks_m));
  for (auto& w : work) {
    w.task = dist.sample(rng);
    w.seed = rng.fork();
  }

  detail::parallel_indexed(cfg.tasks_m, jobs, [&](int i) {
    auto& w = work[static_cast<std::size_t>(i)];
    w.round.task = w.task;
    Rng task_rng(w.seed);
    try {
      InnerReport inner;
      const MlpParams theta_i =
          inner_adapt(theta0, task_episode_sampler(w.task, cfg), cfg, task_rng, &inner);
      w.round.pre_adapt_reward = inner.pre_adapt_reward;
      double post = 0.0;
      w.eval_episodes.reserve(static_cast<std::size_t>(cfg.episodes_k));
      for (int k = 0; k < cfg.episodes_k; ++k) {
        w.eval_episodes.push_back(run_task_episode(theta_i, w.task, cfg, task_rng, true));
        post += w.eval_episodes.back().mean_reward();
      }
      w.round.post_adapt_reward = post / static_cast<double>(cfg.episodes_k);
    } catch (const TrajectoryError& e) {
      w.round.failed = true;
      w.round.error = e.what();
      w.eval_episodes.clear();
    }
  });

  MlpParams theta_next = theta0;
  MlpParams grad_total = MlpParams::zeros_like(theta0);
  double loss_total = 0.0;
  std::size_t n_total = 0;
  for (auto& w : work) {
    report.tasks.push_back(w.round);
    if (w.round.failed) {
      report.tasks_failed += 1;
      continue;
    }
    report.tasks_done += 1;
    report.mean_pre_reward += w.round.pre_adapt_reward;
    report.mean_post_reward += w.round.post_adapt_reward;
    const auto batch = prepare_batch(w.eval_episodes, cfg);
    const auto sur = ppo_surrogate(theta0, theta_old, batch, cfg.clip_eps);
    const double weight = static_cast<double>(batch.samples.size());
    loss_total += sur.loss * weight;
    grad_total.axpy(weight, sur.grad);
    n_total += batch.samples.size();
  }
  if (report.tasks_done > 0) {
    report.mean_pre_reward /= static_cast<double>(report.tasks_done);
    report.mean_post_reward /= static_cast<double>(report.tasks_done);
  }
  if (n_total == 0) return theta_next;  // every task failed; initialization unchanged
  const double inv = 1.0 / static_cast<double>(n_total);
  report.outer_loss = loss_total * inv;
  if (!grad_total.finite()) throw GradientError("outer_update: non-finite gradient");
  theta_next.axpy(cfg.outer_lr * inv, grad_total);
  return theta_next;
}

struct MetaTrainResult {
  MlpParams theta0;
  std::vector<RoundReport> rounds;
};

using CheckpointFn = std::function<void(int round, const MlpParams&)>;

// Full offline meta-training: repeated outer rounds from a fresh
// initialization, checkpointing every cfg.checkpoint_every rounds.
inline MetaTrainResult meta_train(const LabConfig& cfg, const TaskDistribution& dist,
                                  std::uint64_t seed, int jobs = 1,
                                  const CheckpointFn& checkpoint = {},
                                  const std::function<void(const RoundReport&)>& on_round = {}) {
  Rng rng(seed);
  MetaTrainResult result;
  result.theta0 = MlpParams::make({kStateDim, cfg.hidden1, cfg.hidden2, cfg.hidden3,
                                   static_cast<int>(cfg.action_grid().size())},
                                  activation_from_string(cfg.activation), rng);
  for (int round = 1; round <= cfg.rounds; ++round) {
    const auto start = std::chrono::steady_clock::now();
    RoundReport report;
    report.round = round;
    result.theta0 = outer_update(result.theta0, dist, cfg, rng, report, jobs);
    report.wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    result.rounds.push_back(report);
    if (checkpoint && cfg.checkpoint_every > 0 && round % cfg.checkpoint_every == 0)
      checkpoint(round, result.theta0);
    if (on_round) on_round(report);
  }
  return result;
}

}  // namespace abrlab
