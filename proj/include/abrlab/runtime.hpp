#pragma once

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <atomic>
#include <thread>
#include <vector>

#include "abrlab/config.hpp"
#include "abrlab/meta_rl.hpp"
#include "abrlab/policy.hpp"
#include "abrlab/taskspace.hpp"

namespace abrlab {

// Serving loop plumbing: per-tick bitrate decisions from an immutable
// parameter snapshot, 1 Hz network-state monitoring with half-range
// activation, background meta-testing with a single-slot mailbox (newest
// pending activation wins), and an access-frequency parameter cache.
//
// Two execution modes share this type. In lockstep mode (trace-driven
// evaluation) adaptation work happens inline at activation but its swap
// becomes visible only after the configured adaptation latency of virtual
// time. In threaded mode a worker thread adapts concurrently and swaps as
// soon as it finishes; serving never blocks on it.

struct CacheKey {
  int mu = 0, sigma = 0, omega = 0, d_prop = 0;
  auto operator<=>(const CacheKey&) const = default;
};

inline CacheKey quantize_task(const NetworkState& task, const LabConfig& cfg) {
  auto q = [](double v, double step) { return static_cast<int>(std::floor(v / step + 1e-9)); };
  return {q(task.mu, cfg.cache_q_mu), q(task.sigma, cfg.cache_q_sigma),
          q(task.omega, cfg.cache_q_omega), q(task.d_prop_ms, cfg.cache_q_dprop_ms)};
}

// LFU cache of adapted parameters; ties evict the least recently touched.
// The initialization is held by the runtime itself and is never a cache
// entry, so it cannot be evicted.
class ParamCache {
 public:
  explicit ParamCache(std::size_t capacity) : capacity_(std::max<std::size_t>(capacity, 1)) {}

  std::shared_ptr<const MlpParams> find(const CacheKey& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    it->second.count += 1;
    it->second.touch = ++clock_;
    return it->second.params;
  }

  void insert(const CacheKey& key, std::shared_ptr<const MlpParams> params) {
    auto it = entries_.find(key);
    if (it != entries_.end()) {
      it->second.params = std::move(params);
      it->second.count += 1;
      it->second.touch = ++clock_;
      return;
    }
    if (entries_.size() >= capacity_) {
      auto victim = entries_.begin();
      for (auto e = entries_.begin(); e != entries_.end(); ++e) {
        if (e->second.count < victim->second.count ||
            (e->second.count == victim->second.count && e->second.touch < victim->second.touch))
          victim = e;
      }
      entries_.erase(victim);
    }
    entries_[key] = Entry{std::move(params), 1, ++clock_};
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool contains(const CacheKey& key) const { return entries_.count(key) > 0; }

 private:
  struct Entry {
    std::shared_ptr<const MlpParams> params;
    std::uint64_t count = 0;
    std::uint64_t touch = 0;
  };
  std::size_t capacity_;
  std::uint64_t clock_ = 0;
  std::map<CacheKey, Entry> entries_;
};

struct RuntimeEvent {
  enum class Kind { kActivation, kSwap, kCacheHit, kAdaptDone, kAdaptFail, kQueued };
  Kind kind;
  double t_s = 0.0;       // virtual time of the triggering tick
  double wall_ms = 0.0;   // wall clock since runtime construction
  std::uint64_t generation = 0;
};

struct ParamSnapshot {
  std::shared_ptr<const MlpParams> params;
  std::uint64_t generation = 0;
};

class OnlineRuntime {
 public:
  OnlineRuntime(MlpParams theta0, LabConfig cfg, std::uint64_t seed, bool threaded = false,
                bool meta_test_enabled = true)
      : cfg_(std::move(cfg)),
        theta0_(std::make_shared<const MlpParams>(std::move(theta0))),
        cache_(cfg_.cache_capacity),
        adapt_rng_(seed),
        serve_rng_(seed ^ 0xabcdef12345ull),
        threaded_(threaded),
        meta_test_enabled_(meta_test_enabled),
        epoch_(std::chrono::steady_clock::now()) {
    current_ = theta0_;
    action_grid_ = cfg_.action_grid();
    bitrate_ = cfg_.init_bitrate_mbps;
    tracker_ = WindowTracker(cfg_.window_len());
    if (threaded_) worker_ = std::thread([this] { worker_loop(); });
  }

  ~OnlineRuntime() {
    if (threaded_) {
      {
        std::lock_guard lk(mail_mu_);
        stop_ = true;
      }
      mail_cv_.notify_all();
      worker_.join();
    }
  }

  OnlineRuntime(const OnlineRuntime&) = delete;
  OnlineRuntime& operator=(const OnlineRuntime&) = delete;

  // One bitrate decision from the current snapshot. Deterministic mode
  // takes the argmax action; sampling mode draws from the policy.
  double serve_step(std::span<const TickObservation> history, bool sample = false) {
    const auto snap = snapshot();
    const auto state = featurize(history, {cfg_.ladder_max_mbps, 1000.0});
    const auto tr = mlp_forward(*snap.params, state);
    const std::size_t a = sample ? serve_rng_.categorical(tr.probs) : argmax_action(tr.probs);
    bitrate_ = apply_action(bitrate_, action_grid_[a], cfg_.ladder_min_mbps, cfg_.ladder_max_mbps);
    last_decision_generation_ = snap.generation;
    return bitrate_;
  }

  double bitrate() const { return bitrate_; }
  void reset_bitrate(double b) { bitrate_ = b; }
  std::uint64_t last_decision_generation() const { return last_decision_generation_; }

  ParamSnapshot snapshot() const {
    std::lock_guard lk(param_mu_);
    return {current_, generation_.load()};
  }

  // Publish new parameters. Single-writer contract: in the production flow
  // only meta-test completion calls this; readers always observe either
  // the complete old or complete new snapshot.
  void swap_params(std::shared_ptr<const MlpParams> params, double t_s = 0.0) {
    std::lock_guard lk(mail_mu_);
    install(std::move(params), t_s);
  }

  std::uint64_t generation() const { return generation_.load(); }

  // Feed the 1 Hz monitoring path with the current bandwidth estimate and
  // propagation-delay estimate. Forms the initial task once warm, then
  // fires meta-testing when the window stats cross half the ranges.
  void monitor_step(double b_hat_mbps, double dprop_ms, double t_s) {
    tracker_.push(b_hat_mbps, dprop_ms);
    if (!meta_test_enabled_) return;
    const auto stats = tracker_.current();
    if (!stats) return;
    std::optional<NetworkState> fire;
    {
      std::lock_guard lk(mail_mu_);
      if (!task_) {
        fire = make_task(*stats, std::nullopt, cfg_.delta_floor);
      } else if (should_activate(*stats, *task_)) {
        WindowStats center;
        center.mu = task_->mu;
        center.sigma = task_->sigma;
        center.omega = task_->omega;
        center.d_prop_ms = task_->d_prop_ms;
        fire = make_task(*stats, center, cfg_.delta_floor);
      }
      if (fire) {
        log_event(RuntimeEvent::Kind::kActivation, t_s);
        task_ = *fire;  // comparisons now run against the newest center
        if (in_flight_) {
          pending_ = *fire;  // single slot: newest wins
          log_event(RuntimeEvent::Kind::kQueued, t_s);
          fire.reset();
        } else {
          in_flight_ = true;
        }
      }
    }
    if (fire) begin_meta_test(*fire, t_s);
  }

  // Lockstep mode: apply a finished adaptation once its virtual completion
  // time has been reached.
  void on_virtual_time(double t_s) {
    std::optional<NetworkState> follow_up;
    {
      std::lock_guard lk(mail_mu_);
      if (!ready_ || t_s + 1e-9 < ready_->apply_at_s) return;
      install(ready_->params, t_s);
      ready_.reset();
      if (pending_) {
        follow_up = *pending_;
        pending_.reset();
      } else {
        in_flight_ = false;
      }
    }
    if (follow_up) begin_meta_test(*follow_up, t_s);
  }

  bool adaptation_in_flight() const {
    std::lock_guard lk(mail_mu_);
    return in_flight_;
  }

  std::optional<NetworkState> current_task() const {
    std::lock_guard lk(mail_mu_);
    return task_;
  }

  std::vector<RuntimeEvent> events() const {
    std::lock_guard lk(mail_mu_);
    return events_;
  }

  const ParamCache& cache() const { return cache_; }

  // Wait until no adaptation is running or queued (threaded mode).
  void drain() {
    std::unique_lock lk(mail_mu_);
    drain_cv_.wait(lk, [this] { return !in_flight_ && !pending_; });
  }

 private:
  struct ReadySwap {
    std::shared_ptr<const MlpParams> params;
    double apply_at_s = 0.0;
  };

  double wall_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - epoch_)
        .count();
  }

  void log_event(RuntimeEvent::Kind kind, double t_s) {
    events_.push_back({kind, t_s, wall_ms(), generation_unlocked()});
  }

  std::uint64_t generation_unlocked() const { return generation_.load(); }

  void install(std::shared_ptr<const MlpParams> params, double t_s) {
    {
      std::lock_guard plk(param_mu_);
      current_ = std::move(params);
      generation_.fetch_add(1);
    }
    log_event(RuntimeEvent::Kind::kSwap, t_s);
  }

  // Adapt to the task: cache hit swaps immediately; a miss runs the inner
  // loop. In lockstep mode the result becomes visible only after the
  // configured adaptation latency; in threaded mode the worker swaps it in
  // when done.
  void begin_meta_test(const NetworkState& task, double t_s) {
    if (threaded_) {
      {
        std::lock_guard lk(mail_mu_);
        worker_job_ = task;
        worker_job_t_ = t_s;
      }
      mail_cv_.notify_all();
    } else {
      run_meta_test_lockstep(task, t_s);
    }
  }

  std::shared_ptr<const MlpParams> adapt_or_fetch(const NetworkState& task, double t_s,
                                                  bool& cache_hit) {
    const CacheKey key = quantize_task(task, cfg_);
    {
      std::lock_guard lk(mail_mu_);
      if (auto hit = cache_.find(key)) {
        cache_hit = true;
        log_event(RuntimeEvent::Kind::kCacheHit, t_s);
        return hit;
      }
    }
    cache_hit = false;
    const MlpParams base = *theta0_;
    for (int attempt = 0; attempt < 2; ++attempt) {
      try {
        auto adapted = std::make_shared<const MlpParams>(
            inner_adapt(base, task_episode_sampler(task, cfg_), cfg_, adapt_rng_));
        std::lock_guard lk(mail_mu_);
        cache_.insert(key, adapted);
        log_event(RuntimeEvent::Kind::kAdaptDone, t_s);
        return adapted;
      } catch (const TrajectoryError&) {
        std::lock_guard lk(mail_mu_);
        log_event(RuntimeEvent::Kind::kAdaptFail, t_s);
      }
    }
    return nullptr;  // keep serving current params
  }

  void run_meta_test_lockstep(const NetworkState& task, double t_s) {
    bool cache_hit = false;
    auto params = adapt_or_fetch(task, t_s, cache_hit);
    std::optional<NetworkState> follow_up;
    {
      std::lock_guard lk(mail_mu_);
      if (params) {
        const double latency = cache_hit ? 0.0 : cfg_.adapt_budget_s;
        ready_ = ReadySwap{std::move(params), t_s + latency};
        return;
      }
      if (pending_) {
        follow_up = *pending_;
        pending_.reset();
      } else {
        in_flight_ = false;
      }
    }
    if (follow_up) run_meta_test_lockstep(*follow_up, t_s);
  }

  void worker_loop() {
    for (;;) {
      NetworkState task;
      double t_s = 0.0;
      {
        std::unique_lock lk(mail_mu_);
        mail_cv_.wait(lk, [this] { return stop_ || worker_job_.has_value(); });
        if (stop_) return;
        task = *worker_job_;
        t_s = worker_job_t_;
        worker_job_.reset();
      }
      bool cache_hit = false;
      auto params = adapt_or_fetch(task, t_s, cache_hit);
      std::optional<NetworkState> follow_up;
      {
        std::lock_guard lk(mail_mu_);
        if (params) install(std::move(params), t_s);
        if (pending_) {
          follow_up = *pending_;
          pending_.reset();
        } else {
          in_flight_ = false;
        }
      }
      drain_cv_.notify_all();
      if (follow_up) begin_meta_test(*follow_up, t_s);
    }
  }

  LabConfig cfg_;
  std::shared_ptr<const MlpParams> theta0_;
  ParamCache cache_;
  Rng adapt_rng_;
  Rng serve_rng_;
  bool threaded_;
  bool meta_test_enabled_;
  std::chrono::steady_clock::time_point epoch_;

  std::vector<double> action_grid_;
  double bitrate_ = 0.5;
  std::uint64_t last_decision_generation_ = 0;

  mutable std::mutex param_mu_;
  std::shared_ptr<const MlpParams> current_;
  std::atomic<std::uint64_t> generation_{0};

  mutable std::mutex mail_mu_;
  std::condition_variable mail_cv_;
  std::condition_variable drain_cv_;
  WindowTracker tracker_{8};
  std::optional<NetworkState> task_;
  std::optional<NetworkState> pending_;
  std::optional<ReadySwap> ready_;
  std::optional<NetworkState> worker_job_;
  double worker_job_t_ = 0.0;
  bool in_flight_ = false;
  bool stop_ = false;
  std::vector<RuntimeEvent> events_;
  std::thread worker_;
};

}  // namespace abrlab
