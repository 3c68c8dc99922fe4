#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <limits>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "abrlab/bwest.hpp"
#include "abrlab/config.hpp"
#include "abrlab/gcc_like.hpp"
#include "abrlab/meta_rl.hpp"
#include "abrlab/rollout.hpp"
#include "abrlab/runtime.hpp"
#include "abrlab/simnet.hpp"
#include "abrlab/trace_io.hpp"

namespace abrlab {

// Experiment orchestration: a full serving loop (controller + estimator +
// monitor) over one trace, per-second CSV emission, and Table-style
// aggregation across sessions. The per-second reward column applies the
// QoE formula to the second's aggregates, so every summary number can be
// re-derived from the emitted CSVs.

enum class ControllerKind { kGcc, kPolicy, kPolicyFrozen };

inline ControllerKind controller_from_string(const std::string& s) {
  if (s == "gcc") return ControllerKind::kGcc;
  if (s == "policy") return ControllerKind::kPolicy;
  if (s == "policy-frozen") return ControllerKind::kPolicyFrozen;
  throw DataError("unknown controller '" + s + "' (expected gcc | policy | policy-frozen)");
}

inline std::string to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::kGcc: return "gcc";
    case ControllerKind::kPolicy: return "policy";
    case ControllerKind::kPolicyFrozen: return "policy-frozen";
  }
  return "?";
}

struct SecondRow {
  SecondMetrics metrics;
  double b_hat_mbps = 0.0;
  bool full_pipe = false;
  double reward = 0.0;
};

struct RunResult {
  std::string trace_id;
  std::string controller;
  std::uint64_t seed = 0;
  std::vector<SecondRow> seconds;
  std::vector<RuntimeEvent> events;
  std::vector<EstimateStep> estimates;
  std::vector<PacketRecord> packets;

  double mean_reward() const {
    if (seconds.empty()) return 0.0;
    double r = 0.0;
    for (const auto& s : seconds) r += s.reward;
    return r / static_cast<double>(seconds.size());
  }
  double stalling_rate() const {
    if (seconds.empty()) return 0.0;
    double n = 0.0;
    for (const auto& s : seconds) n += s.metrics.stalled ? 1.0 : 0.0;
    return n / static_cast<double>(seconds.size());
  }
};

struct RunOptions {
  ControllerKind controller = ControllerKind::kGcc;
  std::optional<MlpParams> checkpoint;  // required for policy controllers
  bool threaded_runtime = false;
  bool sample_actions = false;  // evaluation uses argmax
  bool keep_packet_log = false;
};

// Drive one session tick by tick. The estimator is always in the loop
// (whatever the controller) so bandwidth-estimate quality can be scored
// offline; the policy runtimes additionally monitor it for activation.
inline RunResult run_session(const NetTrace& trace, const LabConfig& cfg, std::uint64_t seed,
                             const RunOptions& opts) {
  RunResult result;
  result.trace_id = trace.id;
  result.controller = to_string(opts.controller);
  result.seed = seed;

  Session session(trace, sim_config_from(cfg), seed);
  const bool is_policy = opts.controller != ControllerKind::kGcc;
  std::unique_ptr<OnlineRuntime> runtime;
  std::unique_ptr<GccController> gcc;
  if (is_policy) {
    if (!opts.checkpoint) throw DataError("run_session: policy controller without checkpoint");
    runtime = std::make_unique<OnlineRuntime>(*opts.checkpoint, cfg, seed ^ 0x5eedull,
                                              opts.threaded_runtime,
                                              opts.controller == ControllerKind::kPolicy);
  } else {
    gcc = std::make_unique<GccController>(cfg.init_bitrate_mbps,
                                          GccConfig{.min_rate = cfg.ladder_min_mbps,
                                                    .max_rate = cfg.ladder_max_mbps});
  }

  BandwidthEstimator estimator(
      {static_cast<std::size_t>(std::lround(cfg.dprop_window_s / cfg.feedback_s)),
       cfg.dprop_sigma_ms, cfg.dprop_cap_ms});

  std::deque<TickObservation> history;
  const int ticks_per_fb = static_cast<int>(std::lround(cfg.feedback_s / cfg.tick_s));
  const int total_ticks = static_cast<int>(trace.duration_s() / cfg.tick_s);
  double bitrate = cfg.init_bitrate_mbps;
  double acc_eta = 0.0, acc_loss = 0.0, acc_jitter = 0.0;
  int acc_n = 0;
  std::size_t log_idx = 0;
  double last_min_one_way = trace.samples.front().prop_delay_ms;

  for (int tick = 0; tick < total_ticks; ++tick) {
    if (is_policy) {
      std::vector<TickObservation> hist(history.begin(), history.end());
      bitrate = runtime->serve_step(hist, opts.sample_actions);
    }
    session.set_target_bitrate(bitrate);
    session.advance(cfg.tick_s);
    const LinkFeedback fb = session.feedback(cfg.tick_s);
    if (!is_policy) bitrate = gcc->step(fb);
    history.push_back({fb.throughput_mbps, bitrate, fb.loss_ratio, fb.delay_ms, fb.jitter_ms});
    if (history.size() > static_cast<std::size_t>(kHistorySteps)) history.pop_front();

    acc_eta += fb.throughput_mbps;
    acc_loss += fb.loss_ratio;
    acc_jitter += fb.jitter_ms;
    acc_n += 1;
    if (acc_n == ticks_per_fb) {
      const double t_now = session.now_s();
      // The estimator thinks in one-way delay. Detection wants a
      // congestion-sensitive statistic (the interval mean), while the
      // propagation floor wants the interval minimum, whose only bias over
      // the true floor is the smallest packet's serialization time.
      const auto& log = session.packet_log();
      double min_one_way = std::numeric_limits<double>::max();
      double sum_one_way = 0.0;
      int n_one_way = 0;
      for (; log_idx < log.size(); ++log_idx) {
        if (log[log_idx].lost) continue;
        const double d = log[log_idx].arrive_ms - log[log_idx].send_ms;
        min_one_way = std::min(min_one_way, d);
        sum_one_way += d;
        n_one_way += 1;
      }
      if (n_one_way == 0) min_one_way = last_min_one_way;
      last_min_one_way = min_one_way;
      const double mean_one_way =
          n_one_way > 0 ? sum_one_way / n_one_way : min_one_way;
      LinkFeedback agg;
      agg.t_s = t_now;
      agg.throughput_mbps = acc_eta / acc_n;
      agg.loss_ratio = acc_loss / acc_n;
      agg.delay_ms = mean_one_way;
      agg.jitter_ms = acc_jitter / acc_n;
      acc_eta = acc_loss = acc_jitter = 0.0;
      acc_n = 0;
      double delta_mu = cfg.delta_floor.mu;
      if (runtime) {
        if (const auto task = runtime->current_task()) delta_mu = task->delta.mu;
      }
      const auto step = estimator.update(agg, delta_mu, min_one_way);
      result.estimates.push_back(step);
      if (runtime) {
        runtime->monitor_step(step.b_hat, step.dprop_ms, t_now);
        runtime->on_virtual_time(t_now);
      }
    }
  }

  const auto secs = session.second_metrics();
  RewardWeights weights{cfg.reward_throughput_w, cfg.reward_loss_w, cfg.reward_delay_w,
                        cfg.reward_smooth_w};
  for (std::size_t i = 0; i < secs.size(); ++i) {
    SecondRow row;
    row.metrics = secs[i];
    if (i < result.estimates.size()) {
      row.b_hat_mbps = result.estimates[i].b_hat;
      row.full_pipe = result.estimates[i].full_pipe;
    }
    // QoE of the second: throughput, loss, RTT (in seconds), and the
    // accumulated bitrate movement within the second.
    row.reward = weights.throughput * row.metrics.throughput_mbps -
                 weights.loss * row.metrics.loss_ratio -
                 weights.delay * (row.metrics.rtt_ms / 1000.0) -
                 weights.smooth * row.metrics.bitrate_change_mbps;
    result.seconds.push_back(row);
  }
  if (runtime) result.events = runtime->events();
  if (opts.keep_packet_log) result.packets = session.packet_log();
  return result;
}

// Packet log CSV: seq, size, frame_id, send_t, arrive_t or LOST.
inline void save_packets_csv(const RunResult& run, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("packets: cannot write '" + path + "'");
  out << "seq,size_bytes,frame_id,send_ms,arrive_ms\n";
  for (const auto& p : run.packets) {
    out << p.seq << "," << p.size_bytes << "," << p.frame_id << "," << csv::format(p.send_ms)
        << ",";
    if (p.lost)
      out << "LOST\n";
    else
      out << csv::format(p.arrive_ms) << "\n";
  }
}

inline constexpr const char* kMetricsHeader =
    "second,bandwidth_mbps,target_mbps,throughput_mbps,loss_ratio,rtt_ms,jitter_ms,"
    "delivered_fps,frame_delay_ms,stalled,bitrate_change_mbps,b_hat_mbps,full_pipe,reward";

inline void save_metrics_csv(const RunResult& run, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("metrics: cannot write '" + path + "'");
  out << kMetricsHeader << "\n";
  for (const auto& row : run.seconds) {
    const auto& m = row.metrics;
    out << m.second << "," << csv::format(m.bandwidth_mbps) << "," << csv::format(m.target_mbps)
        << "," << csv::format(m.throughput_mbps) << "," << csv::format(m.loss_ratio) << ","
        << csv::format(m.rtt_ms) << "," << csv::format(m.jitter_ms) << "," << m.delivered_fps
        << "," << csv::format(m.frame_delay_ms) << "," << (m.stalled ? 1 : 0) << ","
        << csv::format(m.bitrate_change_mbps) << "," << csv::format(row.b_hat_mbps) << ","
        << (row.full_pipe ? 1 : 0) << "," << csv::format(row.reward) << "\n";
  }
}

inline void save_events_csv(const RunResult& run, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("events: cannot write '" + path + "'");
  out << "kind,t_s,wall_ms,generation\n";
  auto name = [](RuntimeEvent::Kind k) {
    switch (k) {
      case RuntimeEvent::Kind::kActivation: return "activation";
      case RuntimeEvent::Kind::kSwap: return "swap";
      case RuntimeEvent::Kind::kCacheHit: return "cache_hit";
      case RuntimeEvent::Kind::kAdaptDone: return "adapt_done";
      case RuntimeEvent::Kind::kAdaptFail: return "adapt_fail";
      case RuntimeEvent::Kind::kQueued: return "queued";
    }
    return "?";
  };
  for (const auto& e : run.events)
    out << name(e.kind) << "," << csv::format(e.t_s) << "," << csv::format(e.wall_ms) << ","
        << e.generation << "\n";
}

// Mean and population standard deviation across session means.
struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;
  void fit(const std::vector<double>& v) {
    if (v.empty()) return;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    for (double x : v) stddev += (x - mean) * (x - mean);
    stddev = std::sqrt(stddev / static_cast<double>(v.size()));
  }
};

struct SummaryRow {
  std::string controller;
  int sessions = 0;
  Aggregate throughput, rtt, loss, fps, stalling, frame_delay, frame_delay_jitter,
      bitrate_jitter_10min, reward;
};

inline SummaryRow summarize(const std::string& controller,
                            const std::vector<const RunResult*>& runs) {
  SummaryRow row;
  row.controller = controller;
  row.sessions = static_cast<int>(runs.size());
  std::vector<double> thr, rtt, loss, fps, stall, fdelay, fjit, bjit, reward;
  for (const auto* run : runs) {
    double t = 0, r = 0, l = 0, f = 0, fd = 0, fj = 0, bj = 0;
    double prev_fd = 0.0;
    int n = 0, fd_n = 0, fj_n = 0;
    for (const auto& s : run->seconds) {
      t += s.metrics.throughput_mbps;
      r += s.metrics.rtt_ms;
      l += s.metrics.loss_ratio;
      f += s.metrics.delivered_fps;
      bj += s.metrics.bitrate_change_mbps;
      if (s.metrics.frame_delay_ms > 0.0) {
        fd += s.metrics.frame_delay_ms;
        if (fd_n > 0) {
          fj += std::abs(s.metrics.frame_delay_ms - prev_fd);
          fj_n += 1;
        }
        prev_fd = s.metrics.frame_delay_ms;
        fd_n += 1;
      }
      n += 1;
    }
    if (n == 0) continue;
    thr.push_back(t / n);
    rtt.push_back(r / n);
    loss.push_back(l / n);
    fps.push_back(f / n);
    stall.push_back(run->stalling_rate());
    fdelay.push_back(fd_n > 0 ? fd / fd_n : 0.0);
    fjit.push_back(fj_n > 0 ? fj / fj_n : 0.0);
    bjit.push_back(bj / n * 600.0);  // Mbps of movement per 10 minutes
    reward.push_back(run->mean_reward());
  }
  row.throughput.fit(thr);
  row.rtt.fit(rtt);
  row.loss.fit(loss);
  row.fps.fit(fps);
  row.stalling.fit(stall);
  row.frame_delay.fit(fdelay);
  row.frame_delay_jitter.fit(fjit);
  row.bitrate_jitter_10min.fit(bjit);
  row.reward.fit(reward);
  return row;
}

inline constexpr const char* kSummaryHeader =
    "controller,sessions,throughput_mbps,throughput_sd,rtt_ms,rtt_sd,loss_ratio,loss_sd,"
    "fps,fps_sd,stalling_rate,stalling_sd,frame_delay_ms,frame_delay_sd,"
    "frame_delay_jitter_ms,frame_delay_jitter_sd,bitrate_jitter_mbps_10min,bitrate_jitter_sd,"
    "reward,reward_sd";

inline void save_summary_csv(const std::vector<SummaryRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("summary: cannot write '" + path + "'");
  out << kSummaryHeader << "\n";
  for (const auto& r : rows) {
    out << r.controller << "," << r.sessions;
    for (const auto* a : {&r.throughput, &r.rtt, &r.loss, &r.fps, &r.stalling, &r.frame_delay,
                          &r.frame_delay_jitter, &r.bitrate_jitter_10min, &r.reward})
      out << "," << csv::format(a->mean) << "," << csv::format(a->stddev);
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Generic named-column CSV reading (for plot and re-aggregation passes).

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw DataError("csv: missing column '" + name + "'");
  }
  std::vector<double> values(const std::string& name) const {
    const auto c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
  }
};

inline CsvTable load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("csv: cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = csv::split(line);
    if (table.header.empty()) {
      table.header = fields;
      continue;
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) {
      // Non-numeric cells (e.g. controller names) become NaN slots.
      try {
        row.push_back(csv::number(f, path, lineno));
      } catch (const ParseError&) {
        row.push_back(std::numeric_limits<double>::quiet_NaN());
      }
    }
    if (row.size() != table.header.size())
      throw ParseError(path + ":" + std::to_string(lineno) + ": ragged row");
    table.rows.push_back(std::move(row));
  }
  if (table.header.empty()) throw ParseError(path + ": empty CSV");
  return table;
}

}  // namespace abrlab
