#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "abrlab/rng.hpp"
#include "abrlab/types.hpp"

namespace abrlab {

// Packet-level interactive-video path: frame source on a bitrate ladder,
// RTP-style packetization, pacer, trace-driven bottleneck with a drop-tail
// byte queue and propagation delay, RTCP-style feedback, and per-second
// QoE accounting. This is the only module that thinks in bytes.
//
// The RTT proxy reported in feedback is forward one-way delay (queueing +
// serialization + propagation) plus the bare propagation delay of the
// return path; the reverse direction carries only feedback and does not
// queue.

struct SimConfig {
  int fps = 30;
  int mtu_bytes = 1200;
  double queue_ms = 250.0;        // drop-tail capacity in ms at current bandwidth
  double late_frame_ms = 400.0;   // frames later than this are discarded
  double frame_jitter = 0.15;     // multiplicative, uniform in [1-j, 1+j]
  double random_loss = 0.0;
  double pace_multiplier = 1.0;
  std::vector<double> ladder = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0,
                                1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0,
                                2.1, 2.2, 2.3, 2.4, 2.5};
  double init_bitrate_mbps = 0.5;
  // Optional recorded frame sizes per ladder level (bytes, cycled); when a
  // level has entries the parametric jitter model is bypassed.
  std::map<double, std::vector<int>> frame_size_table;
};

struct PacketRecord {
  std::int64_t seq = 0;
  int size_bytes = 0;
  std::int64_t frame_id = 0;
  double send_ms = 0.0;
  double arrive_ms = 0.0;  // meaningless when lost
  bool lost = false;
};

struct SecondMetrics {
  int second = 0;
  double bandwidth_mbps = 0.0;   // trace ground truth for this second
  double target_mbps = 0.0;      // mean selected ladder level over the second
  double throughput_mbps = 0.0;
  double loss_ratio = 0.0;
  double rtt_ms = 0.0;
  double jitter_ms = 0.0;
  int delivered_fps = 0;
  double frame_delay_ms = 0.0;
  bool stalled = false;          // delivered FPS < 12
  double bitrate_change_mbps = 0.0;  // accumulated |ladder level changes|
};

class Session {
 public:
  Session(NetTrace trace, SimConfig cfg, std::uint64_t seed)
      : trace_(std::move(trace)), cfg_(std::move(cfg)), rng_(seed) {
    trace_.validate();
    if (cfg_.ladder.empty()) throw DataError("simnet: empty ladder");
    t0_ = trace_.samples.front().t_s;
    seconds_.resize(trace_.samples.size());
    for (std::size_t i = 0; i < seconds_.size(); ++i) {
      seconds_[i].second = static_cast<int>(i);
      seconds_[i].bandwidth_mbps = trace_.samples[i].bandwidth_mbps;
    }
    set_target_bitrate(cfg_.init_bitrate_mbps);
  }

  // Snap the frame source to the nearest ladder level and repoint the
  // pacer budget at it.
  void set_target_bitrate(double b_mbps) {
    if (!(b_mbps > 0.0)) throw DataError("simnet: target bitrate must be positive");
    double best = cfg_.ladder.front();
    for (double lv : cfg_.ladder)
      if (std::abs(lv - b_mbps) < std::abs(best - b_mbps)) best = lv;
    if (level_ > 0.0 && best != level_) {
      const auto sec = second_index(now_);
      if (sec < seconds_.size()) seconds_[sec].bitrate_change_mbps += std::abs(best - level_);
    }
    level_ = best;
    pace_rate_mbps_ = level_ * cfg_.pace_multiplier;
  }

  double current_level() const { return level_; }
  double now_s() const { return now_; }
  double duration_s() const { return trace_.duration_s(); }
  double prop_delay_now_ms() const { return trace_.prop_delay_at(t0_ + now_); }

  // Move simulated time forward: emit frames on the fps clock, pace
  // packets into the link, and collect arrivals due by the new time.
  void advance(double dt_s) {
    if (dt_s < 0.0) throw DataError("simnet: negative advance");
    if (dt_s == 0.0) return;
    const double end = now_ + dt_s;
    // Frame times come from an integer counter so second boundaries are
    // exact: frame n is generated at n / fps.
    while (static_cast<double>(frame_seq_) / static_cast<double>(cfg_.fps) < end - 1e-12) {
      emit_frame(static_cast<double>(frame_seq_) / static_cast<double>(cfg_.fps));
    }
    pump_pacer(end);
    now_ = end;
    collect_arrivals(end);
    const auto sec = second_index(now_ - 1e-9);
    if (sec < seconds_.size()) {
      seconds_[sec].level_sum_internal += level_ * dt_s;
      seconds_[sec].level_time_internal += dt_s;
    }
  }

  // Aggregate the RTCP-style signal for the feedback interval ending now.
  // Loss counts packets sent within the interval (drops resolve at link
  // ingress); throughput and delay come from arrivals within it. With no
  // arrivals the delay holds its last value; 0/0 loss is 0.
  LinkFeedback feedback(double interval_s) {
    if (interval_s < 0.1 - 1e-9) throw DataError("simnet: feedback interval below 100 ms");
    if (std::abs((last_fb_t_ + interval_s) - now_) > 1e-6)
      throw DataError("simnet: feedback interval does not end at current time");
    LinkFeedback fb;
    fb.t_s = now_;
    fb.throughput_mbps =
        static_cast<double>(iv_delivered_bytes_) * 8.0 / interval_s / 1e6;
    fb.loss_ratio = iv_sent_pkts_ > 0
                        ? static_cast<double>(iv_lost_pkts_) / static_cast<double>(iv_sent_pkts_)
                        : 0.0;
    if (iv_delay_count_ > 0)
      last_one_way_ms_ = iv_delay_sum_ms_ / static_cast<double>(iv_delay_count_);
    fb.delay_ms = last_one_way_ms_ + prop_delay_now_ms();  // RTT proxy
    fb.jitter_ms = iv_jitter_count_ > 0
                       ? iv_jitter_sum_ms_ / static_cast<double>(iv_jitter_count_)
                       : 0.0;
    iv_sent_pkts_ = iv_lost_pkts_ = 0;
    iv_delivered_bytes_ = 0;
    iv_delay_sum_ms_ = iv_jitter_sum_ms_ = 0.0;
    iv_delay_count_ = iv_jitter_count_ = 0;
    last_fb_t_ = now_;
    return fb;
  }

  const std::vector<PacketRecord>& packet_log() const { return packet_log_; }

  std::vector<SecondMetrics> second_metrics() const {
    const auto upto =
        std::min<std::size_t>(seconds_.size(), static_cast<std::size_t>(now_ + 1e-9));
    std::vector<SecondMetrics> out;
    out.reserve(upto);
    for (std::size_t i = 0; i < upto; ++i) {
      const auto& b = seconds_[i];
      SecondMetrics s = static_cast<const SecondMetrics&>(b);
      if (b.sent_pkts_internal > 0)
        s.loss_ratio = static_cast<double>(b.lost_pkts_internal) /
                       static_cast<double>(b.sent_pkts_internal);
      if (b.delay_count_internal > 0)
        s.rtt_ms = b.delay_sum_internal / static_cast<double>(b.delay_count_internal) +
                   trace_.samples[i].prop_delay_ms;
      if (b.jitter_count_internal > 0)
        s.jitter_ms = b.jitter_sum_internal / static_cast<double>(b.jitter_count_internal);
      if (b.frame_count_internal > 0)
        s.frame_delay_ms =
            b.frame_delay_sum_internal / static_cast<double>(b.frame_count_internal);
      if (b.level_time_internal > 0.0)
        s.target_mbps = b.level_sum_internal / b.level_time_internal;
      s.stalled = s.delivered_fps < 12;
      out.push_back(s);
    }
    return out;
  }

  // Byte accounting; exact at any time the simulator is quiescent.
  std::int64_t sent_bytes() const { return sent_bytes_; }
  std::int64_t delivered_bytes() const { return delivered_bytes_; }
  std::int64_t lost_bytes() const { return lost_bytes_; }
  std::int64_t queued_bytes() const {  // admitted, not yet out of the serializer
    std::int64_t q = 0;
    for (const auto& p : pending_)
      if (p.finish_t > now_) q += p.size;
    return q;
  }
  std::int64_t in_flight_bytes() const {  // serialized, still propagating
    std::int64_t f = 0;
    for (const auto& p : pending_)
      if (p.finish_t <= now_ && p.arrive_t > now_) f += p.size;
    return f;
  }

 private:
  struct PendingPacket {
    std::int64_t seq;
    int size;
    std::int64_t frame_id;
    double send_t;
    double finish_t;  // serializer output time
    double arrive_t;  // finish + propagation
  };

  struct FrameState {
    int packets = 0;
    int arrived = 0;
    bool lost = false;
    double gen_t = 0.0;
    double last_arrive = 0.0;
  };

  struct SecondBin : SecondMetrics {
    int sent_pkts_internal = 0;
    int lost_pkts_internal = 0;
    double delay_sum_internal = 0.0;
    int delay_count_internal = 0;
    double jitter_sum_internal = 0.0;
    int jitter_count_internal = 0;
    double frame_delay_sum_internal = 0.0;
    int frame_count_internal = 0;
    double level_sum_internal = 0.0;
    double level_time_internal = 0.0;
  };

  std::size_t second_index(double t) const {
    if (t < 0.0) return seconds_.size();
    return static_cast<std::size_t>(t);
  }

  int frame_bytes(double level) {
    auto it = cfg_.frame_size_table.find(level);
    if (it != cfg_.frame_size_table.end() && !it->second.empty()) {
      const auto& tab = it->second;
      return tab[static_cast<std::size_t>(frame_seq_) % tab.size()];
    }
    const double mean = level * 1e6 / 8.0 / static_cast<double>(cfg_.fps);
    const double jit = 1.0 + cfg_.frame_jitter * (2.0 * rng_.uniform() - 1.0);
    return std::max(1, static_cast<int>(std::lround(mean * jit)));
  }

  void emit_frame(double gen_t) {
    const int bytes = frame_bytes(level_);
    const std::int64_t fid = frame_seq_++;
    frames_[fid] = FrameState{0, 0, false, gen_t, 0.0};
    int remaining = bytes;
    while (remaining > 0) {
      const int sz = std::min(remaining, cfg_.mtu_bytes);
      remaining -= sz;
      pacer_q_.push_back({next_seq_++, sz, fid, gen_t, 0.0, 0.0});
      frames_[fid].packets += 1;
    }
  }

  double bandwidth_bytes_per_s(double t) const {
    return trace_.bandwidth_at(t0_ + t) * 1e6 / 8.0;
  }

  void pump_pacer(double end) {
    while (!pacer_q_.empty()) {
      auto& pkt = pacer_q_.front();
      const double ready = std::max(pacer_free_t_, pkt.send_t);
      if (ready >= end) break;
      const double rate_bytes = pace_rate_mbps_ * 1e6 / 8.0;
      pacer_free_t_ = ready + static_cast<double>(pkt.size) / rate_bytes;
      pkt.send_t = ready;
      send_into_link(pkt);
      pacer_q_.pop_front();
    }
  }

  void send_into_link(PendingPacket pkt) {
    const double t = pkt.send_t;
    sent_bytes_ += pkt.size;
    iv_sent_pkts_ += 1;
    const auto sec = second_index(t);
    if (sec < seconds_.size()) seconds_[sec].sent_pkts_internal += 1;

    const double bw_bytes = bandwidth_bytes_per_s(t);
    const double cap_bytes = cfg_.queue_ms / 1000.0 * bw_bytes;
    while (!queue_tail_.empty() && queue_tail_.front().finish_t <= t) {
      queue_bytes_ -= queue_tail_.front().size;
      queue_tail_.pop_front();
    }

    const bool overflow = static_cast<double>(queue_bytes_ + pkt.size) > cap_bytes;
    const bool random_drop = cfg_.random_loss > 0.0 && rng_.uniform() < cfg_.random_loss;
    if (overflow || random_drop) {
      lost_bytes_ += pkt.size;
      iv_lost_pkts_ += 1;
      if (sec < seconds_.size()) seconds_[sec].lost_pkts_internal += 1;
      auto fit = frames_.find(pkt.frame_id);
      if (fit != frames_.end()) fit->second.lost = true;
      packet_log_.push_back({pkt.seq, pkt.size, pkt.frame_id, t * 1000.0, 0.0, true});
      return;
    }

    const double start = std::max(busy_until_, t);
    const double finish =
        start + static_cast<double>(pkt.size) / (bw_bytes > 0.0 ? bw_bytes : 1e-9);
    busy_until_ = finish;
    pkt.finish_t = finish;
    // FIFO pipe: a drop in propagation delay cannot reorder in-flight packets.
    pkt.arrive_t = std::max(finish + trace_.prop_delay_at(t0_ + t) / 1000.0, last_arrive_t_);
    last_arrive_t_ = pkt.arrive_t;
    queue_tail_.push_back({pkt.finish_t, pkt.size});
    queue_bytes_ += pkt.size;
    pending_.push_back(pkt);
  }

  void collect_arrivals(double upto) {
    while (!pending_.empty() && pending_.front().arrive_t <= upto) {
      const auto pkt = pending_.front();
      pending_.pop_front();
      delivered_bytes_ += pkt.size;
      iv_delivered_bytes_ += pkt.size;
      const double one_way_ms = (pkt.arrive_t - pkt.send_t) * 1000.0;
      iv_delay_sum_ms_ += one_way_ms;
      iv_delay_count_ += 1;
      if (have_prev_delay_) {
        iv_jitter_sum_ms_ += std::abs(one_way_ms - prev_delay_ms_);
        iv_jitter_count_ += 1;
      }
      const auto sec = second_index(pkt.arrive_t);
      if (sec < seconds_.size()) {
        auto& s = seconds_[sec];
        s.throughput_mbps += static_cast<double>(pkt.size) * 8.0 / 1e6;
        s.delay_sum_internal += one_way_ms;
        s.delay_count_internal += 1;
        if (have_prev_delay_) {
          s.jitter_sum_internal += std::abs(one_way_ms - prev_delay_ms_);
          s.jitter_count_internal += 1;
        }
      }
      prev_delay_ms_ = one_way_ms;
      have_prev_delay_ = true;
      packet_log_.push_back(
          {pkt.seq, pkt.size, pkt.frame_id, pkt.send_t * 1000.0, pkt.arrive_t * 1000.0, false});

      auto fit = frames_.find(pkt.frame_id);
      if (fit != frames_.end()) {
        auto& fr = fit->second;
        fr.arrived += 1;
        fr.last_arrive = pkt.arrive_t;
        if (!fr.lost && fr.arrived == fr.packets) {
          const double delay_ms = (fr.last_arrive - fr.gen_t) * 1000.0;
          if (delay_ms <= cfg_.late_frame_ms) {
            // FPS and frame delay are credited to the generation second,
            // so an unloaded path scores exactly the source fps.
            const auto fsec = second_index(fr.gen_t);
            if (fsec < seconds_.size()) {
              seconds_[fsec].delivered_fps += 1;
              seconds_[fsec].frame_delay_sum_internal += delay_ms;
              seconds_[fsec].frame_count_internal += 1;
            }
          }
          frames_.erase(fit);
        }
      }
    }
  }

  NetTrace trace_;
  SimConfig cfg_;
  Rng rng_;
  double t0_ = 0.0;
  double now_ = 0.0;
  double level_ = 0.0;
  double pace_rate_mbps_ = 0.0;

  std::int64_t frame_seq_ = 0;
  std::int64_t next_seq_ = 0;
  std::deque<PendingPacket> pacer_q_;
  double pacer_free_t_ = 0.0;

  double busy_until_ = 0.0;
  double last_arrive_t_ = 0.0;
  struct QueueSlot {
    double finish_t;
    int size;
  };
  std::deque<QueueSlot> queue_tail_;
  std::int64_t queue_bytes_ = 0;
  std::deque<PendingPacket> pending_;  // admitted, not yet arrived (FIFO)
  std::map<std::int64_t, FrameState> frames_;

  std::vector<PacketRecord> packet_log_;
  std::int64_t sent_bytes_ = 0;
  std::int64_t delivered_bytes_ = 0;
  std::int64_t lost_bytes_ = 0;

  // feedback interval accumulators
  double last_fb_t_ = 0.0;
  int iv_sent_pkts_ = 0;
  int iv_lost_pkts_ = 0;
  std::int64_t iv_delivered_bytes_ = 0;
  double iv_delay_sum_ms_ = 0.0;
  int iv_delay_count_ = 0;
  double iv_jitter_sum_ms_ = 0.0;
  int iv_jitter_count_ = 0;
  double prev_delay_ms_ = 0.0;
  bool have_prev_delay_ = false;
  double last_one_way_ms_ = 0.0;

  std::vector<SecondBin> seconds_;
};

}  // namespace abrlab
