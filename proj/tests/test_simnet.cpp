#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "abrlab/rng.hpp"
#include "abrlab/simnet.hpp"

using namespace abrlab;

namespace {

NetTrace constant_trace(double bw, double dprop, int n) {
  NetTrace t;
  t.id = "const";
  for (int k = 0; k < n; ++k) t.samples.push_back({static_cast<double>(k), bw, dprop});
  return t;
}

struct Accounting {
  std::int64_t sent, delivered, lost, queued, in_flight;
};

Accounting snapshot(const Session& s) {
  return {s.sent_bytes(), s.delivered_bytes(), s.lost_bytes(), s.queued_bytes(),
          s.in_flight_bytes()};
}

}  // namespace

TEST_CASE("target bitrate snaps to the ladder") {
  Session s(constant_trace(1.0, 40.0, 10), SimConfig{}, 1);
  s.set_target_bitrate(0.57);
  CHECK(s.current_level() == Catch::Approx(0.6));
  s.set_target_bitrate(5.0);
  CHECK(s.current_level() == Catch::Approx(2.5));
  s.set_target_bitrate(0.05);
  CHECK(s.current_level() == Catch::Approx(0.1));
}

TEST_CASE("zero-length advance changes nothing") {
  Session s(constant_trace(1.0, 40.0, 10), SimConfig{}, 1);
  s.advance(1.0);
  const auto before = snapshot(s);
  s.advance(0.0);
  const auto after = snapshot(s);
  CHECK(before.sent == after.sent);
  CHECK(before.delivered == after.delivered);
  CHECK(s.now_s() == 1.0);
}

TEST_CASE("underload steady state: empty queue, low RTT, no loss") {
  SimConfig cfg;
  cfg.frame_jitter = 0.0;
  Session s(constant_trace(1.0, 40.0, 40), cfg, 1);
  s.set_target_bitrate(0.5);
  double last_fb_delay = 0.0, last_fb_thr = 0.0, last_fb_loss = 0.0;
  for (int t = 0; t < 30; ++t) {
    s.advance(1.0);
    const auto fb = s.feedback(1.0);
    last_fb_delay = fb.delay_ms;
    last_fb_thr = fb.throughput_mbps;
    last_fb_loss = fb.loss_ratio;
  }
  CHECK(s.queued_bytes() == 0);
  CHECK(last_fb_loss == 0.0);
  // RTT proxy: 2 * d_prop plus serialization only (packets of <= 1200 B at
  // 1 Mbps serialize in <= 9.6 ms).
  CHECK(last_fb_delay >= 80.0);
  CHECK(last_fb_delay <= 80.0 + 2.0 * 9.6 + 1.0);
  CHECK(last_fb_thr == Catch::Approx(0.5).margin(0.03));
}

TEST_CASE("overload fills the queue, raises RTT toward the cap, then drops") {
  SimConfig cfg;
  cfg.frame_jitter = 0.0;
  Session s(constant_trace(0.5, 40.0, 60), cfg, 1);
  s.set_target_bitrate(1.0);
  bool saw_drop = false;
  double max_rtt = 0.0;
  for (int t = 0; t < 40; ++t) {
    s.advance(1.0);
    const auto fb = s.feedback(1.0);
    saw_drop = saw_drop || fb.loss_ratio > 0.0;
    max_rtt = std::max(max_rtt, fb.delay_ms);
  }
  CHECK(saw_drop);
  // One-way queue wait approaches the 250 ms cap; RTT proxy approaches
  // 2 * 40 + 250 (+ serialization).
  CHECK(max_rtt > 250.0);
  CHECK(max_rtt < 2 * 40.0 + 250.0 + 40.0);
  // Sustained drop rate approaches the 50% oversubscription.
  const auto secs = s.second_metrics();
  double tail_loss = 0.0;
  int n = 0;
  for (std::size_t i = 20; i < secs.size() && i < 40; ++i) {
    tail_loss += secs[i].loss_ratio;
    ++n;
  }
  CHECK(tail_loss / n == Catch::Approx(0.5).margin(0.1));
}

TEST_CASE("byte conservation holds at every feedback boundary") {
  Rng rng(5);
  for (int run = 0; run < 5; ++run) {
    NetTrace tr;
    tr.id = "rand";
    for (int k = 0; k < 30; ++k)
      tr.samples.push_back({static_cast<double>(k), 0.3 + 2.0 * rng.uniform(),
                            20.0 + 30.0 * rng.uniform()});
    SimConfig cfg;
    cfg.random_loss = run % 2 == 0 ? 0.01 : 0.0;
    Session s(tr, cfg, 100 + static_cast<std::uint64_t>(run));
    double b = 0.5;
    for (int step = 0; step < 300; ++step) {
      b = std::clamp(b * std::exp(0.4 * (rng.uniform() - 0.5)), 0.1, 2.5);
      s.set_target_bitrate(b);
      s.advance(0.1);
      (void)s.feedback(0.1);
      const auto a = snapshot(s);
      REQUIRE(a.sent == a.delivered + a.lost + a.queued + a.in_flight);
    }
  }
}

TEST_CASE("clean underload delivers every frame at full fps") {
  SimConfig cfg;
  cfg.frame_jitter = 0.10;
  Session s(constant_trace(2.0, 30.0, 20), cfg, 3);
  s.set_target_bitrate(1.0);
  for (int t = 0; t < 20; ++t) s.advance(1.0);
  const auto secs = s.second_metrics();
  // Skip the first and last second (warm-up and in-flight tail).
  for (std::size_t i = 1; i + 1 < secs.size(); ++i) {
    CHECK(secs[i].delivered_fps == 30);
    CHECK_FALSE(secs[i].stalled);
    CHECK(secs[i].loss_ratio == 0.0);
  }
}

TEST_CASE("identical seeds give bit-identical packet logs") {
  NetTrace tr = constant_trace(1.0, 40.0, 20);
  auto run = [&tr] {
    SimConfig cfg;
    Session s(tr, cfg, 77);
    Rng ctrl(11);
    double b = 0.5;
    for (int step = 0; step < 150; ++step) {
      b = std::clamp(b * std::exp(0.4 * (ctrl.uniform() - 0.5)), 0.1, 2.5);
      s.set_target_bitrate(b);
      s.advance(0.1);
      (void)s.feedback(0.1);
    }
    return s.packet_log();
  };
  const auto log1 = run();
  const auto log2 = run();
  REQUIRE(log1.size() == log2.size());
  for (std::size_t i = 0; i < log1.size(); ++i) {
    REQUIRE(log1[i].seq == log2[i].seq);
    REQUIRE(log1[i].size_bytes == log2[i].size_bytes);
    REQUIRE(log1[i].send_ms == log2[i].send_ms);
    REQUIRE(log1[i].arrive_ms == log2[i].arrive_ms);
    REQUIRE(log1[i].lost == log2[i].lost);
  }
}

TEST_CASE("throughput never exceeds trace bandwidth by more than one packet per second") {
  SimConfig cfg;
  Session s(constant_trace(0.8, 40.0, 30), cfg, 9);
  s.set_target_bitrate(2.5);  // heavy overload
  for (int t = 0; t < 30; ++t) s.advance(1.0);
  const auto secs = s.second_metrics();
  for (const auto& sec : secs) {
    CHECK(sec.throughput_mbps <= 0.8 + cfg.mtu_bytes * 8.0 / 1e6 + 1e-9);
  }
}

TEST_CASE("frame source long-run byte rate is within 5% of the ladder level") {
  SimConfig cfg;
  cfg.frame_jitter = 0.15;
  Session s(constant_trace(10.0, 10.0, 60), cfg, 21);  // wide pipe: nothing queues
  s.set_target_bitrate(1.2);
  for (int t = 0; t < 60; ++t) s.advance(1.0);
  const double rate = static_cast<double>(s.sent_bytes()) * 8.0 / 60.0 / 1e6;
  CHECK(rate == Catch::Approx(1.2).epsilon(0.05));
}

TEST_CASE("no-feedback interval reports zero loss and holds delay") {
  SimConfig cfg;
  Session s(constant_trace(1.0, 40.0, 10), cfg, 2);
  s.set_target_bitrate(0.5);
  s.advance(1.0);
  const auto fb1 = s.feedback(1.0);
  REQUIRE(fb1.delay_ms > 0.0);
  // Starve the source: minimum ladder level still emits, so instead
  // freeze time advance without packets by a tiny advance window.
  // Use a zero-bandwidth trace to stop arrivals entirely.
  NetTrace dead = constant_trace(0.0, 40.0, 10);
  Session s2(dead, cfg, 2);
  s2.advance(1.0);
  const auto fb = s2.feedback(1.0);
  CHECK(fb.throughput_mbps == 0.0);
  CHECK(fb.loss_ratio >= 0.0);  // sent but nothing arrived yet -> 0 lost at ingress is fine
  s2.advance(1.0);
  const auto fb2 = s2.feedback(1.0);
  CHECK(fb2.delay_ms == fb.delay_ms);  // held
}

TEST_CASE("recorded frame-size table bypasses the jitter model") {
  SimConfig cfg;
  cfg.frame_size_table[0.5] = {1000, 2000};
  Session s(constant_trace(2.0, 20.0, 5), cfg, 4);
  s.set_target_bitrate(0.5);
  s.advance(1.0);
  const auto& log = s.packet_log();
  REQUIRE(log.size() > 4);
  // Frames alternate 1000 (one packet) and 2000 (1200 + 800) bytes.
  CHECK(log[0].size_bytes == 1000);
  CHECK(log[1].size_bytes == 1200);
  CHECK(log[2].size_bytes == 800);
  CHECK(log[3].size_bytes == 1000);
}
