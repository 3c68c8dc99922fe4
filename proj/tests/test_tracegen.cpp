#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "abrlab/rng.hpp"
#include "abrlab/tracegen.hpp"

using namespace abrlab;

namespace {

NetworkState task_with(double mu, double sigma, double omega, double dprop,
                       DeltaRange delta = kDeltaFloor) {
  NetworkState t;
  t.mu = mu;
  t.sigma = sigma;
  t.omega = omega;
  t.d_prop_ms = dprop;
  t.delta = delta;
  return t;
}

}  // namespace

TEST_CASE("center sampling degenerates to the center when delta is zero") {
  Rng rng(1);
  auto task = task_with(1.0, 0.1, 1.0, 40.0);
  task.delta = {0.0, 0.0, 0.0, 0.0};  // bypass floors for the degenerate check
  const auto c = sample_center(task, rng);
  CHECK(c.mu == 1.0);
  CHECK(c.sigma == 0.1);
  CHECK(c.d_prop_ms == 40.0);
}

TEST_CASE("center draws stay within the covering range and peak at the center") {
  Rng rng(2);
  const auto task = task_with(1.0, 0.2, 1.0, 40.0);
  const int draws = 10000;
  double sum = 0.0;
  int center_bin = 0, edge_bin = 0;
  for (int i = 0; i < draws; ++i) {
    const auto c = sample_center(task, rng);
    REQUIRE(c.mu >= task.mu - task.delta.mu);
    REQUIRE(c.mu <= task.mu + task.delta.mu);
    REQUIRE(c.sigma >= task.sigma - task.delta.sigma);
    REQUIRE(c.sigma <= task.sigma + task.delta.sigma);
    sum += c.mu;
    if (std::abs(c.mu - task.mu) < task.delta.mu / 5.0) ++center_bin;
    if (c.mu - task.mu > 3.0 * task.delta.mu / 5.0) ++edge_bin;
  }
  // Symmetric truncation keeps the mean at the center.
  CHECK(std::abs(sum / draws - task.mu) < task.delta.mu / 10.0);
  // Mode at the center: the central fifth of the range out-draws the outer fifth.
  CHECK(center_bin > 2 * edge_bin);
}

TEST_CASE("beta moment matching reproduces mean and variance analytically") {
  const double cases[][2] = {{0.1, 0.5}, {0.5, 0.3}, {2.0, 0.8}, {1.2, 0.05}};
  const double max_bw = 3.0;
  for (const auto& c : cases) {
    const double mu = c[0];
    double sigma = c[1];
    const auto fit = beta_moment_match(mu, sigma, max_bw);
    if (fit.clamped) sigma = 0.99 * std::sqrt(mu / max_bw * (1.0 - mu / max_bw)) * max_bw;
    const double mean = fit.a / (fit.a + fit.b) * max_bw;
    const double var =
        fit.a * fit.b / ((fit.a + fit.b) * (fit.a + fit.b) * (fit.a + fit.b + 1.0)) * max_bw * max_bw;
    CHECK(std::abs(mean - mu) <= 1e-9 * mu);
    CHECK(std::abs(var - sigma * sigma) <= 1e-9 * sigma * sigma);
  }
}

TEST_CASE("sigma zero yields a constant trajectory") {
  Rng rng(3);
  auto task = task_with(1.0, 0.0, 0.0, 40.0, DeltaRange{0.2, 0.0, 2.0, 3.0});
  const auto trace = generate_trajectory(task, 20, 2.5, rng);
  REQUIRE(trace.samples.size() == 20);
  for (const auto& s : trace.samples) {
    CHECK(s.bandwidth_mbps == trace.samples[0].bandwidth_mbps);
    CHECK(s.prop_delay_ms == trace.samples[0].prop_delay_ms);
  }
}

TEST_CASE("3-sigma rule selects the beta branch near the range boundary") {
  // mu = 0.1, sigma = 0.5: mu - 3 sigma < 0 forces the beta branch; the
  // fitted beta keeps every sample within [0, max].
  Rng rng(4);
  auto task = task_with(0.1, 0.5, 3.0, 40.0, DeltaRange{0.3, 0.3, 8.0, 3.0});
  const auto fit = beta_moment_match(0.1, 0.5, 3.0);
  // Infeasible variance for this mean: the fit must clamp.
  CHECK((fit.clamped || (fit.a > 0 && fit.b > 0)));
  Rng draw(5);
  for (int i = 0; i < 2000; ++i) {
    const double v = 3.0 * draw.beta(std::max(fit.a, 1e-6), std::max(fit.b, 1e-6));
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 3.0);
  }
}

TEST_CASE("every emitted trajectory satisfies the covering box under re-measurement") {
  Rng rng(6);
  const auto task = task_with(1.2, 0.15, 1.2, 35.0, DeltaRange{0.3, 0.2, 2.0, 3.0});
  for (int i = 0; i < 100; ++i) {
    const auto trace = generate_trajectory(task, 30, 2.5, rng);
    std::vector<double> bw;
    for (const auto& s : trace.samples) bw.push_back(s.bandwidth_mbps);
    for (std::size_t start = 0; start + 8 <= bw.size(); ++start) {
      const auto ws = window_stats(std::span(bw).subspan(start, 8), task.d_prop_ms);
      REQUIRE(std::abs(ws.mu - task.mu) <= task.delta.mu);
      REQUIRE(std::abs(ws.sigma - task.sigma) <= task.delta.sigma);
      REQUIRE(std::abs(ws.omega - task.omega) <= task.delta.omega);
    }
    for (const auto& s : trace.samples) {
      REQUIRE(s.bandwidth_mbps >= 0.0);
      REQUIRE(s.bandwidth_mbps <= 2.5);
    }
  }
}

TEST_CASE("generation is deterministic under a fixed seed") {
  const auto task = task_with(1.0, 0.2, 1.5, 40.0, DeltaRange{0.3, 0.25, 2.5, 3.0});
  Rng a(99), b(99);
  const auto t1 = generate_trajectory(task, 40, 2.5, a);
  const auto t2 = generate_trajectory(task, 40, 2.5, b);
  REQUIRE(t1 == t2);
}

TEST_CASE("length below the stats window is rejected") {
  Rng rng(7);
  const auto task = task_with(1.0, 0.1, 1.0, 40.0);
  CHECK_THROWS_AS(generate_trajectory(task, 4, 2.5, rng), TrajectoryError);
}

TEST_CASE("impossible boxes exhaust the rejection budget") {
  Rng rng(8);
  // omega center far from anything an i.i.d. Gaussian pool can produce
  // inside a tiny tolerance box.
  auto task = task_with(1.0, 0.01, 50.0, 40.0, DeltaRange{0.2, 0.2, 2.0, 3.0});
  TraceGenConfig cfg;
  cfg.perm_budget = 20;
  cfg.pool_budget = 5;
  CHECK_THROWS_AS(generate_trajectory(task, 20, 2.5, rng, cfg), TrajectoryError);
}
