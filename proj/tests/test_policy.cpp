#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <vector>

#include "abrlab/policy.hpp"
#include "abrlab/rng.hpp"

using namespace abrlab;

TEST_CASE("empty history featurizes to all zeros") {
  const auto s = featurize({});
  REQUIRE(s.size() == 150);
  for (double v : s) CHECK(v == 0.0);
}

TEST_CASE("constant saturated throughput normalizes to ones") {
  std::vector<TickObservation> hist(30);
  for (auto& o : hist) o.throughput_mbps = 2.5;
  const auto s = featurize(hist);
  for (int k = 0; k < 30; ++k) CHECK(s[static_cast<std::size_t>(k)] == 1.0);
  for (int k = 30; k < 150; ++k) CHECK(s[static_cast<std::size_t>(k)] == 0.0);
}

TEST_CASE("shifting history by one step shifts channel contents by one slot") {
  Rng rng(1);
  std::vector<TickObservation> hist(31);
  for (auto& o : hist) {
    o.throughput_mbps = 2.5 * rng.uniform();
    o.target_mbps = 2.5 * rng.uniform();
    o.loss_ratio = rng.uniform();
    o.delay_ms = 200.0 * rng.uniform();
    o.jitter_ms = 50.0 * rng.uniform();
  }
  const auto a = featurize(std::span(hist).subspan(0, 30));
  const auto b = featurize(std::span(hist).subspan(1, 30));
  for (int c = 0; c < kChannels; ++c)
    for (int k = 0; k + 1 < kHistorySteps; ++k)
      CHECK(b[static_cast<std::size_t>(c * kHistorySteps + k)] ==
            a[static_cast<std::size_t>(c * kHistorySteps + k + 1)]);
}

TEST_CASE("short history is zero-padded at the old end") {
  std::vector<TickObservation> hist(5);
  for (auto& o : hist) o.throughput_mbps = 1.0;
  const auto s = featurize(hist);
  for (int k = 0; k < 25; ++k) CHECK(s[static_cast<std::size_t>(k)] == 0.0);
  for (int k = 25; k < 30; ++k) CHECK(s[static_cast<std::size_t>(k)] > 0.0);
}

TEST_CASE("zero weights give a uniform action distribution") {
  Rng rng(2);
  auto p = MlpParams::make({150, 8, 8, 8, 21}, Activation::kTanh, rng);
  for (auto& w : p.weights)
    for (auto& v : w) v = 0.0;
  for (auto& b : p.biases)
    for (auto& v : b) v = 0.0;
  std::vector<double> x(150, 0.3);
  const auto probs = policy_probs(p, x);
  for (double v : probs) CHECK(v == Catch::Approx(1.0 / 21.0));
}

TEST_CASE("softmax output is strictly positive and sums to one") {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    auto p = MlpParams::make({10, 6, 5}, Activation::kTanh, rng);
    std::vector<double> x(10);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    const auto probs = policy_probs(p, x);
    double sum = 0.0;
    for (double v : probs) {
      CHECK(v > 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("uniform logit shift leaves the distribution unchanged") {
  Rng rng(4);
  auto p = MlpParams::make({10, 6, 5}, Activation::kTanh, rng);
  std::vector<double> x(10, 0.5);
  const auto before = policy_probs(p, x);
  for (auto& v : p.biases.back()) v += 3.75;
  const auto after = policy_probs(p, x);
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(after[i] == Catch::Approx(before[i]).epsilon(1e-12));
}

TEST_CASE("non-finite weights are reported") {
  Rng rng(5);
  auto p = MlpParams::make({4, 3, 2}, Activation::kTanh, rng);
  p.weights[1][0] = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> x(4, 1.0);
  CHECK_THROWS_AS(mlp_forward(p, x), DataError);
}

TEST_CASE("action map scales exponentially and clamps to the ladder") {
  CHECK(apply_action(0.7, 0.0) == Catch::Approx(0.7));
  CHECK(apply_action(0.5, 2.0) == Catch::Approx(2.5));   // 0.5 e^2 = 3.694 clamped
  CHECK(apply_action(0.5, -2.0) == Catch::Approx(0.1));  // 0.5 e^-2 = 0.0677 clamped
  CHECK(apply_action(1.0, 0.5) == Catch::Approx(std::exp(0.5)));
  Rng rng(6);
  for (int i = 0; i < 500; ++i) {
    const double b = apply_action(rng.uniform(0.1, 2.5), rng.uniform(-2.0, 2.0));
    CHECK(b >= 0.1);
    CHECK(b <= 2.5);
  }
}

TEST_CASE("reward arithmetic") {
  CHECK(reward(0, 0, 0, 0, 0) == 0.0);
  CHECK(reward(1.0, 0.0, 50.0, 1.0, 1.0) == Catch::Approx(40.0));  // 50 - 200 * 0.05
  const double base = reward(1.0, 0.03, 50.0, 1.0, 0.8);
  CHECK(reward(1.0, 0.05, 50.0, 1.0, 0.8) == Catch::Approx(base - 1.0));  // +0.02 loss = -1.0
}

TEST_CASE("reward is linear in each argument") {
  const double r0 = reward(1.0, 0.1, 80.0, 1.2, 1.0);
  // two-point checks per argument
  CHECK(reward(2.0, 0.1, 80.0, 1.2, 1.0) - r0 == Catch::Approx(50.0));
  CHECK(reward(1.0, 0.2, 80.0, 1.2, 1.0) - r0 == Catch::Approx(-5.0));
  CHECK(reward(1.0, 0.1, 180.0, 1.2, 1.0) - r0 == Catch::Approx(-20.0));
  CHECK(reward(1.0, 0.1, 80.0, 1.4, 1.0) - r0 == Catch::Approx(-4.0));
}

TEST_CASE("cumulative reward horizons") {
  std::vector<double> ones(100, 1.0);
  CHECK(cumulative_reward(ones, 0, 0.0) == 1.0);
  CHECK(cumulative_reward(ones, 0, 1.0) == Catch::Approx(30.0));
  CHECK(cumulative_reward(ones, 0, 0.99) ==
        Catch::Approx((1.0 - std::pow(0.99, 30)) / 0.01).epsilon(1e-9));
  CHECK(cumulative_reward(ones, 98, 1.0) == 2.0);  // truncated at episode end
}

TEST_CASE("baseline fit on constant returns gives zero advantages") {
  Rng rng(7);
  std::vector<std::vector<double>> states;
  std::vector<double> returns;
  for (int i = 0; i < 50; ++i) {
    std::vector<double> s(6);
    for (auto& v : s) v = rng.uniform();
    states.push_back(s);
    returns.push_back(3.25);
  }
  const auto fit = baseline_fit(states, returns);
  for (const auto& s : states) CHECK(baseline_eval(fit.coeffs, s) == Catch::Approx(3.25));
}

TEST_CASE("baseline fit beats the zero map and centers advantages") {
  Rng rng(8);
  std::vector<std::vector<double>> states;
  std::vector<double> returns;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> s(6);
    for (auto& v : s) v = rng.uniform(-1.0, 1.0);
    const double y = 2.0 + 3.0 * s[0] - s[3] + 0.1 * rng.gaussian();
    states.push_back(s);
    returns.push_back(y);
  }
  const auto fit = baseline_fit(states, returns);
  double res_fit = 0.0, res_zero = 0.0, adv_sum = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const double p = baseline_eval(fit.coeffs, states[i]);
    res_fit += (returns[i] - p) * (returns[i] - p);
    res_zero += returns[i] * returns[i];
    adv_sum += returns[i] - p;
    scale += std::abs(returns[i]);
  }
  CHECK(res_fit <= res_zero);
  // with an intercept the residuals sum to zero
  CHECK(std::abs(adv_sum) <= 1e-6 * scale);
}

TEST_CASE("rank-deficient designs fall back to ridge") {
  std::vector<std::vector<double>> states;
  std::vector<double> returns;
  for (int i = 0; i < 20; ++i) {
    states.push_back({1.0, 1.0, 0.0});  // constant columns: collinear with intercept
    returns.push_back(static_cast<double>(i));
  }
  const auto fit = baseline_fit(states, returns);
  CHECK(fit.ridged);
  CHECK(std::isfinite(baseline_eval(fit.coeffs, states[0])));
}

TEST_CASE("parameter files round-trip with checksum protection") {
  Rng rng(9);
  auto p = MlpParams::make({150, 128, 64, 32, 21}, Activation::kTanh, rng);
  p.baseline[3] = 1.5;
  const auto path = (std::filesystem::temp_directory_path() / "abrlab_params.bin").string();
  p.save(path);
  const auto back = MlpParams::load(path);
  REQUIRE(back == p);

  // Flip one byte: the checksum must catch it.
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(100);
  char c;
  f.seekg(100);
  f.get(c);
  f.seekp(100);
  c = static_cast<char>(c ^ 0x40);
  f.put(c);
  f.close();
  CHECK_THROWS_AS(MlpParams::load(path), ParseError);
  std::filesystem::remove(path);
}
