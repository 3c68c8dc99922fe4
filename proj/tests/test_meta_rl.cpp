#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "abrlab/meta_rl.hpp"
#include "abrlab/rng.hpp"

using namespace abrlab;

namespace {

// Synthetic batch with externally fixed advantages (no baseline involved),
// so surrogate gradients can be checked against finite differences alone.
struct FixedBatch {
  std::vector<Transition> storage;
  PreparedBatch batch;
};

FixedBatch random_batch(Rng& rng, int dim, int n_actions, int n) {
  FixedBatch fb;
  fb.storage.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Transition t;
    t.state.resize(static_cast<std::size_t>(dim));
    for (auto& v : t.state) v = rng.uniform(-1.0, 1.0);
    t.action = static_cast<int>(rng.index(static_cast<std::size_t>(n_actions)));
    t.behavior_prob = 1.0;
    fb.storage.push_back(std::move(t));
  }
  for (auto& t : fb.storage) {
    fb.batch.samples.push_back(&t);
    fb.batch.advantages.push_back(4.0 * (rng.uniform() - 0.5));
  }
  return fb;
}

// Central finite differences over every parameter of the net.
void check_gradient(const MlpParams& params, const MlpParams& analytic,
                    const std::function<double(const MlpParams&)>& loss_of, double h = 1e-6) {
  auto check_one = [&](double* slot, double g_an) {
    const double keep = *slot;
    *slot = keep + h;
    const double up = loss_of(params);
    *slot = keep - h;
    const double dn = loss_of(params);
    *slot = keep;
    const double g_fd = (up - dn) / (2.0 * h);
    const double tol = 1e-4 * std::max({std::abs(g_fd), std::abs(g_an), 1e-3});
    if (std::abs(g_fd - g_an) > tol) {
      CAPTURE(g_fd, g_an);
      REQUIRE(std::abs(g_fd - g_an) <= tol);
    }
  };
  auto& mut = const_cast<MlpParams&>(params);
  for (std::size_t l = 0; l < mut.weights.size(); ++l) {
    for (std::size_t i = 0; i < mut.weights[l].size(); ++i)
      check_one(&mut.weights[l][i], analytic.weights[l][i]);
    for (std::size_t i = 0; i < mut.biases[l].size(); ++i)
      check_one(&mut.biases[l][i], analytic.biases[l][i]);
  }
}

LabConfig tiny_config() {
  LabConfig cfg;
  cfg.hidden1 = 16;
  cfg.hidden2 = 12;
  cfg.hidden3 = 8;
  cfg.episode_s = 16.0;
  cfg.episodes_k = 4;
  cfg.tasks_m = 2;
  cfg.inner_steps = 2;
  cfg.rounds = 1;
  return cfg;
}

NetworkState constant_task(double mu, double dprop) {
  NetworkState task;
  task.mu = mu;
  task.sigma = 0.0;
  task.omega = 0.0;
  task.d_prop_ms = dprop;
  task.delta = kDeltaFloor;
  return task;
}

}  // namespace

TEST_CASE("inner surrogate gradient matches finite differences") {
  Rng rng(101);
  for (int inst = 0; inst < 10; ++inst) {
    // tanh only: relu's kink makes central differences ill-posed.
    auto params = MlpParams::make({8, 6, 5, 4}, Activation::kTanh, rng);
    auto fb = random_batch(rng, 8, 4, 16);
    const auto sur = reinforce_surrogate(params, fb.batch);
    check_gradient(params, sur.grad,
                   [&](const MlpParams& p) { return reinforce_surrogate(p, fb.batch).loss; });
  }
}

TEST_CASE("ppo surrogate gradient matches finite differences") {
  Rng rng(202);
  for (int inst = 0; inst < 10; ++inst) {
    auto params = MlpParams::make({8, 6, 5, 4}, Activation::kTanh, rng);
    auto old_params = params;
    for (auto& w : old_params.weights)
      for (auto& v : w) v += 0.05 * rng.gaussian();
    auto fb = random_batch(rng, 8, 4, 16);
    const auto sur = ppo_surrogate(params, old_params, fb.batch, 0.2);
    check_gradient(params, sur.grad, [&](const MlpParams& p) {
      return ppo_surrogate(p, old_params, fb.batch, 0.2).loss;
    });
  }
}

TEST_CASE("zero advantages freeze the policy") {
  Rng rng(7);
  auto params = MlpParams::make({150, 8, 8, 8, 21}, Activation::kTanh, rng);
  LabConfig cfg;
  Episode ep;
  for (int i = 0; i < 40; ++i) {
    Transition t;
    t.state.assign(150, 0.1);
    t.action = i % 21;
    t.reward = 0.0;  // zero rewards -> zero returns -> zero advantages
    t.behavior_prob = 1.0 / 21.0;
    ep.steps.push_back(t);
  }
  std::vector<Episode> eps{ep};
  const auto next = policy_gradient_step(params, eps, 1e-3, cfg);
  CHECK(next == params);
}

TEST_CASE("a positive-advantage action becomes more likely after one step") {
  Rng rng(8);
  auto params = MlpParams::make({10, 8, 6, 5}, Activation::kTanh, rng);
  Transition t;
  t.state.assign(10, 0.5);
  t.action = 2;
  t.behavior_prob = 0.2;
  PreparedBatch batch;
  batch.samples.push_back(&t);
  batch.advantages.push_back(1.0);
  const auto sur = reinforce_surrogate(params, batch);
  MlpParams next = params;
  next.axpy(1e-3, sur.grad);
  const double before = policy_probs(params, t.state)[2];
  const double after = policy_probs(next, t.state)[2];
  CHECK(after > before);
}

TEST_CASE("identical old and new policies give ratio one and the plain gradient") {
  Rng rng(9);
  auto params = MlpParams::make({8, 6, 5, 4}, Activation::kTanh, rng);
  auto fb = random_batch(rng, 8, 4, 24);
  const auto ppo = ppo_surrogate(params, params, fb.batch, 0.2);
  const auto plain = reinforce_surrogate(params, fb.batch);
  // delta = 1 everywhere: the clip is inactive and the loss is the mean
  // advantage; the gradient coincides with the advantage-weighted one.
  double mean_adv = 0.0;
  for (double a : fb.batch.advantages) mean_adv += a;
  mean_adv /= static_cast<double>(fb.batch.advantages.size());
  CHECK(ppo.loss == Catch::Approx(mean_adv));
  for (std::size_t l = 0; l < ppo.grad.weights.size(); ++l)
    for (std::size_t i = 0; i < ppo.grad.weights[l].size(); ++i)
      CHECK(ppo.grad.weights[l][i] == Catch::Approx(plain.grad.weights[l][i]).margin(1e-12));
}

TEST_CASE("a saturated clip zeroes the gradient contribution") {
  Rng rng(10);
  auto params = MlpParams::make({6, 5, 3}, Activation::kTanh, rng);
  // Old policy strongly disfavors action 0 at this state: ratio > 1 + eps.
  auto old_params = params;
  old_params.biases.back()[0] -= 3.0;
  Transition t;
  t.state.assign(6, 0.4);
  t.action = 0;
  t.behavior_prob = 1.0;
  PreparedBatch batch;
  batch.samples.push_back(&t);
  batch.advantages.push_back(2.0);
  const double ratio = policy_probs(params, t.state)[0] / policy_probs(old_params, t.state)[0];
  REQUIRE(ratio > 1.2);
  const auto sur = ppo_surrogate(params, old_params, batch, 0.2);
  CHECK(sur.loss == Catch::Approx(1.2 * 2.0));  // clip(ratio) * advantage
  for (const auto& w : sur.grad.weights)
    for (double v : w) CHECK(v == 0.0);
  for (const auto& b : sur.grad.biases)
    for (double v : b) CHECK(v == 0.0);
}

TEST_CASE("clipped surrogate never exceeds the unclipped surrogate") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto params = MlpParams::make({8, 6, 4}, Activation::kTanh, rng);
    auto old_params = params;
    for (auto& w : old_params.weights)
      for (auto& v : w) v += 0.2 * rng.gaussian();
    auto fb = random_batch(rng, 8, 4, 32);
    const auto clipped = ppo_surrogate(params, old_params, fb.batch, 0.2);
    // Unclipped: eps so large the clip never binds.
    const auto unclipped = ppo_surrogate(params, old_params, fb.batch, 1e9);
    CHECK(clipped.loss <= unclipped.loss + 1e-12);
  }
}

TEST_CASE("with unbounded eps the gradient reduces to the ratio-weighted form") {
  Rng rng(12);
  auto params = MlpParams::make({8, 6, 4}, Activation::kTanh, rng);
  auto old_params = params;
  for (auto& w : old_params.weights)
    for (auto& v : w) v += 0.1 * rng.gaussian();
  auto fb = random_batch(rng, 8, 4, 24);
  const auto wide = ppo_surrogate(params, old_params, fb.batch, 1e9);
  // Reference: mean over samples of adv * ratio * grad log pi.
  MlpParams ref = MlpParams::zeros_like(params);
  const double n = static_cast<double>(fb.batch.samples.size());
  for (std::size_t i = 0; i < fb.batch.samples.size(); ++i) {
    const auto& t = *fb.batch.samples[i];
    const auto tr = mlp_forward(params, t.state);
    const double ratio = tr.probs[static_cast<std::size_t>(t.action)] /
                         mlp_forward(old_params, t.state).probs[static_cast<std::size_t>(t.action)];
    std::vector<double> dlogits(4);
    for (std::size_t j = 0; j < 4; ++j) {
      const double ind = static_cast<int>(j) == t.action ? 1.0 : 0.0;
      dlogits[j] = fb.batch.advantages[i] * ratio / n * (ind - tr.probs[j]);
    }
    mlp_backward(params, tr, dlogits, ref);
  }
  for (std::size_t l = 0; l < ref.weights.size(); ++l)
    for (std::size_t i = 0; i < ref.weights[l].size(); ++i)
      CHECK(wide.grad.weights[l][i] == Catch::Approx(ref.weights[l][i]).margin(1e-12));
}

TEST_CASE("inner adaptation with zero learning rate is the identity") {
  Rng rng(13);
  auto cfg = tiny_config();
  cfg.inner_lr = 0.0;
  auto theta0 = MlpParams::make({150, cfg.hidden1, cfg.hidden2, cfg.hidden3, 21},
                                Activation::kTanh, rng);
  Rng adapt_rng(5);
  const auto theta_i =
      inner_adapt(theta0, task_episode_sampler(constant_task(1.0, 40.0), cfg), cfg, adapt_rng);
  CHECK(theta_i == theta0);
}

TEST_CASE("inner adaptation leaves the initialization bitwise unchanged") {
  Rng rng(14);
  auto cfg = tiny_config();
  auto theta0 = MlpParams::make({150, cfg.hidden1, cfg.hidden2, cfg.hidden3, 21},
                                Activation::kTanh, rng);
  const auto snapshot = theta0;
  Rng adapt_rng(6);
  const auto theta_i =
      inner_adapt(theta0, task_episode_sampler(constant_task(1.2, 30.0), cfg), cfg, adapt_rng);
  CHECK(theta0 == snapshot);
  CHECK_FALSE(theta_i == theta0);
}

TEST_CASE("adaptation is bit-exactly reproducible under a fixed seed") {
  Rng rng(15);
  auto cfg = tiny_config();
  auto theta0 = MlpParams::make({150, cfg.hidden1, cfg.hidden2, cfg.hidden3, 21},
                                Activation::kTanh, rng);
  Rng r1(77), r2(77);
  const auto a = inner_adapt(theta0, task_episode_sampler(constant_task(0.9, 45.0), cfg), cfg, r1);
  const auto b = inner_adapt(theta0, task_episode_sampler(constant_task(0.9, 45.0), cfg), cfg, r2);
  CHECK(a == b);
}

TEST_CASE("round budget zero returns the initialization unchanged") {
  auto cfg = tiny_config();
  cfg.rounds = 0;
  TaskDistribution dist;
  dist.joint[{10, 0, 0, 0, 0, 0}] = 1.0;
  dist.dprop[8] = 1.0;
  const auto result = meta_train(cfg, dist, 42);
  CHECK(result.rounds.empty());
  Rng ref_rng(42);
  const auto expect = MlpParams::make({kStateDim, cfg.hidden1, cfg.hidden2, cfg.hidden3, 21},
                                      Activation::kTanh, ref_rng);
  CHECK(result.theta0 == expect);
}

TEST_CASE("outer rounds are deterministic and parallel-invariant") {
  auto cfg = tiny_config();
  TaskDistribution dist;
  dist.joint[{10, 1, 1, 0, 0, 0}] = 0.6;
  dist.joint[{16, 1, 1, 0, 0, 0}] = 0.4;
  dist.dprop[8] = 1.0;
  cfg.rounds = 2;
  const auto seq = meta_train(cfg, dist, 9, /*jobs=*/1);
  const auto par = meta_train(cfg, dist, 9, /*jobs=*/2);
  REQUIRE(seq.theta0 == par.theta0);
  REQUIRE(seq.rounds.size() == par.rounds.size());
  for (std::size_t i = 0; i < seq.rounds.size(); ++i)
    CHECK(seq.rounds[i].outer_loss == par.rounds[i].outer_loss);
}

TEST_CASE("skipped tasks are logged and do not poison the round") {
  auto cfg = tiny_config();
  cfg.reject_perms = 4;
  cfg.reject_pools = 2;
  TaskDistribution dist;
  // An omega bin far beyond what i.i.d. pools can realize: every draw fails.
  dist.joint[{10, 0, 60, 0, 0, 0}] = 1.0;
  dist.dprop[8] = 1.0;
  Rng rng(21);
  auto theta0 = MlpParams::make({kStateDim, cfg.hidden1, cfg.hidden2, cfg.hidden3, 21},
                                Activation::kTanh, rng);
  RoundReport report;
  const auto next = outer_update(theta0, dist, cfg, rng, report);
  CHECK(report.tasks_failed == cfg.tasks_m);
  CHECK(report.tasks_done == 0);
  CHECK(next == theta0);
}
