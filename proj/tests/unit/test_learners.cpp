#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "etmapg/errors.hpp"
#include "etmapg/learners/learners.hpp"
#include "etmapg/numerics/finite_diff.hpp"
#include "oracles.hpp"
#include "vanilla.hpp"

using namespace etmapg;

namespace {

PolicyConfig small_policy(bool attention = false) {
  PolicyConfig c;
  c.obs_dim = 2;
  c.err_dim = 1;
  c.action_count = 3;
  c.hidden = 8;
  c.attention = attention;
  c.message_dim = 8;
  c.heads = 2;
  return c;
}

AgentModel make_agent(std::uint64_t seed, double lr = 3e-4) {
  Rng rng(seed);
  DualHeadPolicy policy(small_policy(), rng);
  Critic critic(small_policy().feature_dim(), 8, rng);
  return AgentModel(std::move(policy), std::move(critic), AdamOptions{lr});
}

// Random trajectories whose stored log-probabilities come from `agent`, so the
// first PPO ratio is exactly 1.
RolloutBuffer random_buffer(const AgentModel& agent, std::size_t horizon, std::size_t slots, std::uint64_t seed) {
  const PolicyConfig& pc = agent.policy.config();
  RolloutBuffer b = RolloutBuffer::allocate(horizon, slots, pc.feature_dim(), pc.feature_dim());
  Rng rng(seed);
  for (double& v : b.features.values()) v = rng.uniform(-1, 1);
  b.critic_inputs = b.features;
  Tape tape(false);
  const DualHeadPolicy::Heads heads = agent.policy.forward(tape, tape.constant(b.features));
  const Var values = agent.critic.forward(tape, tape.constant(b.critic_inputs));
  for (std::size_t k = 0; k < b.rows(); ++k) {
    const auto logits = heads.action_logits.value().row(k);
    const double z = heads.trigger_logit.value().at(k, 0);
    b.actions[k] = static_cast<int>(rng.below(pc.action_count));
    b.triggers[k] = rng.uniform() < 0.5 ? 1 : 0;
    b.logp_action[k] = log_softmax(logits)[static_cast<std::size_t>(b.actions[k])];
    b.logp_trigger[k] = b.triggers[k] ? log_sigmoid(z) : log_sigmoid(-z);
    b.values[k] = values.value().at(k, 0);
    b.rewards[k] = rng.normal();
    b.dones[k] = rng.uniform() < 0.05 ? 1 : 0;
  }
  for (double& v : b.bootstrap_values) v = rng.normal();
  return b;
}

std::vector<std::size_t> all_rows(const RolloutBuffer& b) {
  std::vector<std::size_t> r(b.rows());
  std::iota(r.begin(), r.end(), 0);
  return r;
}

}  // namespace

TEST_CASE("names round-trip and unknown names are rejected") {
  for (Algo a : {Algo::kIppo, Algo::kMappo, Algo::kIa2c}) CHECK(parse_algo(algo_name(a)) == a);
  for (Variant v : {Variant::kTt, Variant::kEt, Variant::kAet}) CHECK(parse_variant(variant_name(v)) == v);
  CHECK_THROWS_AS(parse_algo("ppo"), ConfigError);
  CHECK_THROWS_AS(parse_variant("always"), ConfigError);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.psi = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.gamma = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.lambda = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.minibatch = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("reward shaping") {
  RolloutBuffer b = RolloutBuffer::allocate(2, 2, 1, 1);
  b.rewards = {1.0, 1.0, 0.0, -2.0};
  b.triggers = {1, 0, 1, 0};
  shape_rewards(b, 0.05);
  CHECK(b.shaped_rewards[0] == doctest::Approx(0.95));
  CHECK(b.shaped_rewards[1] == 1.0);
  CHECK(b.shaped_rewards[2] == doctest::Approx(-0.05));
  CHECK(b.shaped_rewards[3] == -2.0);
  CHECK_THROWS_AS(shape_rewards(b, -1.0), ConfigError);

  Rng rng(2);
  RolloutBuffer r = RolloutBuffer::allocate(50, 4, 1, 1);
  for (std::size_t k = 0; k < r.rows(); ++k) {
    r.rewards[k] = rng.normal();
    r.triggers[k] = rng.uniform() < 0.3 ? 1 : 0;
  }
  const double psi = 0.37;
  shape_rewards(r, psi);
  const double raw = std::accumulate(r.rewards.begin(), r.rewards.end(), 0.0);
  const double shaped = std::accumulate(r.shaped_rewards.begin(), r.shaped_rewards.end(), 0.0);
  const long n = std::accumulate(r.triggers.begin(), r.triggers.end(), 0L);
  CHECK(raw - shaped == doctest::Approx(psi * static_cast<double>(n)));
  shape_rewards(r, 0.0);
  CHECK(r.shaped_rewards == r.rewards);
}

TEST_CASE("gae: single step and lambda = 0") {
  const std::vector<double> r{1.0}, v{0.5};
  const std::vector<std::uint8_t> live{0}, end{1};
  CHECK(gae(r, v, live, 2.0, 0.9, 0.95)[0] == doctest::Approx(1.0 + 0.9 * 2.0 - 0.5));
  CHECK(gae(r, v, end, 2.0, 0.9, 0.95)[0] == doctest::Approx(0.5));

  Rng rng(5);
  std::vector<double> rr(30), vv(30);
  std::vector<std::uint8_t> dd(30, 0);
  for (std::size_t k = 0; k < 30; ++k) {
    rr[k] = rng.normal();
    vv[k] = rng.normal();
  }
  dd[11] = 1;
  const auto a = gae(rr, vv, dd, 0.3, 0.97, 0.0);
  for (std::size_t k = 0; k < 30; ++k) {
    const double next = k + 1 < 30 ? vv[k + 1] : 0.3;
    CHECK(a[k] == doctest::Approx(rr[k] + 0.97 * (dd[k] ? 0.0 : next) - vv[k]).epsilon(1e-14));
  }
}

TEST_CASE("gae matches the forward discounted residual sum") {
  Rng rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(200);
    std::vector<double> r(n), v(n);
    std::vector<std::uint8_t> d(n);
    for (std::size_t k = 0; k < n; ++k) {
      r[k] = rng.normal();
      v[k] = rng.normal();
      d[k] = rng.uniform() < 0.05 ? 1 : 0;
    }
    const double boot = rng.normal(), gamma = rng.uniform(0.5, 0.999), lambda = rng.uniform();
    const auto got = gae(r, v, d, boot, gamma, lambda);
    const auto ref = oracle::gae_forward_sum(r, v, d, boot, gamma, lambda);
    for (std::size_t k = 0; k < n; ++k) worst = std::max(worst, std::abs(got[k] - ref[k]));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("gae with lambda = 1 is the Monte Carlo return minus the baseline") {
  Rng rng(12);
  const std::size_t n = 40;
  std::vector<double> r(n), v(n);
  std::vector<std::uint8_t> d(n, 0);
  for (std::size_t k = 0; k < n; ++k) {
    r[k] = rng.normal();
    v[k] = rng.normal();
  }
  const double boot = 1.7, gamma = 0.95;
  const auto a = gae(r, v, d, boot, gamma, 1.0);
  for (std::size_t k = 0; k < n; ++k) {
    long double g = 0.0L, w = 1.0L;
    for (std::size_t l = k; l < n; ++l, w *= gamma) g += w * r[l];
    g += w * boot;
    CHECK(a[k] == doctest::Approx(static_cast<double>(g) - v[k]).epsilon(1e-12));
  }
}

TEST_CASE("buffer-level advantages and returns") {
  RolloutBuffer b = RolloutBuffer::allocate(3, 2, 1, 1);
  const double c = 2.0, gamma = 0.9;
  std::fill(b.values.begin(), b.values.end(), c);
  std::fill(b.bootstrap_values.begin(), b.bootstrap_values.end(), c);
  shape_rewards(b, 0.0);
  const AdvantageEstimate one = a2c_advantage(b, gamma);
  for (double a : one.advantages) CHECK(a == doctest::Approx(-(1.0 - gamma) * c));

  RolloutBuffer z = RolloutBuffer::allocate(1, 1, 1, 1);
  z.rewards = {4.0};
  z.dones = {1};
  shape_rewards(z, 0.0);
  CHECK(a2c_advantage(z, 0.99).advantages[0] == 4.0);
  CHECK(a2c_advantage(z, 0.99).returns[0] == 4.0);

  AgentModel agent = make_agent(1);
  RolloutBuffer rb = random_buffer(agent, 16, 3, 2);
  shape_rewards(rb, 0.1);
  const AdvantageEstimate td0 = td_lambda_advantage(rb, 0.97, 0.0);
  const AdvantageEstimate a2c = a2c_advantage(rb, 0.97);
  for (std::size_t k = 0; k < rb.rows(); ++k) {
    CHECK(td0.advantages[k] == doctest::Approx(a2c.advantages[k]).epsilon(1e-14));
    CHECK(a2c.returns[k] == doctest::Approx(a2c.advantages[k] + rb.values[k]).epsilon(1e-14));
  }

  const AdvantageEstimate td = td_lambda_advantage(rb, 0.97, 0.9);
  for (std::size_t s = 0; s < rb.slots; ++s) {
    std::vector<double> r, v;
    std::vector<std::uint8_t> d;
    for (std::size_t t = 0; t < rb.horizon; ++t) {
      r.push_back(rb.shaped_rewards[rb.row(t, s)]);
      v.push_back(rb.values[rb.row(t, s)]);
      d.push_back(rb.dones[rb.row(t, s)]);
    }
    const auto ref = oracle::gae_forward_sum(r, v, d, rb.bootstrap_values[s], 0.97, 0.9);
    for (std::size_t t = 0; t < rb.horizon; ++t) CHECK(td.advantages[rb.row(t, s)] == doctest::Approx(ref[t]).epsilon(1e-12));
  }

  RolloutBuffer bad = rb;
  bad.values.pop_back();
  CHECK_THROWS_AS(td_lambda_advantage(bad, 0.9, 0.9), ContractViolation);
}

TEST_CASE("advantage normalization") {
  std::vector<double> a{1.0, 3.0, -2.0, 7.0, 0.5};
  const auto best = std::max_element(a.begin(), a.end()) - a.begin();
  normalize_advantages(a);
  CHECK(std::max_element(a.begin(), a.end()) - a.begin() == best);
  const double m = std::accumulate(a.begin(), a.end(), 0.0) / 5.0;
  double var = 0.0;
  for (double x : a) var += (x - m) * (x - m);
  CHECK(m == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(var / 5.0 == doctest::Approx(1.0));

  std::vector<double> flat(4, 3.0);
  normalize_advantages(flat);
  for (double x : flat) CHECK(x == 0.0);
  std::vector<double> none;
  normalize_advantages(none);
}

TEST_CASE("joint log-probability crediting") {
  RolloutBuffer b = RolloutBuffer::allocate(2, 1, 1, 1);
  b.triggers = {1, 0};
  b.logp_action = {-0.5, -0.7};
  b.logp_trigger = {-0.2, -0.3};
  CHECK(joint_logp(b, 0, true) == doctest::Approx(-0.7));
  CHECK(joint_logp(b, 1, true) == doctest::Approx(-0.3));
  CHECK(joint_logp(b, 0, false) == -0.5);
  CHECK(joint_logp(b, 1, false) == -0.7);

  AgentModel agent = make_agent(3);
  RolloutBuffer rb = random_buffer(agent, 8, 2, 4);
  Tape tape(false);
  const auto rows = all_rows(rb);
  for (bool learn : {true, false}) {
    const BatchEvaluation e = evaluate_minibatch(tape, agent, rb, rows, learn);
    for (std::size_t k = 0; k < rows.size(); ++k)
      CHECK(e.logp_joint.value().at(k, 0) == doctest::Approx(joint_logp(rb, k, learn)).epsilon(1e-12));
  }
}

TEST_CASE("ppo surrogate") {
  SUBCASE("ratio one gives minus the mean advantage") {
    Tape tape;
    const std::vector<double> old{-0.3, -1.2, -0.7}, adv{1.0, -2.0, 4.0};
    const Var lp = tape.constant(Tensor::matrix(3, 1, old));
    double frac = -1, ratio = -1;
    CHECK(ppo_surrogate(lp, old, adv, 0.2, &frac, &ratio).item() == doctest::Approx(-1.0));
    CHECK(frac == 0.0);
    CHECK(ratio == doctest::Approx(1.0));
  }
  SUBCASE("clipping") {
    Tape tape;
    const Var up = tape.constant(Tensor::matrix(1, 1, {std::log(1.5)}));
    CHECK(ppo_surrogate(up, std::vector<double>{0.0}, std::vector<double>{1.0}, 0.2).item() == doctest::Approx(-1.2));
    const Var down = tape.constant(Tensor::matrix(1, 1, {std::log(0.5)}));
    CHECK(ppo_surrogate(down, std::vector<double>{0.0}, std::vector<double>{-1.0}, 0.2).item() == doctest::Approx(0.8));
    // Pessimistic side: ratio above the band with negative advantage is not clipped.
    CHECK(ppo_surrogate(up, std::vector<double>{0.0}, std::vector<double>{-1.0}, 0.2).item() == doctest::Approx(1.5));
  }
  SUBCASE("random batches against the formula") {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = 1 + rng.below(64);
      std::vector<double> lp(n), old(n), adv(n);
      for (std::size_t k = 0; k < n; ++k) {
        lp[k] = rng.uniform(-3, 0);
        old[k] = lp[k] + rng.uniform(-0.5, 0.5);
        adv[k] = rng.normal();
      }
      long double ref = 0.0L;
      for (std::size_t k = 0; k < n; ++k) {
        const long double rho = std::exp(static_cast<long double>(lp[k]) - old[k]);
        const long double c = std::clamp(rho, 0.8L, 1.2L);
        ref += std::min(rho * adv[k], c * adv[k]);
      }
      Tape tape;
      const Var v = tape.constant(Tensor::matrix(n, 1, lp));
      CHECK(ppo_surrogate(v, old, adv, 0.2).item() == doctest::Approx(static_cast<double>(-ref / n)).epsilon(1e-12));
    }
  }
  SUBCASE("non-finite ratio names the step") {
    Tape tape;
    const Var v = tape.constant(Tensor::matrix(2, 1, {0.0, 1000.0}));
    const std::vector<std::size_t> steps{17, 42};
    try {
      ppo_surrogate(v, std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 1.0}, 0.2, nullptr, nullptr, steps);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("step 42") != std::string::npos);
    }
  }
}

TEST_CASE("at ratio one the surrogate gradient is the policy gradient") {
  AgentModel agent = make_agent(7);
  RolloutBuffer rb = random_buffer(agent, 8, 4, 8);
  const auto rows = all_rows(rb);
  Rng rng(9);
  std::vector<double> adv(rows.size()), old(rows.size());
  for (double& a : adv) a = rng.normal();
  for (std::size_t k = 0; k < rows.size(); ++k) old[k] = joint_logp(rb, k, true);

  auto gradient = [&](bool surrogate) {
    agent.zero_grad();
    Tape tape;
    const BatchEvaluation e = evaluate_minibatch(tape, agent, rb, rows, true);
    const Var loss = surrogate
                         ? ppo_surrogate(e.logp_joint, old, adv, 0.2)
                         : neg(mean(mul(e.logp_joint, tape.constant(Tensor::matrix(adv.size(), 1, adv)))));
    tape.backward(loss);
    std::vector<double> g;
    for (const auto& [name, entry] : agent.policy.params().entries()) {
      for (double x : entry.grad.values()) g.push_back(x);
    }
    return g;
  };
  const auto a = gradient(true), b = gradient(false);
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst < 1e-12);
}

TEST_CASE("losses pass finite-difference checks") {
  AgentModel agent = make_agent(13);
  RolloutBuffer rb = random_buffer(agent, 6, 2, 14);
  const auto rows = all_rows(rb);
  Rng rng(15);
  std::vector<double> adv(rows.size()), ret(rows.size()), old(rows.size());
  for (double& a : adv) a = rng.normal();
  for (double& r : ret) r = rng.normal();
  for (std::size_t k = 0; k < rows.size(); ++k) old[k] = joint_logp(rb, k, true) + rng.uniform(-0.1, 0.1);
  TrainConfig cfg;

  for (bool learn : {true, false}) {
    const double a2c = finite_diff_check(
        [&](Tape& tape, ParamStore&) {
          return a2c_loss(evaluate_minibatch(tape, agent, rb, rows, learn), adv, ret, cfg, learn).total;
        },
        agent.policy.params(), 1e-6);
    CHECK(a2c < 1e-6);
    const double critic = finite_diff_check(
        [&](Tape& tape, ParamStore&) {
          return a2c_loss(evaluate_minibatch(tape, agent, rb, rows, learn), adv, ret, cfg, learn).total;
        },
        agent.critic.params(), 1e-6);
    CHECK(critic < 1e-6);
  }
  const double ppo = finite_diff_check(
      [&](Tape& tape, ParamStore&) {
        return ppo_loss(evaluate_minibatch(tape, agent, rb, rows, true), old, adv, ret, cfg, true).total;
      },
      agent.policy.params(), 1e-6);
  CHECK(ppo < 1e-6);
}

TEST_CASE("critic") {
  Critic zero(4, 8);
  Tape tape(false);
  const Var v = zero.forward(tape, tape.constant(Tensor::matrix(3, 4, 1.0)));
  CHECK(v.rows() == 3);
  CHECK(v.cols() == 1);
  for (double x : v.value().values()) CHECK(x == 0.0);
  CHECK_THROWS_AS(zero.forward(tape, tape.constant(Tensor::matrix(3, 5, 1.0))), ConfigError);
  CHECK_THROWS_AS(Critic(0, 8), ConfigError);
}

TEST_CASE("zero advantages leave the policy untouched") {
  AgentModel agent = make_agent(31);
  RolloutBuffer rb = random_buffer(agent, 16, 4, 32);
  std::fill(rb.rewards.begin(), rb.rewards.end(), 0.0);
  std::fill(rb.values.begin(), rb.values.end(), 0.0);
  std::fill(rb.bootstrap_values.begin(), rb.bootstrap_values.end(), 0.0);
  TrainConfig cfg;
  cfg.psi = 0.0;
  cfg.entropy_coef = 0.0;
  cfg.minibatch = 16;
  const ParamStore before = agent.policy.params();
  const ParamStore critic_before = agent.critic.params();
  std::vector<AgentModel> agents;
  agents.push_back(std::move(agent));
  std::vector<RolloutBuffer> buffers{rb};
  Rng mb(1);
  for (Algo algo : {Algo::kIppo, Algo::kIa2c}) {
    update(agents, buffers, cfg, algo, true, mb);
    for (const auto& [name, entry] : before.entries()) CHECK(agents[0].policy.params().value(name) == entry.value);
  }
  bool critic_moved = false;
  for (const auto& [name, entry] : critic_before.entries())
    critic_moved |= !(agents[0].critic.params().value(name) == entry.value);
  CHECK(critic_moved);
}

TEST_CASE("update diagnostics and contract checks") {
  std::vector<AgentModel> agents;
  agents.push_back(make_agent(41));
  agents.push_back(make_agent(42));
  std::vector<RolloutBuffer> buffers{random_buffer(agents[0], 16, 4, 43), random_buffer(agents[1], 16, 4, 44)};
  TrainConfig cfg;
  cfg.minibatch = 32;
  Rng mb(2);
  const auto diags = update(agents, buffers, cfg, Algo::kIppo, true, mb);
  REQUIRE(diags.size() == 2);
  for (const UpdateDiagnostics& d : diags) {
    CHECK(std::isfinite(d.policy_loss));
    CHECK(d.value_loss >= 0.0);
    CHECK(d.clip_fraction >= 0.0);
    CHECK(d.clip_fraction <= 1.0);
    CHECK(d.trigger_rate >= 0.0);
    CHECK(d.trigger_rate <= 1.0);
  }
  std::vector<RolloutBuffer> one{buffers[0]};
  CHECK_THROWS_AS(update(agents, one, cfg, Algo::kIppo, true, mb), ContractViolation);
  cfg.gamma = 1.0;
  CHECK_THROWS_AS(update(agents, buffers, cfg, Algo::kIppo, true, mb), ConfigError);
}

TEST_CASE("time-triggered update equals plain PPO / A2C") {
  for (Algo algo : {Algo::kIppo, Algo::kMappo, Algo::kIa2c}) {
    CAPTURE(algo_name(algo));
    TrainConfig cfg;
    cfg.psi = 0.0;
    cfg.minibatch = 24;
    cfg.epochs = 3;
    cfg.learning_rate = 1e-3;
    const std::size_t agents_n = 2;
    std::vector<AgentModel> lib, ref;
    std::vector<RolloutBuffer> buffers;
    for (std::size_t i = 0; i < agents_n; ++i) {
      AgentModel probe = make_agent(60 + i, cfg.learning_rate);
      RolloutBuffer rb = random_buffer(probe, 16, 6, 70 + i);
      std::fill(rb.triggers.begin(), rb.triggers.end(), 1);
      buffers.push_back(rb);
    }
    if (algo == Algo::kMappo) {
      // Centralized critic input: every agent's features side by side.
      const std::size_t f = buffers[0].features.cols();
      Tensor joint = Tensor::matrix(buffers[0].rows(), f * agents_n);
      for (std::size_t r = 0; r < joint.rows(); ++r)
        for (std::size_t i = 0; i < agents_n; ++i)
          for (std::size_t c = 0; c < f; ++c) joint.at(r, i * f + c) = buffers[i].features.at(r, c);
      for (RolloutBuffer& b : buffers) b.critic_inputs = joint;
    }
    for (std::size_t i = 0; i < agents_n; ++i) {
      for (auto* team : {&lib, &ref}) {
        Rng rng(60 + i);
        DualHeadPolicy policy(small_policy(), rng);
        Critic critic(buffers[i].critic_inputs.cols(), 8, rng);
        team->emplace_back(std::move(policy), std::move(critic), AdamOptions{cfg.learning_rate});
      }
    }
    Rng mb_lib(53), mb_ref(53);
    const auto diags = update(lib, buffers, cfg, algo, false, mb_lib);
    for (std::size_t i = 0; i < agents_n; ++i) {
      const vanilla::Losses l = vanilla::update(ref[i], buffers[i], cfg, algo, mb_ref);
      CHECK(std::abs(diags[i].policy_loss - l.policy) < 1e-10);
      CHECK(std::abs(diags[i].value_loss - l.value) < 1e-10);
      CHECK(std::abs(diags[i].entropy - l.entropy) < 1e-10);
      CHECK(vanilla::max_param_gap(lib[i], ref[i]) < 1e-10);
    }
  }
}
