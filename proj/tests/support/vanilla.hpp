#pragma once

// Plain independent PPO / A2C written against tape primitives only: action
// head log-probabilities, no trigger head, no reward shaping. The
// time-triggered learner must coincide with it.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "etmapg/learners/learners.hpp"
#include "oracles.hpp"

namespace vanilla {

using namespace etmapg;

struct Losses {
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
};

inline std::vector<double> advantages(const RolloutBuffer& b, double gamma, double lambda, bool one_step,
                                      std::vector<double>& returns) {
  std::vector<double> adv(b.rows());
  returns.assign(b.rows(), 0.0);
  for (std::size_t s = 0; s < b.slots; ++s) {
    std::vector<double> r, v;
    std::vector<std::uint8_t> d;
    for (std::size_t t = 0; t < b.horizon; ++t) {
      r.push_back(b.rewards[b.row(t, s)]);
      v.push_back(b.values[b.row(t, s)]);
      d.push_back(b.dones[b.row(t, s)]);
    }
    const auto a = oracle::gae_forward_sum(r, v, d, b.bootstrap_values[s], gamma, one_step ? 0.0 : lambda);
    for (std::size_t t = 0; t < b.horizon; ++t) {
      adv[b.row(t, s)] = a[t];
      returns[b.row(t, s)] = a[t] + v[t];
    }
  }
  const double n = static_cast<double>(adv.size());
  double m = 0.0, sq = 0.0;
  for (double a : adv) m += a;
  m /= n;
  for (double a : adv) sq += (a - m) * (a - m);
  const double sd = std::max(std::sqrt(sq / n), 1e-8);
  for (double& a : adv) a = (a - m) / sd;
  return adv;
}

// One update of one agent; `mb` must be the stream the learner would use.
inline Losses update(AgentModel& agent, const RolloutBuffer& b, const TrainConfig& cfg, Algo algo, Rng& mb) {
  const bool a2c = algo == Algo::kIa2c;
  std::vector<double> ret;
  const std::vector<double> adv = advantages(b, cfg.gamma, cfg.lambda, a2c, ret);
  std::vector<std::size_t> order(b.rows());
  std::iota(order.begin(), order.end(), 0);
  Losses sum;
  std::size_t batches = 0;
  const int epochs = a2c ? 1 : cfg.epochs;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[mb.below(k)]);
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch) {
      const std::size_t n = std::min(cfg.minibatch, order.size() - start);
      Tensor x = Tensor::matrix(n, b.features.cols());
      Tensor xc = Tensor::matrix(n, b.critic_inputs.cols());
      std::vector<int> acts;
      std::vector<double> old, a, g;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = order[start + i];
        for (std::size_t c = 0; c < x.cols(); ++c) x.at(i, c) = b.features.at(r, c);
        for (std::size_t c = 0; c < xc.cols(); ++c) xc.at(i, c) = b.critic_inputs.at(r, c);
        acts.push_back(b.actions[r]);
        old.push_back(b.logp_action[r]);
        a.push_back(adv[r]);
        g.push_back(ret[r]);
      }
      Tape tape;
      const auto heads = agent.policy.forward(tape, tape.constant(x));
      const Var lsm = log_softmax_rows(heads.action_logits);
      const Var logp = pick_cols(lsm, acts);
      const Var av = tape.constant(Tensor::matrix(n, 1, a));
      Var policy;
      if (a2c) {
        policy = neg(mean(mul(logp, av)));
      } else {
        const Var ratio = exp(sub(logp, tape.constant(Tensor::matrix(n, 1, old))));
        policy = neg(mean(minimum(mul(ratio, av), mul(clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), av))));
      }
      const Var entropy = mean(neg(sum_rows(mul(softmax_rows(heads.action_logits), lsm))));
      const Var value =
          mean(square(sub(agent.critic.forward(tape, tape.constant(xc)), tape.constant(Tensor::matrix(n, 1, g)))));
      const Var loss = add(sub(policy, scale(entropy, cfg.entropy_coef)), scale(value, cfg.value_coef));
      agent.zero_grad();
      tape.backward(loss);
      if (cfg.max_grad_norm > 0.0) clip_gradient_norm(agent.stores(), cfg.max_grad_norm);
      agent.optimizer_step();
      sum.policy += policy.item();
      sum.value += value.item();
      sum.entropy += entropy.item();
      ++batches;
    }
  }
  const double nb = static_cast<double>(batches);
  return Losses{sum.policy / nb, sum.value / nb, sum.entropy / nb};
}

// Largest absolute difference between two models' parameters.
inline double max_param_gap(const AgentModel& x, const AgentModel& y) {
  double worst = 0.0;
  auto cmp = [&worst](const ParamStore& p, const ParamStore& q) {
    for (const auto& [name, entry] : p.entries()) {
      const Tensor& other = q.value(name);
      for (std::size_t i = 0; i < other.size(); ++i) worst = std::max(worst, std::abs(other[i] - entry.value[i]));
    }
  };
  cmp(x.policy.params(), y.policy.params());
  cmp(x.critic.params(), y.critic.params());
  return worst;
}

}  // namespace vanilla
