#include "etmapg/learners/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "etmapg/errors.hpp"
#include "etmapg/numerics/init.hpp"

namespace etmapg {

namespace {

constexpr double kStdFloor = 1e-8;

template <typename T>
std::vector<T> gather(std::span<const T> src, std::span<const std::size_t> rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(src[r]);
  return out;
}

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> rows, std::size_t block = 1) {
  const std::size_t c = src.cols();
  std::vector<double> v;
  v.reserve(rows.size() * block * c);
  const auto all = src.values();
  for (std::size_t r : rows) {
    const auto first = all.begin() + static_cast<std::ptrdiff_t>(r * block * c);
    v.insert(v.end(), first, first + static_cast<std::ptrdiff_t>(block * c));
  }
  return Tensor::matrix(rows.size() * block, c, std::move(v));
}

Var column(Tape& tape, std::span<const double> values) {
  return tape.constant(Tensor::matrix(values.size(), 1, {values.begin(), values.end()}));
}

Var entropy_term(const BatchEvaluation& eval, bool learn_trigger, double& value) {
  Var e = mean(eval.action_entropy);
  if (learn_trigger) e = add(e, mean(eval.trigger_entropy));
  value = e.item();
  return e;
}

Var value_term(const BatchEvaluation& eval, std::span<const double> returns, double& value) {
  Tape& tape = eval.values.tape();
  const Var v = mean(square(sub(eval.values, column(tape, returns))));
  value = v.item();
  return v;
}

}  // namespace

std::string_view algo_name(Algo a) {
  switch (a) {
    case Algo::kIppo: return "ippo";
    case Algo::kMappo: return "mappo";
    case Algo::kIa2c: return "ia2c";
  }
  return "unknown";
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kTt: return "tt";
    case Variant::kEt: return "et";
    case Variant::kAet: return "aet";
  }
  return "unknown";
}

Algo parse_algo(std::string_view name) {
  for (Algo a : {Algo::kIppo, Algo::kMappo, Algo::kIa2c}) {
    if (algo_name(a) == name) return a;
  }
  throw ConfigError("unknown algorithm '" + std::string(name) + "' (valid: ippo, mappo, ia2c)");
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::kTt, Variant::kEt, Variant::kAet}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) + "' (valid: tt, et, aet)");
}

void TrainConfig::validate() const {
  if (!(psi >= 0.0)) throw ConfigError("trigger penalty psi must be >= 0");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("discount gamma must lie in [0, 1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("trace parameter lambda must lie in [0, 1]");
  if (!(clip > 0.0)) throw ConfigError("clip range must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (minibatch == 0) throw ConfigError("minibatch size must be positive");
  if (horizon == 0) throw ConfigError("rollout horizon must be positive");
  if (parallel_episodes == 0) throw ConfigError("parallel episode count must be positive");
  if (!(entropy_coef >= 0.0) || !(value_coef >= 0.0)) throw ConfigError("loss coefficients must be >= 0");
  if (std::isnan(max_grad_norm)) throw ConfigError("max_grad_norm must be a number");
}

// ---- critic ----------------------------------------------------------------

Critic::Critic(std::size_t input_dim, std::size_t hidden) : input_dim_(input_dim) {
  if (input_dim == 0 || hidden == 0) throw ConfigError("critic: input and hidden widths must be positive");
  params_.add("trunk.0.weight", Tensor::matrix(input_dim, hidden));
  params_.add("trunk.0.bias", Tensor::vector(std::vector<double>(hidden, 0.0)));
  params_.add("trunk.1.weight", Tensor::matrix(hidden, hidden));
  params_.add("trunk.1.bias", Tensor::vector(std::vector<double>(hidden, 0.0)));
  params_.add("value_head.weight", Tensor::matrix(hidden, 1));
  params_.add("value_head.bias", Tensor::vector({0.0}));
}

Critic::Critic(std::size_t input_dim, std::size_t hidden, Rng& init_rng) : Critic(input_dim, hidden) {
  params_.value("trunk.0.weight") = glorot_uniform(input_dim, hidden, init_rng);
  params_.value("trunk.1.weight") = glorot_uniform(hidden, hidden, init_rng);
  params_.value("value_head.weight") = glorot_uniform(hidden, 1, init_rng);
}

Var Critic::forward(Tape& tape, const Var& inputs) const {
  if (inputs.cols() != input_dim_) {
    throw ConfigError("critic: input row has " + std::to_string(inputs.cols()) + " entries, expected " +
                      std::to_string(input_dim_));
  }
  Var h = tanh(affine(inputs, tape.param(params_, "trunk.0.weight"), tape.param(params_, "trunk.0.bias")));
  h = tanh(affine(h, tape.param(params_, "trunk.1.weight"), tape.param(params_, "trunk.1.bias")));
  return affine(h, tape.param(params_, "value_head.weight"), tape.param(params_, "value_head.bias"));
}

// ---- buffer ----------------------------------------------------------------

RolloutBuffer RolloutBuffer::allocate(std::size_t horizon, std::size_t slots, std::size_t feature_dim,
                                      std::size_t critic_dim, std::size_t message_slots,
                                      std::size_t message_dim) {
  if (horizon == 0 || slots == 0) throw ConfigError("rollout buffer: horizon and slots must be positive");
  RolloutBuffer b;
  b.horizon = horizon;
  b.slots = slots;
  const std::size_t n = horizon * slots;
  b.features = Tensor::matrix(n, feature_dim);
  b.critic_inputs = Tensor::matrix(n, critic_dim);
  b.message_slots = message_slots;
  if (message_slots > 0) {
    b.messages = Tensor::matrix(n * message_slots, message_dim);
    b.message_mask = Tensor::matrix(n, message_slots);
  }
  b.actions.assign(n, 0);
  b.triggers.assign(n, 0);
  b.logp_action.assign(n, 0.0);
  b.logp_trigger.assign(n, 0.0);
  b.values.assign(n, 0.0);
  b.rewards.assign(n, 0.0);
  b.shaped_rewards.assign(n, 0.0);
  b.dones.assign(n, 0);
  b.bootstrap_values.assign(slots, 0.0);
  return b;
}

void RolloutBuffer::validate() const {
  const std::size_t n = rows();
  auto check = [n](std::size_t got, const char* what) {
    if (got != n) {
      throw ContractViolation(std::string("rollout buffer: ") + what + " has " + std::to_string(got) +
                              " rows, expected " + std::to_string(n));
    }
  };
  check(features.rows(), "features");
  check(critic_inputs.rows(), "critic inputs");
  check(actions.size(), "actions");
  check(triggers.size(), "triggers");
  check(logp_action.size(), "action log-probs");
  check(logp_trigger.size(), "trigger log-probs");
  check(values.size(), "values");
  check(rewards.size(), "rewards");
  check(shaped_rewards.size(), "shaped rewards");
  check(dones.size(), "done flags");
  if (bootstrap_values.size() != slots) throw ContractViolation("rollout buffer: one bootstrap value per slot");
  if (message_slots > 0) {
    check(message_mask.rows(), "message mask");
    if (messages.rows() != n * message_slots) throw ContractViolation("rollout buffer: message block size");
  }
}

// ---- advantages --------------------------------------------------------------

RolloutBuffer& shape_rewards(RolloutBuffer& buffer, double psi) {
  if (!(psi >= 0.0)) throw ConfigError("trigger penalty psi must be >= 0");
  buffer.shaped_rewards.resize(buffer.rewards.size());
  for (std::size_t k = 0; k < buffer.rewards.size(); ++k) {
    buffer.shaped_rewards[k] = buffer.rewards[k] - psi * static_cast<double>(buffer.triggers[k]);
  }
  return buffer;
}

std::vector<double> gae(std::span<const double> rewards, std::span<const double> values,
                        std::span<const std::uint8_t> dones, double bootstrap, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw ContractViolation("gae: trajectory fields differ in length");
  std::vector<double> adv(n);
  double next_value = bootstrap, next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double live = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * live * next_value - values[i];
    adv[i] = delta + gamma * lambda * live * next_adv;
    next_value = values[i];
    next_adv = adv[i];
  }
  return adv;
}

namespace {

template <typename PerSlot>
AdvantageEstimate per_slot(const RolloutBuffer& buffer, PerSlot&& estimate) {
  buffer.validate();
  AdvantageEstimate out;
  out.advantages.assign(buffer.rows(), 0.0);
  out.returns.assign(buffer.rows(), 0.0);
  std::vector<double> r(buffer.horizon), v(buffer.horizon);
  std::vector<std::uint8_t> d(buffer.horizon);
  for (std::size_t s = 0; s < buffer.slots; ++s) {
    for (std::size_t t = 0; t < buffer.horizon; ++t) {
      const std::size_t k = buffer.row(t, s);
      r[t] = buffer.shaped_rewards[k];
      v[t] = buffer.values[k];
      d[t] = buffer.dones[k];
    }
    const std::vector<double> a = estimate(r, v, d, buffer.bootstrap_values[s]);
    for (std::size_t t = 0; t < buffer.horizon; ++t) {
      const std::size_t k = buffer.row(t, s);
      out.advantages[k] = a[t];
      out.returns[k] = a[t] + v[t];
    }
  }
  return out;
}

}  // namespace

AdvantageEstimate td_lambda_advantage(const RolloutBuffer& buffer, double gamma, double lambda) {
  return per_slot(buffer, [&](const auto& r, const auto& v, const auto& d, double boot) {
    return gae(r, v, d, boot, gamma, lambda);
  });
}

AdvantageEstimate a2c_advantage(const RolloutBuffer& buffer, double gamma) {
  return per_slot(buffer, [&](const auto& r, const auto& v, const auto& d, double boot) {
    std::vector<double> a(r.size());
    for (std::size_t t = 0; t < r.size(); ++t) {
      const double next = t + 1 < r.size() ? v[t + 1] : boot;
      a[t] = r[t] + gamma * (d[t] ? 0.0 : next) - v[t];
    }
    return a;
  });
}

void normalize_advantages(std::span<double> advantages) {
  if (advantages.empty()) return;
  const double n = static_cast<double>(advantages.size());
  const double m = std::accumulate(advantages.begin(), advantages.end(), 0.0) / n;
  double var = 0.0;
  for (double a : advantages) var += (a - m) * (a - m);
  const double sd = std::max(std::sqrt(var / n), kStdFloor);
  for (double& a : advantages) a = (a - m) / sd;
}

double joint_logp(const RolloutBuffer& buffer, std::size_t row, bool learn_trigger) {
  if (!learn_trigger) return buffer.logp_action[row];
  return buffer.triggers[row] ? buffer.logp_action[row] + buffer.logp_trigger[row] : buffer.logp_trigger[row];
}

// ---- models ------------------------------------------------------------------

AgentModel::AgentModel(DualHeadPolicy p, Critic c, const AdamOptions& adam)
    : policy(std::move(p)), critic(std::move(c)) {
  optimizers.assign(stores().size(), Adam(adam));
}

std::vector<ParamStore*> AgentModel::stores() {
  std::vector<ParamStore*> out = policy.param_stores();
  out.push_back(&critic.params());
  return out;
}

void AgentModel::optimizer_step() {
  const std::vector<ParamStore*> s = stores();
  for (std::size_t i = 0; i < s.size(); ++i) optimizers[i].step(*s[i]);
}

void AgentModel::zero_grad() {
  for (ParamStore* s : stores()) s->zero_grad();
}

BatchEvaluation evaluate_minibatch(Tape& tape, const AgentModel& agent, const RolloutBuffer& buffer,
                                   std::span<const std::size_t> rows, bool learn_trigger) {
  const Var features = tape.constant(gather_rows(buffer.features, rows));
  DualHeadPolicy::Heads heads;
  if (agent.policy.config().attention) {
    if (buffer.message_slots == 0) throw ContractViolation("attention policy needs a buffer with message slots");
    const Var messages = tape.constant(gather_rows(buffer.messages, rows, buffer.message_slots));
    heads = agent.policy.forward_with_messages(tape, features, messages, gather_rows(buffer.message_mask, rows));
  } else {
    heads = agent.policy.forward(tape, features);
  }

  const std::vector<int> actions = gather<int>(buffer.actions, rows);
  const Var log_probs = log_softmax_rows(heads.action_logits);
  const Var logp_action = pick_cols(log_probs, actions);

  BatchEvaluation out;
  out.action_entropy = neg(sum_rows(mul(softmax_rows(heads.action_logits), log_probs)));

  const Var z = heads.trigger_logit;
  const Var ls_on = log_sigmoid(z);
  const Var ls_off = log_sigmoid(neg(z));
  out.trigger_entropy = neg(add(mul(sigmoid(z), ls_on), mul(sigmoid(neg(z)), ls_off)));

  if (learn_trigger) {
    std::vector<double> on, off;
    for (std::size_t r : rows) {
      on.push_back(buffer.triggers[r] ? 1.0 : 0.0);
      off.push_back(buffer.triggers[r] ? 0.0 : 1.0);
    }
    const Var on_v = column(tape, on), off_v = column(tape, off);
    const Var logp_trigger = add(mul(on_v, ls_on), mul(off_v, ls_off));
    out.logp_joint = add(mul(on_v, logp_action), logp_trigger);
  } else {
    out.logp_joint = logp_action;
  }

  out.values = agent.critic.forward(tape, tape.constant(gather_rows(buffer.critic_inputs, rows)));
  return out;
}

// ---- losses ------------------------------------------------------------------

Var ppo_surrogate(const Var& new_logp, std::span<const double> old_logp, std::span<const double> advantages,
                  double clip, double* clip_fraction, double* mean_ratio, std::span<const std::size_t> steps) {
  const std::size_t n = new_logp.rows();
  if (old_logp.size() != n || advantages.size() != n) {
    throw ContractViolation("ppo surrogate: log-prob and advantage batches differ in length");
  }
  Tape& tape = new_logp.tape();
  const Var ratio = exp(sub(new_logp, column(tape, old_logp)));
  const auto rho = ratio.value().values();
  std::size_t clipped = 0;
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (!std::isfinite(rho[k])) {
      const std::size_t at = steps.empty() ? k : steps[k];
      throw NumericError("non-finite probability ratio at step " + std::to_string(at));
    }
    if (std::abs(rho[k] - 1.0) > clip) ++clipped;
    total += rho[k];
  }
  if (clip_fraction) *clip_fraction = static_cast<double>(clipped) / static_cast<double>(n);
  if (mean_ratio) *mean_ratio = total / static_cast<double>(n);
  const Var adv = column(tape, advantages);
  const Var unclipped = mul(ratio, adv);
  const Var bounded = mul(clamp(ratio, 1.0 - clip, 1.0 + clip), adv);
  return neg(mean(minimum(unclipped, bounded)));
}

LossBreakdown ppo_loss(const BatchEvaluation& eval, std::span<const double> old_logp,
                       std::span<const double> advantages, std::span<const double> returns,
                       const TrainConfig& config, bool learn_trigger, std::span<const std::size_t> steps) {
  LossBreakdown out;
  const Var policy = ppo_surrogate(eval.logp_joint, old_logp, advantages, config.clip, &out.clip_fraction,
                                   &out.mean_ratio, steps);
  out.policy_loss = policy.item();
  const Var ent = entropy_term(eval, learn_trigger, out.entropy);
  const Var value = value_term(eval, returns, out.value_loss);
  out.total = add(sub(policy, scale(ent, config.entropy_coef)), scale(value, config.value_coef));
  return out;
}

LossBreakdown a2c_loss(const BatchEvaluation& eval, std::span<const double> advantages,
                       std::span<const double> returns, const TrainConfig& config, bool learn_trigger) {
  if (advantages.size() != eval.logp_joint.rows()) {
    throw ContractViolation("a2c loss: advantage batch differs in length");
  }
  LossBreakdown out;
  const Var policy = neg(mean(mul(eval.logp_joint, column(eval.logp_joint.tape(), advantages))));
  out.policy_loss = policy.item();
  out.mean_ratio = 1.0;
  const Var ent = entropy_term(eval, learn_trigger, out.entropy);
  const Var value = value_term(eval, returns, out.value_loss);
  out.total = add(sub(policy, scale(ent, config.entropy_coef)), scale(value, config.value_coef));
  return out;
}

// ---- update ------------------------------------------------------------------

std::vector<UpdateDiagnostics> update(std::vector<AgentModel>& agents, std::vector<RolloutBuffer>& buffers,
                                      const TrainConfig& config, Algo algo, bool learn_trigger,
                                      Rng& minibatch_rng) {
  config.validate();
  if (agents.size() != buffers.size()) throw ContractViolation("update: one buffer per agent required");
  std::vector<UpdateDiagnostics> diags;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    AgentModel& agent = agents[i];
    RolloutBuffer& buffer = buffers[i];
    buffer.validate();
    shape_rewards(buffer, config.psi);
    const bool a2c = algo == Algo::kIa2c;
    AdvantageEstimate est =
        a2c ? a2c_advantage(buffer, config.gamma) : td_lambda_advantage(buffer, config.gamma, config.lambda);
    normalize_advantages(est.advantages);

    const std::size_t n = buffer.rows();
    std::vector<double> old_logp(n);
    for (std::size_t k = 0; k < n; ++k) old_logp[k] = joint_logp(buffer, k, learn_trigger);

    UpdateDiagnostics d;
    d.agent = i;
    d.trigger_rate = static_cast<double>(std::accumulate(buffer.triggers.begin(), buffer.triggers.end(), 0L)) /
                     static_cast<double>(n);
    std::size_t batches = 0;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const int epochs = a2c ? 1 : config.epochs;
    for (int epoch = 0; epoch < epochs; ++epoch) {
      for (std::size_t k = n; k > 1; --k) std::swap(order[k - 1], order[minibatch_rng.below(k)]);
      for (std::size_t start = 0; start < n; start += config.minibatch) {
        const std::span<const std::size_t> rows(order.data() + start, std::min(config.minibatch, n - start));
        std::vector<std::size_t> steps;
        for (std::size_t r : rows) steps.push_back(r / buffer.slots);
        const std::vector<double> adv = gather<double>(est.advantages, rows);
        const std::vector<double> ret = gather<double>(est.returns, rows);

        Tape tape;
        const BatchEvaluation eval = evaluate_minibatch(tape, agent, buffer, rows, learn_trigger);
        const LossBreakdown loss =
            a2c ? a2c_loss(eval, adv, ret, config, learn_trigger)
                : ppo_loss(eval, gather<double>(old_logp, rows), adv, ret, config, learn_trigger, steps);
        if (!std::isfinite(loss.total.item())) {
          throw NumericError("agent " + std::to_string(i) + ": non-finite loss in minibatch starting at step " +
                             std::to_string(steps.front()));
        }
        agent.zero_grad();
        tape.backward(loss.total);
        if (config.max_grad_norm > 0.0) clip_gradient_norm(agent.stores(), config.max_grad_norm);
        agent.optimizer_step();

        d.policy_loss += loss.policy_loss;
        d.value_loss += loss.value_loss;
        d.entropy += loss.entropy;
        d.clip_fraction += loss.clip_fraction;
        d.mean_ratio += loss.mean_ratio;
        ++batches;
      }
    }
    const double b = static_cast<double>(batches);
    d.policy_loss /= b;
    d.value_loss /= b;
    d.entropy /= b;
    d.clip_fraction /= b;
    d.mean_ratio /= b;
    diags.push_back(d);
  }
  return diags;
}

}  // namespace etmapg
