#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "etmapg/numerics/adam.hpp"
#include "etmapg/numerics/param_store.hpp"
#include "etmapg/numerics/rng.hpp"
#include "etmapg/numerics/tape.hpp"
#include "etmapg/policy/policy.hpp"

namespace etmapg {

enum class Algo { kIppo, kMappo, kIa2c };
// tt: time-triggered baseline (trigger forced to 1, no penalty);
// et: learned trigger head; aet: learned trigger head plus attention messages.
enum class Variant { kTt, kEt, kAet };

std::string_view algo_name(Algo a);
std::string_view variant_name(Variant v);
Algo parse_algo(std::string_view name);
Variant parse_variant(std::string_view name);

struct TrainConfig {
  double psi = 0.05;
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  double learning_rate = 3e-4;
  int epochs = 4;
  std::size_t minibatch = 256;
  std::size_t horizon = 128;
  std::size_t parallel_episodes = 8;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  // <= 0 disables clipping.
  double max_grad_norm = 0.5;

  void validate() const;
};

// Scalar value network: two tanh layers and a linear output.
// Parameters: trunk.0.*, trunk.1.*, value_head.*
class Critic {
 public:
  Critic(std::size_t input_dim, std::size_t hidden);
  Critic(std::size_t input_dim, std::size_t hidden, Rng& init_rng);

  std::size_t input_dim() const { return input_dim_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // [B x input_dim] -> [B x 1]
  Var forward(Tape& tape, const Var& inputs) const;

 private:
  std::size_t input_dim_;
  ParamStore params_;
};

// One agent's trajectories for an update: `horizon` steps of `slots` parallel
// episodes, stored step-major (row = t * slots + s).
struct RolloutBuffer {
  std::size_t horizon = 0;
  std::size_t slots = 0;
  // Decision features: observation | scaled error | held-action one-hot.
  Tensor features;
  Tensor critic_inputs;
  // Attention only: message_slots held messages per row and their mask.
  std::size_t message_slots = 0;
  Tensor messages;
  Tensor message_mask;
  std::vector<int> actions;
  std::vector<int> triggers;
  std::vector<double> logp_action;
  std::vector<double> logp_trigger;
  std::vector<double> values;
  std::vector<double> rewards;
  std::vector<double> shaped_rewards;
  std::vector<std::uint8_t> dones;
  // Critic value of the observation following the last stored step, per slot.
  std::vector<double> bootstrap_values;

  static RolloutBuffer allocate(std::size_t horizon, std::size_t slots, std::size_t feature_dim,
                                std::size_t critic_dim, std::size_t message_slots = 0,
                                std::size_t message_dim = 0);
  std::size_t rows() const { return horizon * slots; }
  std::size_t row(std::size_t t, std::size_t s) const { return t * slots + s; }
  // Throws ContractViolation when per-step fields disagree in length.
  void validate() const;
};

struct AdvantageEstimate {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// shaped = reward - psi * trigger at every row.
RolloutBuffer& shape_rewards(RolloutBuffer& buffer, double psi);

// Backward GAE recursion over one trajectory:
//   delta_k = r_k + gamma (1 - done_k) V_{k+1} - V_k
//   A_k     = delta_k + gamma lambda (1 - done_k) A_{k+1}
// with V_{K} = bootstrap.
std::vector<double> gae(std::span<const double> rewards, std::span<const double> values,
                        std::span<const std::uint8_t> dones, double bootstrap, double gamma, double lambda);

// TD(lambda) advantages over every slot of the buffer, using shaped rewards.
AdvantageEstimate td_lambda_advantage(const RolloutBuffer& buffer, double gamma, double lambda);
// One-step residual r_k + gamma (1 - done_k) V_{k+1} - V_k.
AdvantageEstimate a2c_advantage(const RolloutBuffer& buffer, double gamma);

// Mean 0, std 1; the std is floored at 1e-8.
void normalize_advantages(std::span<double> advantages);

// Joint log-probability credited for one row: action and trigger on
// trigger steps, trigger only otherwise; action only when the trigger is not
// learned (time-triggered baseline).
double joint_logp(const RolloutBuffer& buffer, std::size_t row, bool learn_trigger);

struct AgentModel {
  DualHeadPolicy policy;
  Critic critic;
  std::vector<Adam> optimizers;

  AgentModel(DualHeadPolicy p, Critic c, const AdamOptions& adam);
  std::vector<ParamStore*> stores();
  void optimizer_step();
  void zero_grad();
};

// Differentiable per-row quantities for a minibatch, each [B x 1].
struct BatchEvaluation {
  Var logp_joint;
  Var action_entropy;
  Var trigger_entropy;
  Var values;
};

BatchEvaluation evaluate_minibatch(Tape& tape, const AgentModel& agent, const RolloutBuffer& buffer,
                                   std::span<const std::size_t> rows, bool learn_trigger);

struct LossBreakdown {
  Var total;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double mean_ratio = 0.0;
};

// -mean(min(rho A, clip(rho, 1-eps, 1+eps) A)), rho = exp(new - old).
// Throws NumericError naming the first row with a non-finite ratio; `steps`
// optionally maps batch rows to rollout steps for that message.
Var ppo_surrogate(const Var& new_logp, std::span<const double> old_logp, std::span<const double> advantages,
                  double clip, double* clip_fraction = nullptr, double* mean_ratio = nullptr,
                  std::span<const std::size_t> steps = {});

// Clipped surrogate - entropy bonus + value_coef * value MSE. Advantages are
// used as given (normalize beforehand).
LossBreakdown ppo_loss(const BatchEvaluation& eval, std::span<const double> old_logp,
                       std::span<const double> advantages, std::span<const double> returns,
                       const TrainConfig& config, bool learn_trigger, std::span<const std::size_t> steps = {});

// -mean(logp_joint * A) - entropy bonus + value_coef * value MSE, with A
// entering as a constant.
LossBreakdown a2c_loss(const BatchEvaluation& eval, std::span<const double> advantages,
                       std::span<const double> returns, const TrainConfig& config, bool learn_trigger);

struct UpdateDiagnostics {
  std::size_t agent = 0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double mean_ratio = 0.0;
  double trigger_rate = 0.0;
};

// One learning update for every agent from its own buffer. Rewards are shaped
// with config.psi first. ippo/mappo: `epochs` passes of clipped PPO over
// shuffled minibatches with TD(lambda) advantages (the buffer's critic inputs
// decide local vs. centralized critic). ia2c: a single pass with one-step
// advantages and the A2C loss. Throws NumericError on a non-finite loss.
std::vector<UpdateDiagnostics> update(std::vector<AgentModel>& agents, std::vector<RolloutBuffer>& buffers,
                                      const TrainConfig& config, Algo algo, bool learn_trigger, Rng& minibatch_rng);

}  // namespace etmapg
