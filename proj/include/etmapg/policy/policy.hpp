#pragma once

#include <optional>
#include <span>
#include <vector>

#include "etmapg/numerics/param_store.hpp"
#include "etmapg/numerics/rng.hpp"
#include "etmapg/numerics/tape.hpp"
#include "etmapg/policy/attention.hpp"

namespace etmapg {

struct PolicyConfig {
  std::size_t obs_dim = 0;
  // Dimension of the error feature (the agent's physical state dimension).
  std::size_t err_dim = 0;
  std::size_t action_count = 0;
  std::size_t hidden = 64;
  // Message embedding + attention communication.
  bool attention = false;
  std::size_t message_dim = 32;
  std::size_t heads = 4;

  std::size_t context_dim() const { return attention ? message_dim : 0; }
  // observation | error | held-action one-hot
  std::size_t feature_dim() const { return obs_dim + err_dim + action_count; }
  std::size_t input_dim() const { return feature_dim() + context_dim(); }
  void validate() const;
};

// One decision-time input row. `context` is empty unless attention is enabled.
struct PolicyInput {
  std::vector<double> observation;
  std::vector<double> error;
  std::vector<double> held_action;
  std::vector<double> context;
};

struct PolicyOutput {
  std::vector<double> action_logits;
  double trigger_logit = 0.0;
};

struct HeadSample {
  int action = 0;
  int trigger = 0;
  double logp_action = 0.0;
  double logp_trigger = 0.0;
};

// Shared tanh trunk feeding a categorical action head and a Bernoulli trigger
// head (trigger = 1 means "resample now"). With attention enabled the policy
// also owns the message embedding (affine + tanh of the observation) and an
// AttentionBlock whose output is appended to the trunk input.
//
// Parameters, trunk: trunk.0.{weight,bias}, trunk.1.{weight,bias};
// heads: action_head.*, trigger_head.*; messaging: embed.*.
class DualHeadPolicy {
 public:
  struct Heads {
    Var action_logits;  // [B x action_count]
    Var trigger_logit;  // [B x 1]
  };

  // All parameters zero.
  explicit DualHeadPolicy(const PolicyConfig& config);
  // Glorot trunk/embedding; heads scaled down by 0.01 so the initial
  // distributions are near uniform.
  DualHeadPolicy(const PolicyConfig& config, Rng& init_rng);

  const PolicyConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  AttentionBlock* attention() { return attention_ ? &*attention_ : nullptr; }
  const AttentionBlock* attention() const { return attention_ ? &*attention_ : nullptr; }
  std::vector<ParamStore*> param_stores();

  void zero_heads();

  // inputs: [B x input_dim]
  Heads forward(Tape& tape, const Var& inputs) const;
  // observations: [B x obs_dim] -> [B x message_dim]
  Var embed(Tape& tape, const Var& observations) const;
  // features: [B x feature_dim]; messages/mask as AttentionBlock::forward.
  // The query source is the embedding of each row's observation columns.
  Heads forward_with_messages(Tape& tape, const Var& features, const Var& messages,
                              const Tensor& mask) const;

  PolicyOutput forward(const PolicyInput& input) const;
  Message embed_message(int sender, std::span<const double> observation, long step) const;

 private:
  void build();

  PolicyConfig config_;
  ParamStore params_;
  std::optional<AttentionBlock> attention_;
};

// Draws action ~ Categorical(softmax(action_logits)) and
// trigger ~ Bernoulli(sigmoid(trigger_logit)), in that order, from `rng`.
HeadSample sample_heads(std::span<const double> action_logits, double trigger_logit, Rng& rng);

std::vector<double> log_softmax(std::span<const double> logits);
double log_sigmoid(double z);
double sigmoid(double z);
std::size_t argmax(std::span<const double> values);

}  // namespace etmapg
