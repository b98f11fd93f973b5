#include "etmapg/policy/policy.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "etmapg/errors.hpp"
#include "etmapg/numerics/init.hpp"

namespace etmapg {

namespace {

constexpr double kHeadGain = 0.01;

std::string dim_error(const char* what, std::size_t got, std::size_t want) {
  return std::string("policy: ") + what + " has " + std::to_string(got) + " entries, expected " +
         std::to_string(want);
}

}  // namespace

void PolicyConfig::validate() const {
  if (obs_dim == 0) throw ConfigError("policy: observation dimension must be positive");
  if (action_count == 0) throw ConfigError("policy: action count must be positive");
  if (hidden == 0) throw ConfigError("policy: hidden width must be positive");
  if (attention && (message_dim == 0 || heads == 0 || message_dim % heads != 0)) {
    throw ConfigError("policy: message dimension must be a positive multiple of the head count");
  }
}

DualHeadPolicy::DualHeadPolicy(const PolicyConfig& config) : config_(config) { build(); }

DualHeadPolicy::DualHeadPolicy(const PolicyConfig& config, Rng& init_rng) : config_(config) {
  build();
  const std::size_t in = config_.input_dim(), h = config_.hidden;
  params_.value("trunk.0.weight") = glorot_uniform(in, h, init_rng);
  params_.value("trunk.1.weight") = glorot_uniform(h, h, init_rng);
  params_.value("action_head.weight") = glorot_uniform(h, config_.action_count, init_rng, kHeadGain);
  params_.value("trigger_head.weight") = glorot_uniform(h, 1, init_rng, kHeadGain);
  if (config_.attention) {
    params_.value("embed.weight") = glorot_uniform(config_.obs_dim, config_.message_dim, init_rng);
    attention_->initialize(init_rng);
  }
}

void DualHeadPolicy::build() {
  config_.validate();
  const std::size_t in = config_.input_dim(), h = config_.hidden;
  params_.add("trunk.0.weight", Tensor::matrix(in, h));
  params_.add("trunk.0.bias", Tensor::vector(std::vector<double>(h, 0.0)));
  params_.add("trunk.1.weight", Tensor::matrix(h, h));
  params_.add("trunk.1.bias", Tensor::vector(std::vector<double>(h, 0.0)));
  params_.add("action_head.weight", Tensor::matrix(h, config_.action_count));
  params_.add("action_head.bias", Tensor::vector(std::vector<double>(config_.action_count, 0.0)));
  params_.add("trigger_head.weight", Tensor::matrix(h, 1));
  params_.add("trigger_head.bias", Tensor::vector({0.0}));
  if (config_.attention) {
    params_.add("embed.weight", Tensor::matrix(config_.obs_dim, config_.message_dim));
    params_.add("embed.bias", Tensor::vector(std::vector<double>(config_.message_dim, 0.0)));
    attention_.emplace(config_.message_dim, config_.heads);
  }
}

std::vector<ParamStore*> DualHeadPolicy::param_stores() {
  std::vector<ParamStore*> out{&params_};
  if (attention_) out.push_back(&attention_->params());
  return out;
}

void DualHeadPolicy::zero_heads() {
  for (const char* name : {"action_head.weight", "action_head.bias", "trigger_head.weight", "trigger_head.bias"}) {
    params_.value(name).fill(0.0);
  }
}

DualHeadPolicy::Heads DualHeadPolicy::forward(Tape& tape, const Var& inputs) const {
  if (inputs.cols() != config_.input_dim()) {
    throw ConfigError(dim_error("input row", inputs.cols(), config_.input_dim()));
  }
  Var h = tanh(affine(inputs, tape.param(params_, "trunk.0.weight"), tape.param(params_, "trunk.0.bias")));
  h = tanh(affine(h, tape.param(params_, "trunk.1.weight"), tape.param(params_, "trunk.1.bias")));
  return Heads{
      affine(h, tape.param(params_, "action_head.weight"), tape.param(params_, "action_head.bias")),
      affine(h, tape.param(params_, "trigger_head.weight"), tape.param(params_, "trigger_head.bias")),
  };
}

Var DualHeadPolicy::embed(Tape& tape, const Var& observations) const {
  if (!config_.attention) throw ContractViolation("policy: message embedding requires the attention variant");
  if (observations.cols() != config_.obs_dim) {
    throw ConfigError(dim_error("observation", observations.cols(), config_.obs_dim));
  }
  return tanh(affine(observations, tape.param(params_, "embed.weight"), tape.param(params_, "embed.bias")));
}

DualHeadPolicy::Heads DualHeadPolicy::forward_with_messages(Tape& tape, const Var& features,
                                                            const Var& messages,
                                                            const Tensor& mask) const {
  if (!config_.attention) throw ContractViolation("policy: messages require the attention variant");
  if (features.cols() != config_.feature_dim()) {
    throw ConfigError(dim_error("feature row", features.cols(), config_.feature_dim()));
  }
  const Var query = embed(tape, slice_cols(features, 0, config_.obs_dim));
  const Var context = attention_->forward(tape, query, messages, mask);
  const std::array<Var, 2> parts{features, context};
  return forward(tape, concat_cols(parts));
}

PolicyOutput DualHeadPolicy::forward(const PolicyInput& input) const {
  if (input.observation.size() != config_.obs_dim) {
    throw ConfigError(dim_error("observation", input.observation.size(), config_.obs_dim));
  }
  if (input.error.size() != config_.err_dim) {
    throw ConfigError(dim_error("error feature", input.error.size(), config_.err_dim));
  }
  if (input.held_action.size() != config_.action_count) {
    throw ConfigError(dim_error("held-action one-hot", input.held_action.size(), config_.action_count));
  }
  if (input.context.size() != config_.context_dim()) {
    throw ConfigError(dim_error("context", input.context.size(), config_.context_dim()));
  }
  std::vector<double> row;
  row.reserve(config_.input_dim());
  for (const auto* part : {&input.observation, &input.error, &input.held_action, &input.context}) {
    row.insert(row.end(), part->begin(), part->end());
  }
  const std::size_t width = row.size();
  Tape tape(false);
  const Heads heads = forward(tape, tape.constant(Tensor::matrix(1, width, std::move(row))));
  const auto logits = heads.action_logits.value().values();
  return PolicyOutput{{logits.begin(), logits.end()}, heads.trigger_logit.item()};
}

Message DualHeadPolicy::embed_message(int sender, std::span<const double> observation, long step) const {
  Tape tape(false);
  const Var e = embed(tape, tape.constant(Tensor::matrix(1, observation.size(), {observation.begin(), observation.end()})));
  const auto v = e.value().values();
  return Message{sender, {v.begin(), v.end()}, step};
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double z : logits) s += std::exp(z - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

double log_sigmoid(double z) { return -(std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z)))); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

HeadSample sample_heads(std::span<const double> action_logits, double trigger_logit, Rng& rng) {
  const std::vector<double> logp = log_softmax(action_logits);
  std::vector<double> probs(logp.size());
  for (std::size_t i = 0; i < logp.size(); ++i) probs[i] = std::exp(logp[i]);
  HeadSample s;
  s.action = static_cast<int>(rng.categorical(probs));
  s.logp_action = logp[static_cast<std::size_t>(s.action)];
  s.trigger = rng.uniform() < sigmoid(trigger_logit) ? 1 : 0;
  s.logp_trigger = s.trigger ? log_sigmoid(trigger_logit) : log_sigmoid(-trigger_logit);
  return s;
}

}  // namespace etmapg
