#include "etmapg/runner/runner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <numeric>

#include "etmapg/errors.hpp"
#include "etmapg/trigger/event_schedule.hpp"

namespace etmapg {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// One running episode: environment, event bookkeeping, the message board
// (latest message from each sender) and the slot's sampling stream.
struct Slot {
  std::unique_ptr<Environment> env;
  EventSchedule schedule;
  std::vector<std::optional<std::vector<double>>> board;
  Rng rng;
  std::vector<std::vector<double>> obs;
  std::vector<std::vector<double>> states;
  std::vector<double> returns;
  std::vector<long> trigger_counts;

  Slot(std::unique_ptr<Environment> e, Rng r)
      : env(std::move(e)), schedule(env->agent_count()), board(env->agent_count()), rng(r) {
    restart();
  }

  void restart() {
    const StepResult first = env->reset();
    obs = first.observations;
    states = first.states;
    schedule.reset();
    std::fill(board.begin(), board.end(), std::nullopt);
    returns.assign(env->agent_count(), 0.0);
    trigger_counts.assign(env->agent_count(), 0);
  }
};

// Per-agent decision features for a batch of slots.
struct AgentBatch {
  Tensor features;
  Tensor messages;
  Tensor mask;
  std::vector<double> action_logits;
  std::vector<double> trigger_logits;
  std::vector<double> embeddings;
};

std::vector<double> feature_row(const TeamSpec& spec, const Slot& slot, std::size_t agent) {
  std::vector<double> row;
  row.reserve(spec.policy.feature_dim());
  row.insert(row.end(), slot.obs[agent].begin(), slot.obs[agent].end());
  if (slot.schedule.has_event(agent)) {
    for (double e : slot.schedule.error_signal(agent, slot.states[agent])) row.push_back(e / spec.state_scale);
  } else {
    row.insert(row.end(), spec.err_dim, 0.0);
  }
  const int held = slot.schedule.has_event(agent) ? slot.schedule.held_action(agent) : -1;
  for (std::size_t a = 0; a < spec.actions; ++a) row.push_back(static_cast<int>(a) == held ? 1.0 : 0.0);
  return row;
}

std::vector<AgentBatch> forward_team(const TeamSpec& spec, const std::vector<const DualHeadPolicy*>& policies,
                                     std::span<Slot> slots) {
  const std::size_t S = slots.size(), N = spec.agents, F = spec.policy.feature_dim();
  const std::size_t D = spec.policy.message_dim;
  const bool attention = spec.policy.attention;
  std::vector<AgentBatch> out(N);
  for (std::size_t i = 0; i < N; ++i) {
    AgentBatch& b = out[i];
    std::vector<double> f;
    f.reserve(S * F);
    for (const Slot& slot : slots) {
      const std::vector<double> row = feature_row(spec, slot, i);
      f.insert(f.end(), row.begin(), row.end());
    }
    b.features = Tensor::matrix(S, F, std::move(f));

    Tape tape(false);
    const Var x = tape.constant(b.features);
    DualHeadPolicy::Heads heads;
    if (attention) {
      std::vector<double> msgs(S * N * D, 0.0), mask(S * N, 0.0);
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t j = 0; j < N; ++j) {
          const auto& m = slots[s].board[j];
          if (!m) continue;
          std::copy(m->begin(), m->end(), msgs.begin() + static_cast<std::ptrdiff_t>((s * N + j) * D));
          mask[s * N + j] = 1.0;
        }
      }
      b.messages = Tensor::matrix(S * N, D, std::move(msgs));
      b.mask = Tensor::matrix(S, N, std::move(mask));
      heads = policies[i]->forward_with_messages(tape, x, tape.constant(b.messages), b.mask);
      const auto e = policies[i]->embed(tape, slice_cols(x, 0, spec.obs_dim)).value().values();
      b.embeddings.assign(e.begin(), e.end());
    } else {
      heads = policies[i]->forward(tape, x);
    }
    const auto l = heads.action_logits.value().values();
    b.action_logits.assign(l.begin(), l.end());
    const auto z = heads.trigger_logit.value().values();
    b.trigger_logits.assign(z.begin(), z.end());
  }
  return out;
}

Tensor critic_batch(const TeamSpec& spec, const std::vector<AgentBatch>& batches, std::size_t agent, bool global) {
  if (!global) return batches[agent].features;
  const std::size_t S = batches[agent].features.rows(), F = spec.policy.feature_dim();
  std::vector<double> v;
  v.reserve(S * spec.critic_dim);
  for (std::size_t s = 0; s < S; ++s) {
    for (const AgentBatch& b : batches) {
      const auto row = b.features.row(s);
      v.insert(v.end(), row.begin(), row.begin() + static_cast<std::ptrdiff_t>(F));
    }
  }
  return Tensor::matrix(S, spec.critic_dim, std::move(v));
}

std::vector<double> critic_values(const Critic& critic, const Tensor& inputs) {
  Tape tape(false);
  const auto v = critic.forward(tape, tape.constant(inputs)).value().values();
  return {v.begin(), v.end()};
}

void copy_row(const Tensor& src, std::size_t src_row, Tensor& dst, std::size_t dst_row, std::size_t rows = 1) {
  const auto from = src.values();
  const std::size_t c = src.cols();
  auto to = dst.values();
  std::copy(from.begin() + static_cast<std::ptrdiff_t>(src_row * c),
            from.begin() + static_cast<std::ptrdiff_t>((src_row + rows) * c),
            to.begin() + static_cast<std::ptrdiff_t>(dst_row * c));
}

// Post a message for every agent that had an event at `step`; visible to
// everyone from the next decision on.
void post_messages(const TeamSpec& spec, Slot& slot, std::size_t s, long step,
                   const std::vector<AgentBatch>& batches) {
  const std::size_t D = spec.policy.message_dim;
  for (std::size_t i = 0; i < spec.agents; ++i) {
    if (slot.schedule.last_event(i) != step) continue;
    const auto& e = batches[i].embeddings;
    slot.board[i] = std::vector<double>(e.begin() + static_cast<std::ptrdiff_t>(s * D),
                                        e.begin() + static_cast<std::ptrdiff_t>((s + 1) * D));
  }
}

struct EpisodeRecord {
  long end_step = 0;
  std::vector<double> returns;
  std::vector<long> triggers;
  long length = 0;
  // Mean over agents of |first state component| at the last step.
  double final_abs_state = 0.0;
};

double mean_abs_first(const std::vector<std::vector<double>>& states) {
  double a = 0.0;
  for (const auto& s : states) a += std::abs(s[0]);
  return a / static_cast<double>(states.size());
}

double team_mean(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<const DualHeadPolicy*> policy_ptrs(const std::vector<AgentModel>& agents) {
  std::vector<const DualHeadPolicy*> p;
  for (const AgentModel& a : agents) p.push_back(&a.policy);
  return p;
}

// Fills one buffer per agent with `horizon` steps of every slot.
std::vector<EpisodeRecord> collect(const TeamSpec& spec, const ExperimentConfig& config,
                                   const std::vector<AgentModel>& agents, std::vector<Slot>& slots,
                                   std::vector<RolloutBuffer>& buffers, long& env_steps) {
  const std::size_t S = slots.size(), N = spec.agents;
  const bool global = config.algo == Algo::kMappo;
  const bool learn_trigger = config.learns_trigger();
  const auto policies = policy_ptrs(agents);
  std::vector<EpisodeRecord> finished;
  std::vector<int> joint(N);

  for (std::size_t t = 0; t < config.train.horizon; ++t) {
    const std::vector<AgentBatch> batches = forward_team(spec, policies, slots);
    std::vector<std::vector<double>> values(N);
    for (std::size_t i = 0; i < N; ++i) {
      const Tensor ci = critic_batch(spec, batches, i, global);
      values[i] = critic_values(agents[i].critic, ci);
      RolloutBuffer& buf = buffers[i];
      copy_row(batches[i].features, 0, buf.features, buf.row(t, 0), S);
      copy_row(ci, 0, buf.critic_inputs, buf.row(t, 0), S);
      if (spec.policy.attention) {
        copy_row(batches[i].messages, 0, buf.messages, buf.row(t, 0) * N, S * N);
        copy_row(batches[i].mask, 0, buf.message_mask, buf.row(t, 0), S);
      }
    }

    for (std::size_t s = 0; s < S; ++s) {
      Slot& slot = slots[s];
      const long step = slot.env->step_count();
      for (std::size_t i = 0; i < N; ++i) {
        const AgentBatch& b = batches[i];
        const std::span<const double> logits(b.action_logits.data() + s * spec.actions, spec.actions);
        HeadSample h = sample_heads(logits, b.trigger_logits[s], slot.rng);
        if (!learn_trigger) {
          h.trigger = 1;
          h.logp_trigger = 0.0;
        }
        joint[i] = slot.schedule.apply_trigger(i, step, h.trigger, h.action, slot.states[i]);
        RolloutBuffer& buf = buffers[i];
        const std::size_t k = buf.row(t, s);
        buf.actions[k] = h.action;
        buf.triggers[k] = h.trigger;
        buf.logp_action[k] = h.logp_action;
        buf.logp_trigger[k] = h.logp_trigger;
        buf.values[k] = values[i][s];
        slot.trigger_counts[i] += h.trigger;
      }
      const StepResult r = slot.env->step(joint);
      ++env_steps;
      for (std::size_t i = 0; i < N; ++i) {
        RolloutBuffer& buf = buffers[i];
        const std::size_t k = buf.row(t, s);
        buf.rewards[k] = r.rewards[i];
        buf.dones[k] = r.done ? 1 : 0;
        slot.returns[i] += r.rewards[i];
      }
      slot.obs = r.observations;
      slot.states = r.states;
      if (spec.policy.attention) post_messages(spec, slot, s, step, batches);
      if (r.done) {
        finished.push_back(EpisodeRecord{env_steps, slot.returns, slot.trigger_counts, slot.env->step_count(),
                                         mean_abs_first(r.states)});
        slot.restart();
      }
    }
  }

  const std::vector<AgentBatch> last = forward_team(spec, policies, slots);
  for (std::size_t i = 0; i < N; ++i) {
    buffers[i].bootstrap_values = critic_values(agents[i].critic, critic_batch(spec, last, i, global));
  }
  return finished;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace

TeamSpec team_spec(const ExperimentConfig& config) {
  const auto env = make_environment(config.env, 0, config.env_options);
  TeamSpec spec;
  spec.agents = env->agent_count();
  spec.obs_dim = env->obs_dim();
  spec.err_dim = env->state_dim();
  spec.actions = env->action_count();
  spec.state_scale = env->state_scale();
  spec.episode_limit = env->episode_limit();
  spec.policy.obs_dim = spec.obs_dim;
  spec.policy.err_dim = spec.err_dim;
  spec.policy.action_count = spec.actions;
  spec.policy.hidden = config.hidden;
  spec.policy.attention = config.variant == Variant::kAet;
  spec.policy.message_dim = config.message_dim;
  spec.policy.heads = config.heads;
  spec.policy.validate();
  const std::size_t f = spec.policy.feature_dim();
  spec.critic_dim = config.algo == Algo::kMappo ? f * spec.agents : f;
  return spec;
}

EvalResult evaluate_policies(const std::vector<DualHeadPolicy>& policies, EnvKind env_kind, const EnvOptions& options,
                             Variant variant, std::size_t episodes, std::uint64_t seed, std::size_t ma_window) {
  if (ma_window == 0) throw ConfigError("moving-average window must be positive");
  std::vector<Slot> slots;
  slots.emplace_back(make_environment(env_kind, derive_seed(seed, 0, StreamPurpose::kEvaluation), options),
                     Rng(seed, 1, StreamPurpose::kEvaluation));
  Slot& slot = slots.front();
  Environment& env = *slot.env;

  if (policies.size() != env.agent_count()) {
    throw ConfigError("checkpoint has " + std::to_string(policies.size()) + " agents, environment " +
                      std::string(env_name(env_kind)) + " has " + std::to_string(env.agent_count()));
  }
  TeamSpec spec;
  spec.agents = env.agent_count();
  spec.obs_dim = env.obs_dim();
  spec.err_dim = env.state_dim();
  spec.actions = env.action_count();
  spec.state_scale = env.state_scale();
  spec.episode_limit = env.episode_limit();
  spec.policy = policies.front().config();
  if (spec.policy.obs_dim != spec.obs_dim || spec.policy.err_dim != spec.err_dim ||
      spec.policy.action_count != spec.actions) {
    throw ConfigError("checkpoint policy does not match the observation/action shape of " +
                      std::string(env_name(env_kind)));
  }
  if (spec.policy.attention != (variant == Variant::kAet)) {
    throw ConfigError("variant " + std::string(variant_name(variant)) + " does not match the checkpoint policy");
  }
  std::vector<const DualHeadPolicy*> ptrs;
  for (const DualHeadPolicy& p : policies) ptrs.push_back(&p);

  const std::size_t N = spec.agents;
  const bool learn_trigger = variant != Variant::kTt;
  EvalResult result;
  result.episodes = episodes;
  result.episode_length = spec.episode_limit;
  result.agent_returns.assign(N, 0.0);
  std::vector<int> all_bits;
  std::vector<long> all_gaps;
  std::vector<int> joint(N);
  double abs_final = 0.0, v_final = 0.0;
  std::size_t increases = 0, pairs = 0;

  for (std::size_t ep = 0; ep < episodes; ++ep) {
    if (ep > 0) slot.restart();
    EpisodeTrace tr;
    tr.triggers.assign(N, {});
    tr.actions.assign(N, {});
    tr.returns.assign(N, 0.0);
    while (!env.done()) {
      const std::vector<AgentBatch> batches = forward_team(spec, ptrs, slots);
      const long step = env.step_count();
      for (std::size_t i = 0; i < N; ++i) {
        const std::span<const double> logits(batches[i].action_logits.data(), spec.actions);
        const int action = static_cast<int>(argmax(logits));
        const int trigger = learn_trigger ? (slot.rng.uniform() < sigmoid(batches[i].trigger_logits[0]) ? 1 : 0) : 1;
        joint[i] = slot.schedule.apply_trigger(i, step, trigger, action, slot.states[i]);
        // Recorded bits are realized events, so the forced step-0 event counts.
        tr.triggers[i].push_back(slot.schedule.last_event(i) == step ? 1 : 0);
        tr.actions[i].push_back(joint[i]);
      }
      const StepResult r = env.step(joint);
      for (std::size_t i = 0; i < N; ++i) tr.returns[i] += r.rewards[i];
      tr.rewards.push_back(r.rewards);
      tr.states.push_back(r.states);
      slot.obs = r.observations;
      slot.states = r.states;
      if (spec.policy.attention) post_messages(spec, slot, 0, step, batches);
    }
    for (std::size_t i = 0; i < N; ++i) {
      tr.events.push_back(slot.schedule.events(i));
      const std::vector<long> gaps = slot.schedule.inter_event_times(i);
      all_gaps.insert(all_gaps.end(), gaps.begin(), gaps.end());
      all_bits.insert(all_bits.end(), tr.triggers[i].begin(), tr.triggers[i].end());
      result.agent_returns[i] += tr.returns[i] / static_cast<double>(episodes);
    }
    result.mean_return += team_mean(tr.returns) / static_cast<double>(episodes);

    if (env_kind == EnvKind::kIntegrator) {
      std::vector<double> v;
      for (const auto& st : tr.states) {
        std::vector<double> x;
        for (const auto& s : st) x.push_back(s[0]);
        v.push_back(lyapunov(x));
      }
      for (const auto& s : tr.states.back()) abs_final += std::abs(s[0]) / static_cast<double>(episodes * N);
      v_final += v.back() / static_cast<double>(episodes);
      if (2 * ep >= episodes) {
        const std::vector<double> ma = moving_average(v, ma_window);
        for (std::size_t k = 0; k + 1 < ma.size(); ++k) {
          if (ma[k + 1] > ma[k]) ++increases;
        }
        pairs += ma.size() - 1;
      }
    }
    result.traces.push_back(std::move(tr));
  }

  if (episodes == 0) return result;
  const long tt_steps = static_cast<long>(all_bits.size());
  result.trigger_reduction = trigger_reduction(all_bits, tt_steps);
  result.trigger_rate = 1.0 - result.trigger_reduction;
  result.inter_event = inter_event_stats(all_gaps);
  if (env_kind == EnvKind::kIntegrator) {
    result.final_abs_state = abs_final;
    result.final_lyapunov = v_final;
    result.lyapunov_increase_fraction = pairs ? static_cast<double>(increases) / static_cast<double>(pairs) : 0.0;
  }
  return result;
}

json eval_to_json(const EvalResult& r) {
  return json{
      {"episodes", r.episodes},
      {"episode_length", r.episode_length},
      {"mean_return", r.mean_return},
      {"mean_step_reward", r.episodes ? r.mean_return / static_cast<double>(r.episode_length) : 0.0},
      {"agent_returns", r.agent_returns},
      {"trigger_rate", r.trigger_rate},
      {"trigger_reduction", r.trigger_reduction},
      {"inter_event_count", r.inter_event.count},
      {"inter_event_min", r.inter_event.min},
      {"inter_event_mean", r.inter_event.mean},
      {"inter_event_max", r.inter_event.max},
      {"final_abs_state", optional_json(r.final_abs_state)},
      {"lyapunov_final", optional_json(r.final_lyapunov)},
      {"lyapunov_ma_increase_fraction", optional_json(r.lyapunov_increase_fraction)},
  };
}

void write_eval_outputs(const fs::path& dir, const EvalResult& result, EnvKind env, std::size_t ma_window,
                        bool trace) {
  fs::create_directories(dir);
  {
    CsvWriter csv(dir / "events.csv", {"episode", "agent", "step", "inter_event", "action"});
    for (std::size_t ep = 0; ep < result.traces.size(); ++ep) {
      const EpisodeTrace& tr = result.traces[ep];
      for (std::size_t i = 0; i < tr.events.size(); ++i) {
        const auto& ev = tr.events[i];
        for (std::size_t j = 0; j < ev.size(); ++j) {
          csv.field(ep).field(i).field(ev[j]);
          if (j == 0) {
            csv.blank();
          } else {
            csv.field(ev[j] - ev[j - 1]);
          }
          csv.field(tr.actions[i][static_cast<std::size_t>(ev[j])]);
          csv.end_row();
        }
      }
    }
  }
  {
    CsvWriter csv(dir / "trigger_ma.csv", {"episode", "agent", "step", "trigger", "moving_avg"});
    for (std::size_t ep = 0; ep < result.traces.size(); ++ep) {
      const EpisodeTrace& tr = result.traces[ep];
      for (std::size_t i = 0; i < tr.triggers.size(); ++i) {
        const std::vector<double> ma = moving_avg_trigger(tr.triggers[i], ma_window);
        for (std::size_t k = 0; k < ma.size(); ++k) {
          csv.field(ep).field(i).field(k).field(tr.triggers[i][k]).field(ma[k]);
          csv.end_row();
        }
      }
    }
  }
  if (env == EnvKind::kIntegrator) {
    CsvWriter csv(dir / "lyapunov.csv", {"episode", "step", "V", "V_moving_avg"});
    for (std::size_t ep = 0; ep < result.traces.size(); ++ep) {
      std::vector<double> v;
      for (const auto& st : result.traces[ep].states) {
        std::vector<double> x;
        for (const auto& s : st) x.push_back(s[0]);
        v.push_back(lyapunov(x));
      }
      const std::vector<double> ma = moving_average(v, ma_window);
      for (std::size_t k = 0; k < v.size(); ++k) {
        csv.field(ep).field(k).field(v[k]).field(ma[k]);
        csv.end_row();
      }
    }
  }
  if (trace && !result.traces.empty()) {
    const std::size_t dims = result.traces.front().states.front().front().size();
    std::vector<std::string> header{"episode", "step", "agent", "action", "trigger", "reward"};
    for (std::size_t d = 0; d < dims; ++d) header.push_back("state_" + std::to_string(d));
    CsvWriter csv(dir / "trace.csv", header);
    for (std::size_t ep = 0; ep < result.traces.size(); ++ep) {
      const EpisodeTrace& tr = result.traces[ep];
      for (std::size_t k = 0; k < tr.states.size(); ++k) {
        for (std::size_t i = 0; i < tr.actions.size(); ++i) {
          csv.field(ep).field(k).field(i).field(tr.actions[i][k]).field(tr.triggers[i][k]).field(tr.rewards[k][i]);
          for (double x : tr.states[k][i]) csv.field(x);
          csv.end_row();
        }
      }
    }
  }
}

Checkpoint make_checkpoint(const ExperimentConfig& config, std::uint64_t seed,
                           const std::vector<AgentModel>& agents) {
  Checkpoint cp;
  const PolicyConfig& pc = agents.front().policy.config();
  cp.metadata = json{
      {"format", "etmapg-checkpoint-1"},
      {"env", env_name(config.env)},
      {"algo", algo_name(config.algo)},
      {"variant", variant_name(config.variant)},
      {"seed", seed},
      {"agents", agents.size()},
      {"policy",
       {{"obs_dim", pc.obs_dim},
        {"err_dim", pc.err_dim},
        {"action_count", pc.action_count},
        {"hidden", pc.hidden},
        {"attention", pc.attention},
        {"message_dim", pc.message_dim},
        {"heads", pc.heads}}},
      {"config", config.to_json()},
  };
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const std::string p = "agent" + std::to_string(i) + ".";
    cp.add_store(p + "policy.", agents[i].policy.params());
    if (const AttentionBlock* a = agents[i].policy.attention()) cp.add_store(p + "attention.", a->params());
    cp.add_store(p + "critic.", agents[i].critic.params());
  }
  return cp;
}

std::vector<DualHeadPolicy> load_policies(const Checkpoint& cp) {
  PolicyConfig pc;
  std::size_t agents = 0;
  try {
    const json& p = cp.metadata.at("policy");
    pc.obs_dim = p.at("obs_dim").get<std::size_t>();
    pc.err_dim = p.at("err_dim").get<std::size_t>();
    pc.action_count = p.at("action_count").get<std::size_t>();
    pc.hidden = p.at("hidden").get<std::size_t>();
    pc.attention = p.at("attention").get<bool>();
    pc.message_dim = p.at("message_dim").get<std::size_t>();
    pc.heads = p.at("heads").get<std::size_t>();
    agents = cp.metadata.at("agents").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint metadata is incomplete: ") + e.what());
  }
  if (agents == 0) throw ConfigError("checkpoint holds no agents");
  std::vector<DualHeadPolicy> out;
  for (std::size_t i = 0; i < agents; ++i) {
    DualHeadPolicy policy(pc);
    const std::string p = "agent" + std::to_string(i) + ".";
    cp.load_store(p + "policy.", policy.params());
    if (AttentionBlock* a = policy.attention()) cp.load_store(p + "attention.", a->params());
    out.push_back(std::move(policy));
  }
  return out;
}

SeedSummary run_seed(const ExperimentConfig& config, std::uint64_t seed) {
  config.validate();
  const TeamSpec spec = team_spec(config);
  const TrainConfig train = config.effective_train();
  const bool learn_trigger = config.learns_trigger();
  const std::size_t N = spec.agents, S = train.parallel_episodes;

  Rng init(seed, 0, StreamPurpose::kInit);
  std::vector<AgentModel> agents;
  for (std::size_t i = 0; i < N; ++i) {
    DualHeadPolicy policy(spec.policy, init);
    Critic critic(spec.critic_dim, config.hidden, init);
    agents.emplace_back(std::move(policy), std::move(critic), AdamOptions{train.learning_rate});
  }
  std::vector<Slot> slots;
  for (std::size_t s = 0; s < S; ++s) {
    slots.emplace_back(make_environment(config.env, derive_seed(seed, s, StreamPurpose::kEnvironment),
                                        config.env_options),
                       Rng(seed, s, StreamPurpose::kPolicySampling));
  }
  Rng minibatch_rng(seed, 0, StreamPurpose::kMinibatch);

  const long per_update = static_cast<long>(train.horizon * S);
  const long updates = std::max(1L, (config.total_steps + per_update - 1) / per_update);
  const long tail_from = updates - std::max(1L, updates / 10);

  const fs::path dir = config.seed_dir(seed);
  fs::create_directories(dir);
  std::vector<std::string> update_header{"update", "env_steps", "agent", "policy_loss", "value_loss",
                                         "entropy", "clip_fraction", "mean_ratio", "trigger_rate"};
  std::vector<std::string> return_header{"episode", "update", "env_steps", "team_return"};
  for (std::size_t i = 0; i < N; ++i) return_header.push_back("return_" + std::to_string(i));
  for (std::size_t i = 0; i < N; ++i) return_header.push_back("trigger_rate_" + std::to_string(i));
  CsvWriter updates_csv(dir / "updates.csv", update_header);
  CsvWriter returns_csv(dir / "returns.csv", return_header);

  long env_steps = 0, episode_index = 0;
  double tail_return = 0.0, tail_trigger = 0.0, tail_abs_state = 0.0;
  std::size_t tail_episodes = 0, tail_rows = 0;
  const std::size_t message_slots = spec.policy.attention ? N : 0;

  for (long u = 0; u < updates; ++u) {
    std::vector<RolloutBuffer> buffers;
    for (std::size_t i = 0; i < N; ++i) {
      buffers.push_back(RolloutBuffer::allocate(train.horizon, S, spec.policy.feature_dim(), spec.critic_dim,
                                                message_slots, spec.policy.message_dim));
    }
    const std::vector<EpisodeRecord> episodes = collect(spec, config, agents, slots, buffers, env_steps);
    for (const EpisodeRecord& e : episodes) {
      const double team = team_mean(e.returns);
      returns_csv.field(episode_index++).field(u).field(e.end_step).field(team);
      for (double r : e.returns) returns_csv.field(r);
      for (long c : e.triggers) returns_csv.field(static_cast<double>(c) / static_cast<double>(e.length));
      returns_csv.end_row();
      if (u >= tail_from) {
        tail_return += team;
        tail_abs_state += e.final_abs_state;
        ++tail_episodes;
      }
    }

    const std::vector<UpdateDiagnostics> diags =
        update(agents, buffers, train, config.algo, learn_trigger, minibatch_rng);
    for (const UpdateDiagnostics& d : diags) {
      updates_csv.field(u).field(env_steps).field(d.agent).field(d.policy_loss).field(d.value_loss);
      updates_csv.field(d.entropy).field(d.clip_fraction).field(d.mean_ratio).field(d.trigger_rate);
      updates_csv.end_row();
      if (u >= tail_from) {
        tail_trigger += d.trigger_rate;
        ++tail_rows;
      }
    }
    if (config.verbose && (u + 1) % std::max(1L, updates / 20) == 0) {
      std::cerr << config.run_name() << " seed " << seed << ": update " << (u + 1) << "/" << updates
                << " trigger_rate " << diags.front().trigger_rate << '\n';
    }
  }

  const Checkpoint cp = make_checkpoint(config, seed, agents);
  cp.save(dir / "checkpoint.json");

  std::vector<DualHeadPolicy> policies;
  for (const AgentModel& a : agents) policies.push_back(a.policy);
  const EvalResult eval = evaluate_policies(policies, config.env, config.env_options, config.variant,
                                            config.eval_episodes, seed, config.ma_window);
  write_eval_outputs(dir, eval, config.env, config.ma_window, config.trace);

  json summary{
      {"env", env_name(config.env)},
      {"algo", algo_name(config.algo)},
      {"variant", variant_name(config.variant)},
      {"seed", seed},
      {"psi", train.psi},
      {"env_steps", env_steps},
      {"updates", updates},
      {"train",
       {{"episodes", episode_index},
        {"final_return", tail_episodes ? json(tail_return / static_cast<double>(tail_episodes)) : json(nullptr)},
        {"final_trigger_rate", tail_rows ? tail_trigger / static_cast<double>(tail_rows) : 0.0},
        {"final_abs_state", config.env == EnvKind::kIntegrator && tail_episodes
                                ? json(tail_abs_state / static_cast<double>(tail_episodes))
                                : json(nullptr)}}},
      {"eval", eval_to_json(eval)},
  };
  write_json(dir / "summary.json", summary);
  return SeedSummary{seed, dir, summary};
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  ExperimentReport report;
  for (std::uint64_t seed : config.seeds) report.seeds.push_back(run_seed(config, seed));

  json agg = json::object();
  agg["env"] = env_name(config.env);
  agg["algo"] = algo_name(config.algo);
  agg["variant"] = variant_name(config.variant);
  agg["seeds"] = config.seeds;
  for (const char* block : {"train", "eval"}) {
    json fields = json::object();
    for (const auto& [key, value] : report.seeds.front().summary.at(block).items()) {
      if (!value.is_number()) continue;
      std::vector<double> vals;
      bool complete = true;
      for (const SeedSummary& s : report.seeds) {
        const json& v = s.summary.at(block).at(key);
        if (!v.is_number()) {
          complete = false;
          break;
        }
        vals.push_back(v.get<double>());
      }
      if (!complete) continue;
      const MeanStd ms = mean_std(vals);
      fields[key] = json{{"mean", ms.mean}, {"std", ms.std}, {"values", vals}};
    }
    agg[block] = fields;
  }
  report.aggregate = agg;
  fs::create_directories(config.run_dir());
  write_json(config.run_dir() / "aggregate.json", agg);
  return report;
}

std::vector<ExperimentReport> run_grid(const fs::path& dir,
                                       const std::vector<std::pair<std::string, std::string>>& overrides,
                                       bool verbose) {
  if (!fs::is_directory(dir)) throw IoError("grid directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no *.json configs in " + dir.string());
  std::vector<ExperimentConfig> configs;
  for (const fs::path& f : files) {
    ExperimentConfig c = ExperimentConfig::load(f);
    for (const auto& [k, v] : overrides) c.set(k, v);
    c.verbose = c.verbose || verbose;
    c.validate();
    configs.push_back(std::move(c));
  }
  std::vector<ExperimentReport> reports;
  for (const ExperimentConfig& c : configs) reports.push_back(run_experiment(c));
  return reports;
}

}  // namespace etmapg
