#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "etmapg/environments/environment.hpp"
#include "etmapg/learners/learners.hpp"
#include "etmapg/metrics/metrics.hpp"
#include "etmapg/policy/checkpoint.hpp"
#include "etmapg/policy/policy.hpp"

namespace etmapg {

struct ExperimentConfig {
  EnvKind env = EnvKind::kIntegrator;
  Algo algo = Algo::kIppo;
  Variant variant = Variant::kEt;
  std::vector<std::uint64_t> seeds{0};
  // Environment steps per seed, summed over parallel episodes.
  long total_steps = 500000;
  TrainConfig train;
  std::size_t hidden = 64;
  std::size_t message_dim = 32;
  std::size_t heads = 4;
  std::size_t eval_episodes = 20;
  std::size_t ma_window = 100;
  bool trace = false;
  // Progress lines on stderr.
  bool verbose = false;
  std::filesystem::path out = "runs";
  EnvOptions env_options;

  // Unknown keys are rejected so typos do not silently fall back to defaults.
  static ExperimentConfig from_json(const nlohmann::json& doc);
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  // CLI-style override: key is one of env, algo, variant, seeds, steps, psi, out.
  // Seeds accept "3", "0,2,5" or an inclusive range "0-4".
  void set(const std::string& key, const std::string& value);
  void validate() const;

  bool learns_trigger() const { return variant != Variant::kTt; }
  // Psi as actually applied: zero for the time-triggered baseline.
  TrainConfig effective_train() const;
  std::string run_name() const;
  std::filesystem::path run_dir() const { return out / run_name(); }
  std::filesystem::path seed_dir(std::uint64_t seed) const;
};

// Shape of one team of agents on one environment.
struct TeamSpec {
  std::size_t agents = 0;
  std::size_t obs_dim = 0;
  std::size_t err_dim = 0;
  std::size_t actions = 0;
  double state_scale = 1.0;
  long episode_limit = 0;
  PolicyConfig policy;
  // Centralized (all agents' features) or local critic input width.
  std::size_t critic_dim = 0;
};

TeamSpec team_spec(const ExperimentConfig& config);

struct EpisodeTrace {
  // [agent][step]
  std::vector<std::vector<int>> triggers;
  std::vector<std::vector<int>> actions;
  // [step][agent] physical state after the step.
  std::vector<std::vector<std::vector<double>>> states;
  // [step][agent]
  std::vector<std::vector<double>> rewards;
  std::vector<double> returns;
  std::vector<std::vector<long>> events;
};

struct EvalResult {
  std::size_t episodes = 0;
  long episode_length = 0;
  // Mean over episodes of the per-agent average undiscounted return.
  double mean_return = 0.0;
  std::vector<double> agent_returns;
  double trigger_rate = 0.0;
  double trigger_reduction = 0.0;
  InterEventStats inter_event;
  // Integrator only: mean |x| at the final step and mean final V.
  std::optional<double> final_abs_state;
  std::optional<double> final_lyapunov;
  // Integrator only: share of increasing consecutive moving-average values of
  // V over the second half of the evaluation episodes.
  std::optional<double> lyapunov_increase_fraction;
  std::vector<EpisodeTrace> traces;
};

// Greedy actions, sampled triggers; only local observations and received
// messages are used.
EvalResult evaluate_policies(const std::vector<DualHeadPolicy>& policies, EnvKind env, const EnvOptions& options,
                             Variant variant, std::size_t episodes, std::uint64_t seed, std::size_t ma_window = 100);

struct SeedSummary {
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  nlohmann::json summary;
};

// Trains one seed and writes every output file into config.seed_dir(seed).
SeedSummary run_seed(const ExperimentConfig& config, std::uint64_t seed);

struct ExperimentReport {
  std::vector<SeedSummary> seeds;
  nlohmann::json aggregate;
};

// All seeds, then aggregate.json (mean/std of every numeric summary field).
ExperimentReport run_experiment(const ExperimentConfig& config);

Checkpoint make_checkpoint(const ExperimentConfig& config, std::uint64_t seed, const std::vector<AgentModel>& agents);
std::vector<DualHeadPolicy> load_policies(const Checkpoint& checkpoint);

nlohmann::json eval_to_json(const EvalResult& result);
// events.csv, trigger_ma.csv, lyapunov.csv (integrator) and, with `trace`,
// trace.csv for an evaluation.
void write_eval_outputs(const std::filesystem::path& dir, const EvalResult& result, EnvKind env,
                        std::size_t ma_window, bool trace);

// Runs every *.json config in `dir` (sorted by name).
std::vector<ExperimentReport> run_grid(const std::filesystem::path& dir,
                                       const std::vector<std::pair<std::string, std::string>>& overrides = {},
                                       bool verbose = false);

}  // namespace etmapg
