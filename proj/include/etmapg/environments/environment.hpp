#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "etmapg/numerics/rng.hpp"

namespace etmapg {

enum class EnvKind { kIntegrator, kMatrixPenalty, kMpeReference, kMpeSpread };

std::string_view env_name(EnvKind kind);
// Throws ConfigError listing the valid names.
EnvKind parse_env_kind(std::string_view name);

struct StepResult {
  std::vector<std::vector<double>> observations;
  std::vector<double> rewards;
  bool done = false;
  // Physical state per agent; feeds error signals and Lyapunov monitoring.
  std::vector<std::vector<double>> states;
};

// One cooperative episodic task with N agents, each choosing from a discrete
// action set. The instance owns its random stream, so reset/step sequences
// are a deterministic function of (seed, action history).
class Environment {
 public:
  explicit Environment(std::uint64_t seed) : rng_(seed) {}
  virtual ~Environment() = default;

  virtual EnvKind kind() const = 0;
  virtual std::size_t agent_count() const = 0;
  virtual std::size_t obs_dim() const = 0;
  virtual std::size_t action_count() const = 0;
  virtual std::size_t state_dim() const = 0;
  virtual long episode_limit() const = 0;
  // Typical state magnitude, used to normalize error features.
  virtual double state_scale() const { return 1.0; }

  long step_count() const { return step_; }
  bool done() const { return step_ >= episode_limit(); }

  StepResult reset();
  // Throws ContractViolation for out-of-range actions or a finished episode.
  StepResult step(std::span<const int> joint_action);

  std::vector<std::vector<double>> observations() const;
  std::vector<std::vector<double>> states() const;

  void reseed(std::uint64_t seed) { rng_ = Rng(seed); }

 protected:
  virtual void reset_state(Rng& rng) = 0;
  virtual std::vector<double> advance(std::span<const int> joint_action, Rng& rng) = 0;
  virtual std::vector<double> observe(std::size_t agent) const = 0;
  virtual std::vector<double> physical_state(std::size_t agent) const = 0;

 private:
  Rng rng_;
  long step_ = 0;
};

// ---- perturbed single integrators ----------------------------------------

struct IntegratorConfig {
  std::size_t agents = 2;
  double sampling_time = 0.1;
  std::vector<double> control_levels{-1.0, -0.5, 0.0, 0.5, 1.0};
  // Half-width of the uniform additive disturbance.
  double perturbation = 0.01;
  bool perturbed = true;
  double initial_state = 10.0;
  double action_cost = 0.05;
  long episode_length = 200;
};

// Improvement in |x| minus an action-magnitude cost.
double integrator_reward(double x, double x_next, double u, double action_cost);

class IntegratorEnv final : public Environment {
 public:
  IntegratorEnv(const IntegratorConfig& config, std::uint64_t seed);

  EnvKind kind() const override { return EnvKind::kIntegrator; }
  std::size_t agent_count() const override { return config_.agents; }
  std::size_t obs_dim() const override { return 1; }
  std::size_t action_count() const override { return config_.control_levels.size(); }
  std::size_t state_dim() const override { return 1; }
  long episode_limit() const override { return config_.episode_length; }
  double state_scale() const override { return config_.initial_state; }

  const IntegratorConfig& config() const { return config_; }
  std::span<const double> positions() const { return x_; }

 protected:
  void reset_state(Rng& rng) override;
  std::vector<double> advance(std::span<const int> joint_action, Rng& rng) override;
  std::vector<double> observe(std::size_t agent) const override;
  std::vector<double> physical_state(std::size_t agent) const override;

 private:
  IntegratorConfig config_;
  std::vector<double> x_;
};

// ---- repeated penalty matrix game ----------------------------------------

struct MatrixGameConfig {
  double penalty = -100.0;
  long episode_length = 25;
};

// Shared payoff for (row, col) of [[l,0,10],[0,2,0],[10,0,l]].
double matrix_payoff(int row, int col, double penalty);

class MatrixGameEnv final : public Environment {
 public:
  MatrixGameEnv(const MatrixGameConfig& config, std::uint64_t seed);

  EnvKind kind() const override { return EnvKind::kMatrixPenalty; }
  std::size_t agent_count() const override { return 2; }
  // [1, step / episode_length]
  std::size_t obs_dim() const override { return 2; }
  std::size_t action_count() const override { return 3; }
  // A single always-zero entry: the game has no physical state.
  std::size_t state_dim() const override { return 1; }
  long episode_limit() const override { return config_.episode_length; }

 protected:
  void reset_state(Rng&) override {}
  std::vector<double> advance(std::span<const int> joint_action, Rng& rng) override;
  std::vector<double> observe(std::size_t agent) const override;
  std::vector<double> physical_state(std::size_t) const override { return {0.0}; }

 private:
  MatrixGameConfig config_;
};

// ---- simplified particle tasks -------------------------------------------

struct ParticleConfig {
  // Arena is [-arena, arena]^2.
  double arena = 1.0;
  double accel = 0.5;
  double damping = 0.25;
  double dt = 0.1;
  double collision_radius = 0.15;
  std::size_t landmarks = 3;
  long episode_length = 50;
  // Local/global mixing weight for Simple Reference rewards.
  double reference_local_weight = 0.5;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};
double distance(Vec2 a, Vec2 b);

struct SpreadReward {
  double global = 0.0;
  // -1 for every other agent within the collision radius.
  std::vector<double> collision_penalties;
};
SpreadReward spread_reward(std::span<const Vec2> agents, std::span<const Vec2> landmarks, double collision_radius);

struct ReferenceReward {
  std::vector<double> local;
  double global = 0.0;
  std::vector<double> agent;
};
ReferenceReward reference_reward(std::span<const Vec2> agents, std::span<const Vec2> targets, double local_weight);

// Point masses driven by discrete accelerations
// {no-op, left, right, down, up}; positions are clamped to the arena.
class ParticleEnv final : public Environment {
 public:
  ParticleEnv(EnvKind kind, const ParticleConfig& config, std::uint64_t seed);

  EnvKind kind() const override { return kind_; }
  std::size_t agent_count() const override { return pos_.size(); }
  std::size_t obs_dim() const override;
  std::size_t action_count() const override { return 5; }
  // [px, py, vx, vy]
  std::size_t state_dim() const override { return 4; }
  long episode_limit() const override { return config_.episode_length; }

  std::span<const Vec2> agent_positions() const { return pos_; }
  std::span<const Vec2> landmark_positions() const { return landmarks_; }
  std::span<const std::size_t> targets() const { return targets_; }

  // Test hooks: place agents/landmarks directly.
  void set_layout(std::vector<Vec2> agents, std::vector<Vec2> landmarks);

 protected:
  void reset_state(Rng& rng) override;
  std::vector<double> advance(std::span<const int> joint_action, Rng& rng) override;
  std::vector<double> observe(std::size_t agent) const override;
  std::vector<double> physical_state(std::size_t agent) const override;

 private:
  std::vector<double> rewards() const;

  EnvKind kind_;
  ParticleConfig config_;
  std::vector<Vec2> pos_;
  std::vector<Vec2> vel_;
  std::vector<Vec2> landmarks_;
  std::vector<std::size_t> targets_;
};

struct EnvOptions {
  IntegratorConfig integrator;
  MatrixGameConfig matrix;
  ParticleConfig particle;
};

std::unique_ptr<Environment> make_environment(EnvKind kind, std::uint64_t seed, const EnvOptions& options = {});

}  // namespace etmapg
