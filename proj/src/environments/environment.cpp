#include "etmapg/environments/environment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "etmapg/errors.hpp"

namespace etmapg {

namespace {

constexpr std::array<std::pair<EnvKind, std::string_view>, 4> kEnvNames{{
    {EnvKind::kIntegrator, "integrator"},
    {EnvKind::kMatrixPenalty, "matrix_penalty"},
    {EnvKind::kMpeReference, "mpe_reference"},
    {EnvKind::kMpeSpread, "mpe_spread"},
}};

}  // namespace

std::string_view env_name(EnvKind kind) {
  for (const auto& [k, n] : kEnvNames) {
    if (k == kind) return n;
  }
  return "unknown";
}

EnvKind parse_env_kind(std::string_view name) {
  std::string valid;
  for (const auto& [k, n] : kEnvNames) {
    if (n == name) return k;
    valid += (valid.empty() ? "" : ", ") + std::string(n);
  }
  throw ConfigError("unknown environment '" + std::string(name) + "' (valid: " + valid + ")");
}

StepResult Environment::reset() {
  step_ = 0;
  reset_state(rng_);
  return StepResult{observations(), std::vector<double>(agent_count(), 0.0), false, states()};
}

StepResult Environment::step(std::span<const int> joint_action) {
  if (done()) throw ContractViolation(std::string(env_name(kind())) + ": step after episode end");
  if (joint_action.size() != agent_count()) {
    throw ContractViolation(std::string(env_name(kind())) + ": expected " + std::to_string(agent_count()) +
                            " actions, got " + std::to_string(joint_action.size()));
  }
  for (std::size_t i = 0; i < joint_action.size(); ++i) {
    if (joint_action[i] < 0 || static_cast<std::size_t>(joint_action[i]) >= action_count()) {
      throw ContractViolation(std::string(env_name(kind())) + ": action " + std::to_string(joint_action[i]) +
                              " of agent " + std::to_string(i) + " outside [0, " +
                              std::to_string(action_count()) + ")");
    }
  }
  std::vector<double> r = advance(joint_action, rng_);
  ++step_;
  return StepResult{observations(), std::move(r), done(), states()};
}

std::vector<std::vector<double>> Environment::observations() const {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < agent_count(); ++i) out.push_back(observe(i));
  return out;
}

std::vector<std::vector<double>> Environment::states() const {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < agent_count(); ++i) out.push_back(physical_state(i));
  return out;
}

// ---- integrator -------------------------------------------------------------

double integrator_reward(double x, double x_next, double u, double action_cost) {
  return std::abs(x) - std::abs(x_next) - action_cost * std::abs(u);
}

IntegratorEnv::IntegratorEnv(const IntegratorConfig& config, std::uint64_t seed)
    : Environment(seed), config_(config), x_(config.agents, config.initial_state) {
  if (config_.agents == 0) throw ConfigError("integrator: need at least one agent");
  if (!(config_.sampling_time > 0.0)) throw ConfigError("integrator: sampling time must be positive");
  if (!(config_.perturbation >= 0.0)) throw ConfigError("integrator: perturbation bound must be nonnegative");
  if (config_.control_levels.empty()) throw ConfigError("integrator: empty control set");
  if (config_.episode_length <= 0) throw ConfigError("integrator: episode length must be positive");
}

void IntegratorEnv::reset_state(Rng&) { std::fill(x_.begin(), x_.end(), config_.initial_state); }

std::vector<double> IntegratorEnv::advance(std::span<const int> joint_action, Rng& rng) {
  std::vector<double> r(x_.size());
  for (std::size_t i = 0; i < x_.size(); ++i) {
    const double u = config_.control_levels[static_cast<std::size_t>(joint_action[i])];
    double next = x_[i] + u * config_.sampling_time;
    if (config_.perturbed) next += rng.uniform(-config_.perturbation, config_.perturbation);
    r[i] = integrator_reward(x_[i], next, u, config_.action_cost);
    x_[i] = next;
  }
  return r;
}

std::vector<double> IntegratorEnv::observe(std::size_t i) const { return {x_[i] / config_.initial_state}; }

std::vector<double> IntegratorEnv::physical_state(std::size_t i) const { return {x_[i]}; }

// ---- matrix game -------------------------------------------------------------

double matrix_payoff(int row, int col, double penalty) {
  const double m[3][3] = {{penalty, 0.0, 10.0}, {0.0, 2.0, 0.0}, {10.0, 0.0, penalty}};
  if (row < 0 || row > 2 || col < 0 || col > 2) {
    throw ContractViolation("matrix game: joint action (" + std::to_string(row) + "," + std::to_string(col) +
                            ") out of range");
  }
  return m[row][col];
}

MatrixGameEnv::MatrixGameEnv(const MatrixGameConfig& config, std::uint64_t seed)
    : Environment(seed), config_(config) {
  if (config_.penalty > 0.0) throw ConfigError("matrix game: penalty must be <= 0");
  if (config_.episode_length <= 0) throw ConfigError("matrix game: episode length must be positive");
}

std::vector<double> MatrixGameEnv::advance(std::span<const int> a, Rng&) {
  const double p = matrix_payoff(a[0], a[1], config_.penalty);
  return {p, p};
}

std::vector<double> MatrixGameEnv::observe(std::size_t) const {
  return {1.0, static_cast<double>(step_count()) / static_cast<double>(config_.episode_length)};
}

// ---- particles -------------------------------------------------------------

double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

SpreadReward spread_reward(std::span<const Vec2> agents, std::span<const Vec2> landmarks, double collision_radius) {
  SpreadReward out;
  for (const Vec2& l : landmarks) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec2& a : agents) best = std::min(best, distance(a, l));
    out.global -= best;
  }
  out.collision_penalties.assign(agents.size(), 0.0);
  for (std::size_t i = 0; i < agents.size(); ++i) {
    for (std::size_t j = 0; j < agents.size(); ++j) {
      if (i != j && distance(agents[i], agents[j]) < collision_radius) out.collision_penalties[i] -= 1.0;
    }
  }
  return out;
}

ReferenceReward reference_reward(std::span<const Vec2> agents, std::span<const Vec2> targets, double local_weight) {
  if (agents.size() != targets.size()) throw ContractViolation("reference reward: one target per agent required");
  ReferenceReward out;
  for (std::size_t i = 0; i < agents.size(); ++i) out.local.push_back(-distance(agents[i], targets[i]));
  for (double l : out.local) out.global += l;
  out.global /= static_cast<double>(agents.size());
  for (double l : out.local) out.agent.push_back(local_weight * l + (1.0 - local_weight) * out.global);
  return out;
}

ParticleEnv::ParticleEnv(EnvKind kind, const ParticleConfig& config, std::uint64_t seed)
    : Environment(seed), kind_(kind), config_(config) {
  std::size_t agents = 0;
  if (kind == EnvKind::kMpeReference) {
    agents = 2;
  } else if (kind == EnvKind::kMpeSpread) {
    agents = 3;
  } else {
    throw ConfigError("particle environment needs kind mpe_reference or mpe_spread");
  }
  if (config_.landmarks == 0) throw ConfigError("particle: need at least one landmark");
  if (!(config_.dt > 0.0) || !(config_.arena > 0.0)) throw ConfigError("particle: dt and arena must be positive");
  if (config_.episode_length <= 0) throw ConfigError("particle: episode length must be positive");
  pos_.resize(agents);
  vel_.resize(agents);
  landmarks_.resize(config_.landmarks);
  targets_.assign(agents, 0);
}

std::size_t ParticleEnv::obs_dim() const {
  const std::size_t base = 4 + 2 * config_.landmarks + 2 * (pos_.size() - 1);
  return kind_ == EnvKind::kMpeReference ? base + config_.landmarks : base;
}

void ParticleEnv::set_layout(std::vector<Vec2> agents, std::vector<Vec2> landmarks) {
  if (agents.size() != pos_.size() || landmarks.size() != landmarks_.size()) {
    throw ContractViolation("particle: layout does not match agent/landmark counts");
  }
  pos_ = std::move(agents);
  landmarks_ = std::move(landmarks);
  std::fill(vel_.begin(), vel_.end(), Vec2{});
}

void ParticleEnv::reset_state(Rng& rng) {
  const double a = config_.arena;
  for (Vec2& p : pos_) p = {rng.uniform(-a, a), rng.uniform(-a, a)};
  for (Vec2& v : vel_) v = {};
  for (Vec2& l : landmarks_) l = {rng.uniform(-a, a), rng.uniform(-a, a)};
  if (kind_ == EnvKind::kMpeReference) {
    for (std::size_t& t : targets_) t = static_cast<std::size_t>(rng.below(landmarks_.size()));
  }
}

std::vector<double> ParticleEnv::advance(std::span<const int> joint_action, Rng&) {
  static constexpr Vec2 kDirections[5] = {{0, 0}, {-1, 0}, {1, 0}, {0, -1}, {0, 1}};
  const double a = config_.arena;
  for (std::size_t i = 0; i < pos_.size(); ++i) {
    const Vec2 d = kDirections[joint_action[i]];
    Vec2& v = vel_[i];
    v.x = v.x * (1.0 - config_.damping) + config_.accel * d.x * config_.dt;
    v.y = v.y * (1.0 - config_.damping) + config_.accel * d.y * config_.dt;
    Vec2& p = pos_[i];
    p.x = std::clamp(p.x + v.x * config_.dt, -a, a);
    p.y = std::clamp(p.y + v.y * config_.dt, -a, a);
  }
  return rewards();
}

std::vector<double> ParticleEnv::rewards() const {
  if (kind_ == EnvKind::kMpeSpread) {
    const SpreadReward s = spread_reward(pos_, landmarks_, config_.collision_radius);
    std::vector<double> r(pos_.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = s.global + s.collision_penalties[i];
    return r;
  }
  std::vector<Vec2> goals;
  for (std::size_t t : targets_) goals.push_back(landmarks_[t]);
  return reference_reward(pos_, goals, config_.reference_local_weight).agent;
}

std::vector<double> ParticleEnv::observe(std::size_t i) const {
  std::vector<double> o;
  o.reserve(obs_dim());
  const Vec2 p = pos_[i];
  o.insert(o.end(), {vel_[i].x, vel_[i].y, p.x, p.y});
  for (const Vec2& l : landmarks_) o.insert(o.end(), {l.x - p.x, l.y - p.y});
  for (std::size_t j = 0; j < pos_.size(); ++j) {
    if (j != i) o.insert(o.end(), {pos_[j].x - p.x, pos_[j].y - p.y});
  }
  if (kind_ == EnvKind::kMpeReference) {
    // The other agent's target: agent i can see it, its owner cannot.
    const std::size_t other = 1 - i;
    for (std::size_t l = 0; l < landmarks_.size(); ++l) o.push_back(targets_[other] == l ? 1.0 : 0.0);
  }
  return o;
}

std::vector<double> ParticleEnv::physical_state(std::size_t i) const {
  return {pos_[i].x, pos_[i].y, vel_[i].x, vel_[i].y};
}

std::unique_ptr<Environment> make_environment(EnvKind kind, std::uint64_t seed, const EnvOptions& options) {
  switch (kind) {
    case EnvKind::kIntegrator:
      return std::make_unique<IntegratorEnv>(options.integrator, seed);
    case EnvKind::kMatrixPenalty:
      return std::make_unique<MatrixGameEnv>(options.matrix, seed);
    case EnvKind::kMpeReference:
    case EnvKind::kMpeSpread:
      return std::make_unique<ParticleEnv>(kind, options.particle, seed);
  }
  throw ConfigError("unknown environment kind");
}

}  // namespace etmapg
