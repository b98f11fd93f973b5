#include <charconv>
#include <fstream>
#include <set>

#include "etmapg/errors.hpp"
#include "etmapg/runner/runner.hpp"

namespace etmapg {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& field, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    field = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

std::uint64_t parse_u64(std::string_view text, const std::string& what) {
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size() || text.empty()) {
    throw ConfigError(what + ": '" + std::string(text) + "' is not a nonnegative integer");
  }
  return v;
}

double parse_real(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + ": '" + text + "' is not a number");
  }
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::string_view rest = text;
  while (!rest.empty()) {
    const std::size_t comma = rest.find(',');
    const std::string_view item = rest.substr(0, comma);
    const std::size_t dash = item.find('-');
    if (dash == std::string_view::npos) {
      seeds.push_back(parse_u64(item, "seeds"));
    } else {
      const std::uint64_t lo = parse_u64(item.substr(0, dash), "seeds");
      const std::uint64_t hi = parse_u64(item.substr(dash + 1), "seeds");
      if (hi < lo) throw ConfigError("seeds: empty range '" + std::string(item) + "'");
      for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    }
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
  }
  return seeds;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  reject_unknown(doc,
                 {"env", "algo", "variant", "seeds", "steps", "psi", "out", "hidden", "message_dim", "heads",
                  "eval_episodes", "ma_window", "trace", "verbose", "train", "integrator", "matrix", "particle"},
                 "config");
  ExperimentConfig c;
  std::string text;
  if (doc.contains("env")) {
    read(doc, "env", text, "config");
    c.env = parse_env_kind(text);
  }
  if (doc.contains("algo")) {
    read(doc, "algo", text, "config");
    c.algo = parse_algo(text);
  }
  if (doc.contains("variant")) {
    read(doc, "variant", text, "config");
    c.variant = parse_variant(text);
  }
  read(doc, "seeds", c.seeds, "config");
  read(doc, "steps", c.total_steps, "config");
  read(doc, "psi", c.train.psi, "config");
  if (doc.contains("out")) {
    read(doc, "out", text, "config");
    c.out = text;
  }
  read(doc, "hidden", c.hidden, "config");
  read(doc, "message_dim", c.message_dim, "config");
  read(doc, "heads", c.heads, "config");
  read(doc, "eval_episodes", c.eval_episodes, "config");
  read(doc, "ma_window", c.ma_window, "config");
  read(doc, "trace", c.trace, "config");
  read(doc, "verbose", c.verbose, "config");

  if (doc.contains("train")) {
    const json& t = doc.at("train");
    reject_unknown(t,
                   {"gamma", "lambda", "clip", "learning_rate", "epochs", "minibatch", "horizon", "parallel_episodes",
                    "entropy_coef", "value_coef", "max_grad_norm"},
                   "train");
    read(t, "gamma", c.train.gamma, "train");
    read(t, "lambda", c.train.lambda, "train");
    read(t, "clip", c.train.clip, "train");
    read(t, "learning_rate", c.train.learning_rate, "train");
    read(t, "epochs", c.train.epochs, "train");
    read(t, "minibatch", c.train.minibatch, "train");
    read(t, "horizon", c.train.horizon, "train");
    read(t, "parallel_episodes", c.train.parallel_episodes, "train");
    read(t, "entropy_coef", c.train.entropy_coef, "train");
    read(t, "value_coef", c.train.value_coef, "train");
    read(t, "max_grad_norm", c.train.max_grad_norm, "train");
  }
  if (doc.contains("integrator")) {
    const json& e = doc.at("integrator");
    IntegratorConfig& ic = c.env_options.integrator;
    reject_unknown(e,
                   {"agents", "sampling_time", "control_levels", "perturbation", "perturbed", "initial_state",
                    "action_cost", "episode_length"},
                   "integrator");
    read(e, "agents", ic.agents, "integrator");
    read(e, "sampling_time", ic.sampling_time, "integrator");
    read(e, "control_levels", ic.control_levels, "integrator");
    read(e, "perturbation", ic.perturbation, "integrator");
    read(e, "perturbed", ic.perturbed, "integrator");
    read(e, "initial_state", ic.initial_state, "integrator");
    read(e, "action_cost", ic.action_cost, "integrator");
    read(e, "episode_length", ic.episode_length, "integrator");
  }
  if (doc.contains("matrix")) {
    const json& e = doc.at("matrix");
    reject_unknown(e, {"penalty", "episode_length"}, "matrix");
    read(e, "penalty", c.env_options.matrix.penalty, "matrix");
    read(e, "episode_length", c.env_options.matrix.episode_length, "matrix");
  }
  if (doc.contains("particle")) {
    const json& e = doc.at("particle");
    ParticleConfig& pc = c.env_options.particle;
    reject_unknown(e,
                   {"arena", "accel", "damping", "dt", "collision_radius", "landmarks", "episode_length",
                    "reference_local_weight"},
                   "particle");
    read(e, "arena", pc.arena, "particle");
    read(e, "accel", pc.accel, "particle");
    read(e, "damping", pc.damping, "particle");
    read(e, "dt", pc.dt, "particle");
    read(e, "collision_radius", pc.collision_radius, "particle");
    read(e, "landmarks", pc.landmarks, "particle");
    read(e, "episode_length", pc.episode_length, "particle");
    read(e, "reference_local_weight", pc.reference_local_weight, "particle");
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(doc);
}

json ExperimentConfig::to_json() const {
  const IntegratorConfig& ic = env_options.integrator;
  const ParticleConfig& pc = env_options.particle;
  return json{
      {"env", env_name(env)},
      {"algo", algo_name(algo)},
      {"variant", variant_name(variant)},
      {"seeds", seeds},
      {"steps", total_steps},
      {"psi", train.psi},
      {"out", out.string()},
      {"hidden", hidden},
      {"message_dim", message_dim},
      {"heads", heads},
      {"eval_episodes", eval_episodes},
      {"ma_window", ma_window},
      {"trace", trace},
      {"verbose", verbose},
      {"train",
       {{"gamma", train.gamma},
        {"lambda", train.lambda},
        {"clip", train.clip},
        {"learning_rate", train.learning_rate},
        {"epochs", train.epochs},
        {"minibatch", train.minibatch},
        {"horizon", train.horizon},
        {"parallel_episodes", train.parallel_episodes},
        {"entropy_coef", train.entropy_coef},
        {"value_coef", train.value_coef},
        {"max_grad_norm", train.max_grad_norm}}},
      {"integrator",
       {{"agents", ic.agents},
        {"sampling_time", ic.sampling_time},
        {"control_levels", ic.control_levels},
        {"perturbation", ic.perturbation},
        {"perturbed", ic.perturbed},
        {"initial_state", ic.initial_state},
        {"action_cost", ic.action_cost},
        {"episode_length", ic.episode_length}}},
      {"matrix", {{"penalty", env_options.matrix.penalty}, {"episode_length", env_options.matrix.episode_length}}},
      {"particle",
       {{"arena", pc.arena},
        {"accel", pc.accel},
        {"damping", pc.damping},
        {"dt", pc.dt},
        {"collision_radius", pc.collision_radius},
        {"landmarks", pc.landmarks},
        {"episode_length", pc.episode_length},
        {"reference_local_weight", pc.reference_local_weight}}},
  };
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (key == "env") {
    env = parse_env_kind(value);
  } else if (key == "algo") {
    algo = parse_algo(value);
  } else if (key == "variant") {
    variant = parse_variant(value);
  } else if (key == "seeds") {
    seeds = parse_seeds(value);
  } else if (key == "steps") {
    total_steps = static_cast<long>(parse_u64(value, "steps"));
  } else if (key == "psi") {
    train.psi = parse_real(value, "psi");
  } else if (key == "out") {
    if (value.empty()) throw ConfigError("out: empty path");
    out = value;
  } else {
    throw ConfigError("unknown override '" + key + "' (valid: env, algo, variant, seeds, steps, psi, out)");
  }
}

void ExperimentConfig::validate() const {
  train.validate();
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (total_steps <= 0) throw ConfigError("steps must be positive");
  if (hidden == 0) throw ConfigError("hidden width must be positive");
  if (eval_episodes == 0) throw ConfigError("eval_episodes must be positive");
  if (ma_window == 0) throw ConfigError("ma_window must be positive");
  if (variant == Variant::kAet && (message_dim == 0 || heads == 0 || message_dim % heads != 0)) {
    throw ConfigError("aet needs message_dim to be a positive multiple of heads");
  }
  if (env == EnvKind::kIntegrator && env_options.integrator.agents == 0) {
    throw ConfigError("integrator: need at least one agent");
  }
}

TrainConfig ExperimentConfig::effective_train() const {
  TrainConfig t = train;
  if (variant == Variant::kTt) t.psi = 0.0;
  return t;
}

std::string ExperimentConfig::run_name() const {
  return std::string(env_name(env)) + "_" + std::string(algo_name(algo)) + "_" + std::string(variant_name(variant));
}

std::filesystem::path ExperimentConfig::seed_dir(std::uint64_t seed) const {
  return run_dir() / ("seed_" + std::to_string(seed));
}

}  // namespace etmapg
