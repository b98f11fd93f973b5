// Command-line front end over the C API.
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "etmapg/etmapg.h"

namespace {

struct Overrides {
  std::string env, algo, variant, seeds, steps, psi, out;

  void attach(CLI::App* cmd) {
    cmd->add_option("--env", env, "integrator | matrix_penalty | mpe_reference | mpe_spread");
    cmd->add_option("--algo", algo, "ippo | mappo | ia2c");
    cmd->add_option("--variant", variant, "tt | et | aet");
    cmd->add_option("--seeds", seeds, "e.g. 0, 0,3,7 or 0-4");
    cmd->add_option("--steps", steps, "environment steps per seed");
    cmd->add_option("--psi", psi, "trigger penalty");
    cmd->add_option("--out", out, "output root");
  }

  std::vector<std::pair<std::string, std::string>> pairs() const {
    std::vector<std::pair<std::string, std::string>> p;
    for (const auto& [k, v] : {std::pair<const char*, const std::string*>{"env", &env},
                               {"algo", &algo},
                               {"variant", &variant},
                               {"seeds", &seeds},
                               {"steps", &steps},
                               {"psi", &psi},
                               {"out", &out}}) {
      if (!v->empty()) p.emplace_back(k, *v);
    }
    return p;
  }
};

int fail(const char* what, etm_status status) {
  std::fprintf(stderr, "etmapg: %s failed (%s): %s\n", what, etm_status_name(status), etm_last_error());
  return static_cast<int>(status) + 1;
}

std::string fetch(etm_status (*fn)(const etm_experiment*, char*, size_t, size_t*), const etm_experiment* e) {
  size_t needed = 0;
  fn(e, nullptr, 0, &needed);
  std::string s(needed, '\0');
  if (fn(e, s.data(), s.size(), nullptr) != ETM_OK) return {};
  s.resize(needed - 1);
  return s;
}

int train(const std::string& config_path, const Overrides& overrides, bool verbose) {
  etm_experiment* e = nullptr;
  etm_status st = etm_experiment_from_file(config_path.c_str(), &e);
  if (st != ETM_OK) return fail("loading config", st);
  for (const auto& [k, v] : overrides.pairs()) {
    st = etm_experiment_set(e, k.c_str(), v.c_str());
    if (st != ETM_OK) {
      etm_experiment_destroy(e);
      return fail(("--" + k).c_str(), st);
    }
  }
  etm_experiment_set_verbose(e, verbose ? 1 : 0);
  st = etm_experiment_run(e);
  if (st != ETM_OK) {
    etm_experiment_destroy(e);
    return fail("training", st);
  }
  std::printf("%s\n", fetch(etm_experiment_aggregate_json, e).c_str());
  std::fprintf(stderr, "outputs in %s\n", fetch(etm_experiment_run_dir, e).c_str());
  etm_experiment_destroy(e);
  return 0;
}

int eval(const std::string& checkpoint, const std::string& env, unsigned long episodes, unsigned long long seed,
         const std::string& out) {
  etm_eval_summary s{};
  const etm_status st = etm_evaluate(checkpoint.c_str(), env.empty() ? nullptr : env.c_str(), episodes, seed,
                                     out.empty() ? nullptr : out.c_str(), &s);
  if (st != ETM_OK) return fail("evaluation", st);
  std::printf("episodes            %lu\n", s.episodes);
  std::printf("mean_return         %.6g\n", s.mean_return);
  std::printf("mean_step_reward    %.6g\n", s.mean_step_reward);
  std::printf("trigger_rate        %.6g\n", s.trigger_rate);
  std::printf("trigger_reduction   %.6g\n", s.trigger_reduction);
  std::printf("inter_event min/mean/max  %ld / %.4g / %ld\n", s.inter_event_min, s.inter_event_mean,
              s.inter_event_max);
  if (s.has_state_metrics) {
    std::printf("final_abs_state     %.6g\n", s.final_abs_state);
    std::printf("lyapunov_final      %.6g\n", s.lyapunov_final);
  }
  return 0;
}

int grid(const std::string& dir, const Overrides& overrides, bool verbose) {
  std::vector<std::string> keys, values;
  for (const auto& [k, v] : overrides.pairs()) {
    keys.push_back(k);
    values.push_back(v);
  }
  std::vector<const char*> kp, vp;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    kp.push_back(keys[i].c_str());
    vp.push_back(values[i].c_str());
  }
  const etm_status st = etm_grid(dir.c_str(), kp.data(), vp.data(), kp.size(), verbose ? 1 : 0);
  if (st != ETM_OK) return fail("grid", st);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-triggered multi-agent policy gradient experiments"};
  app.set_version_flag("--version", std::string(etm_version()));
  app.require_subcommand(1);

  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "progress on stderr");

  Overrides train_over, grid_over;
  std::string config_path;
  CLI::App* train_cmd = app.add_subcommand("train", "train every seed of one config");
  train_cmd->add_option("config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train_over.attach(train_cmd);

  std::string checkpoint, eval_env, eval_out;
  unsigned long episodes = 20;
  unsigned long long eval_seed = 0;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("checkpoint", checkpoint, "checkpoint.json")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--env", eval_env, "environment (default: the training one)");
  eval_cmd->add_option("--episodes", episodes, "evaluation episodes")->check(CLI::NonNegativeNumber);
  eval_cmd->add_option("--seed", eval_seed, "evaluation seed");
  eval_cmd->add_option("--out", eval_out, "write eval.json and CSVs here");

  std::string grid_dir;
  CLI::App* grid_cmd = app.add_subcommand("grid", "run every config in a directory");
  grid_cmd->add_option("config-dir", grid_dir, "directory of JSON configs")->required()->check(CLI::ExistingDirectory);
  grid_over.attach(grid_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (train_cmd->parsed()) return train(config_path, train_over, verbose);
  if (eval_cmd->parsed()) return eval(checkpoint, eval_env, episodes, eval_seed, eval_out);
  return grid(grid_dir, grid_over, verbose);
}
