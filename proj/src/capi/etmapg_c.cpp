#include "etmapg/etmapg.h"

#include <cstring>
#include <fstream>
#include <new>
#include <string>

#include "etmapg/errors.hpp"
#include "etmapg/runner/runner.hpp"

struct etm_experiment {
  etmapg::ExperimentConfig config;
  nlohmann::json aggregate;
};

namespace {

thread_local std::string last_error;

template <typename Fn>
etm_status guarded(Fn&& fn) {
  try {
    last_error.clear();
    fn();
    return ETM_OK;
  } catch (const etmapg::ConfigError& e) {
    last_error = e.what();
    return ETM_ERR_CONFIG;
  } catch (const etmapg::ContractViolation& e) {
    last_error = e.what();
    return ETM_ERR_CONTRACT;
  } catch (const etmapg::NumericError& e) {
    last_error = e.what();
    return ETM_ERR_NUMERIC;
  } catch (const etmapg::IoError& e) {
    last_error = e.what();
    return ETM_ERR_IO;
  } catch (const std::filesystem::filesystem_error& e) {
    last_error = e.what();
    return ETM_ERR_IO;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return ETM_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return ETM_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown error";
    return ETM_ERR_INTERNAL;
  }
}

etm_status null_arg(const char* what) {
  last_error = std::string(what) + " is NULL";
  return ETM_ERR_NULL_ARGUMENT;
}

etm_status copy_out(const std::string& s, char* buf, size_t capacity, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (!buf || capacity < s.size() + 1) {
    last_error = "buffer needs " + std::to_string(s.size() + 1) + " bytes";
    return ETM_ERR_BUFFER_TOO_SMALL;
  }
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return ETM_OK;
}

}  // namespace

extern "C" {

const char* etm_version(void) { return "1.0.0"; }

const char* etm_status_name(etm_status status) {
  switch (status) {
    case ETM_OK: return "ok";
    case ETM_ERR_NULL_ARGUMENT: return "null argument";
    case ETM_ERR_CONFIG: return "configuration error";
    case ETM_ERR_CONTRACT: return "contract violation";
    case ETM_ERR_NUMERIC: return "numeric error";
    case ETM_ERR_IO: return "i/o error";
    case ETM_ERR_BUFFER_TOO_SMALL: return "buffer too small";
    case ETM_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* etm_last_error(void) { return last_error.c_str(); }

etm_status etm_experiment_create(etm_experiment** out) {
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] { *out = new etm_experiment{}; });
}

etm_status etm_experiment_from_file(const char* path, etm_experiment** out) {
  if (!path) return null_arg("path");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] { *out = new etm_experiment{etmapg::ExperimentConfig::load(path), {}}; });
}

etm_status etm_experiment_from_json(const char* json_text, etm_experiment** out) {
  if (!json_text) return null_arg("json_text");
  if (!out) return null_arg("out");
  *out = nullptr;
  return guarded([&] {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
      throw etmapg::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    *out = new etm_experiment{etmapg::ExperimentConfig::from_json(doc), {}};
  });
}

void etm_experiment_destroy(etm_experiment* experiment) { delete experiment; }

etm_status etm_experiment_set(etm_experiment* experiment, const char* key, const char* value) {
  if (!experiment) return null_arg("experiment");
  if (!key) return null_arg("key");
  if (!value) return null_arg("value");
  return guarded([&] {
    etmapg::ExperimentConfig next = experiment->config;
    next.set(key, value);
    next.validate();
    experiment->config = std::move(next);
  });
}

etm_status etm_experiment_set_verbose(etm_experiment* experiment, int verbose) {
  if (!experiment) return null_arg("experiment");
  experiment->config.verbose = verbose != 0;
  return ETM_OK;
}

etm_status etm_experiment_config_json(const etm_experiment* experiment, char* buf, size_t capacity,
                                      size_t* needed) {
  if (!experiment) return null_arg("experiment");
  return copy_out(experiment->config.to_json().dump(2), buf, capacity, needed);
}

etm_status etm_experiment_run_dir(const etm_experiment* experiment, char* buf, size_t capacity, size_t* needed) {
  if (!experiment) return null_arg("experiment");
  return copy_out(experiment->config.run_dir().string(), buf, capacity, needed);
}

etm_status etm_experiment_run(etm_experiment* experiment) {
  if (!experiment) return null_arg("experiment");
  return guarded([&] { experiment->aggregate = etmapg::run_experiment(experiment->config).aggregate; });
}

etm_status etm_experiment_aggregate_json(const etm_experiment* experiment, char* buf, size_t capacity,
                                         size_t* needed) {
  if (!experiment) return null_arg("experiment");
  if (experiment->aggregate.is_null()) {
    last_error = "experiment has not been run";
    return ETM_ERR_CONTRACT;
  }
  return copy_out(experiment->aggregate.dump(2), buf, capacity, needed);
}

etm_status etm_evaluate(const char* checkpoint_path, const char* env, unsigned long episodes,
                        unsigned long long seed, const char* out_dir, etm_eval_summary* out) {
  if (!checkpoint_path) return null_arg("checkpoint_path");
  if (!out) return null_arg("out");
  return guarded([&] {
    const etmapg::Checkpoint cp = etmapg::Checkpoint::load(checkpoint_path);
    const std::vector<etmapg::DualHeadPolicy> policies = etmapg::load_policies(cp);
    etmapg::ExperimentConfig config;
    try {
      config = etmapg::ExperimentConfig::from_json(cp.metadata.at("config"));
    } catch (const nlohmann::json::exception& e) {
      throw etmapg::ConfigError(std::string("checkpoint has no training config: ") + e.what());
    }
    if (env) config.env = etmapg::parse_env_kind(env);
    const etmapg::EvalResult r = etmapg::evaluate_policies(policies, config.env, config.env_options, config.variant,
                                                           episodes, seed, config.ma_window);
    if (out_dir) {
      etmapg::write_eval_outputs(out_dir, r, config.env, config.ma_window, config.trace);
      std::ofstream f(std::filesystem::path(out_dir) / "eval.json");
      if (!f) throw etmapg::IoError(std::string("cannot write eval.json in ") + out_dir);
      f << etmapg::eval_to_json(r).dump(2) << '\n';
    }
    etm_eval_summary s{};
    s.episodes = r.episodes;
    s.episode_length = r.episode_length;
    s.mean_return = r.mean_return;
    s.mean_step_reward = r.episodes ? r.mean_return / static_cast<double>(r.episode_length) : 0.0;
    s.trigger_rate = r.trigger_rate;
    s.trigger_reduction = r.trigger_reduction;
    s.inter_event_min = r.inter_event.min;
    s.inter_event_mean = r.inter_event.mean;
    s.inter_event_max = r.inter_event.max;
    s.has_state_metrics = r.final_abs_state.has_value() ? 1 : 0;
    s.final_abs_state = r.final_abs_state.value_or(0.0);
    s.lyapunov_final = r.final_lyapunov.value_or(0.0);
    *out = s;
  });
}

etm_status etm_grid(const char* dir, const char* const* keys, const char* const* values, size_t count,
                    int verbose) {
  if (!dir) return null_arg("dir");
  if (count > 0 && (!keys || !values)) return null_arg("keys/values");
  return guarded([&] {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (size_t i = 0; i < count; ++i) {
      if (!keys[i] || !values[i]) throw etmapg::ConfigError("override " + std::to_string(i) + " is NULL");
      overrides.emplace_back(keys[i], values[i]);
    }
    etmapg::run_grid(dir, overrides, verbose != 0);
  });
}

}  // extern "C"
