#pragma once

// Run configuration: a flat "key = value" text format with bracketed sections,
// chosen so runs diff cleanly and need no parser dependency. Unknown sections
// and keys are errors; the resolved form (all defaults applied) can be echoed
// back out with full float precision so a run directory describes itself.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "mixsig/cls.hpp"
#include "mixsig/dataset.hpp"
#include "mixsig/training.hpp"

namespace mixsig {

enum class Method { ws_gplvm, ws_gplvm_ind, cls, cls_gp, pls };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::ws_gplvm: return "ws-gplvm";
    case Method::ws_gplvm_ind: return "ws-gplvm-ind";
    case Method::cls: return "cls";
    case Method::cls_gp: return "cls-gp";
    case Method::pls: return "pls";
  }
  throw Error("method_name: bad enum");
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::ws_gplvm, Method::ws_gplvm_ind, Method::cls, Method::cls_gp,
                   Method::pls})
    if (s == method_name(m)) return m;
  throw ConfigError("unknown method '" + s +
                    "' (expected ws-gplvm, ws-gplvm-ind, cls, cls-gp, or pls)");
}

struct DataConfig {
  std::string source = "toy";  // toy | csv
  std::string y_train, r_train, y_test, r_test_truth, lambda;
  bool snv = false;
};

struct PlsConfig {
  int components = 0;  // 0 selects by cross-validation
  int folds = 5;
  int max_components = 10;
};

struct EvaluateConfig {
  std::string predictions, truth;
};

struct RunConfig {
  Method method = Method::ws_gplvm;
  std::uint64_t seed = 0;
  int jobs = 1;
  WeightMode mode = WeightMode::regression;
  DataConfig data;
  ToyConfig toy;
  FitConfig fit;
  ClsConfig cls;
  PlsConfig pls;
  EvaluateConfig evaluate;
};

namespace detail {

inline double parse_double_value(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("bad numeric value for " + key + ": '" + v + "'");
  return x;
}

inline long long parse_int_value(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("bad integer value for " + key + ": '" + v + "'");
  return x;
}

inline bool parse_bool_value(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("bad boolean value for " + key + ": '" + v + "' (expected true or false)");
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  using Handler = std::function<void(const std::string&, const std::string&)>;
  std::map<std::string, Handler> keys;
  auto add_int = [&](const std::string& name, auto& field) {
    keys[name] = [&field](const std::string& key, const std::string& v) {
      field = static_cast<std::decay_t<decltype(field)>>(detail::parse_int_value(key, v));
    };
  };
  auto add_double = [&](const std::string& name, double& field) {
    keys[name] = [&field](const std::string& key, const std::string& v) {
      field = detail::parse_double_value(key, v);
    };
  };
  auto add_bool = [&](const std::string& name, bool& field) {
    keys[name] = [&field](const std::string& key, const std::string& v) {
      field = detail::parse_bool_value(key, v);
    };
  };
  auto add_string = [&](const std::string& name, std::string& field) {
    keys[name] = [&field](const std::string&, const std::string& v) { field = v; };
  };

  keys["run.method"] = [&cfg](const std::string&, const std::string& v) {
    cfg.method = parse_method(v);
  };
  add_int("run.seed", cfg.seed);
  add_int("run.jobs", cfg.jobs);
  keys["run.mode"] = [&cfg](const std::string& key, const std::string& v) {
    if (v == "regression")
      cfg.mode = WeightMode::regression;
    else if (v == "classification")
      cfg.mode = WeightMode::classification;
    else
      throw ConfigError("bad value for " + key + ": '" + v +
                        "' (expected regression or classification)");
  };

  keys["data.source"] = [&cfg](const std::string& key, const std::string& v) {
    if (v != "toy" && v != "csv")
      throw ConfigError("bad value for " + key + ": '" + v + "' (expected toy or csv)");
    cfg.data.source = v;
  };
  add_string("data.y_train", cfg.data.y_train);
  add_string("data.r_train", cfg.data.r_train);
  add_string("data.y_test", cfg.data.y_test);
  add_string("data.r_test_truth", cfg.data.r_test_truth);
  add_string("data.lambda", cfg.data.lambda);
  add_bool("data.snv", cfg.data.snv);

  add_int("toy.n_train", cfg.toy.n_train);
  add_int("toy.n_test", cfg.toy.n_test);
  add_int("toy.m", cfg.toy.m);
  add_double("toy.noise_sigma", cfg.toy.noise_sigma);
  add_double("toy.peak_center_1", cfg.toy.peak_center_1);
  add_double("toy.peak_center_2", cfg.toy.peak_center_2);
  add_double("toy.center_shift", cfg.toy.center_shift);
  add_double("toy.amp_slope", cfg.toy.amp_slope);
  add_double("toy.peak_width", cfg.toy.peak_width);

  add_int("fit.latent_dim", cfg.fit.latent_dim);
  add_int("fit.n_inducing_latent", cfg.fit.n_inducing_latent);
  add_int("fit.n_inducing_wavelength", cfg.fit.n_inducing_wavelength);
  add_int("fit.stage1_steps", cfg.fit.stage1_steps);
  add_double("fit.stage1_learning_rate", cfg.fit.stage1_learning_rate);
  add_int("fit.anneal_steps", cfg.fit.anneal_steps);
  add_int("fit.quasi_newton_steps_per_anneal", cfg.fit.quasi_newton_steps_per_anneal);
  add_double("fit.stage3_rel_tol", cfg.fit.stage3_rel_tol);
  add_int("fit.stage3_max_iters", cfg.fit.stage3_max_iters);
  add_int("fit.restarts", cfg.fit.restarts);
  keys["fit.skip_stage1"] = [&cfg](const std::string& key, const std::string& v) {
    if (v == "auto")
      cfg.fit.skip_stage1.reset();
    else
      cfg.fit.skip_stage1 = detail::parse_bool_value(key, v);
  };
  add_bool("fit.freeze_latents_stage1", cfg.fit.freeze_latents_stage1);
  add_double("fit.sigma_f2_init_lo", cfg.fit.sigma_f2_init_lo);
  add_double("fit.sigma_f2_init_hi", cfg.fit.sigma_f2_init_hi);
  add_double("fit.beta_init_lo", cfg.fit.beta_init_lo);
  add_double("fit.beta_init_hi", cfg.fit.beta_init_hi);

  add_int("cls.max_iters", cfg.cls.max_iters);
  add_double("cls.rel_tol", cfg.cls.rel_tol);
  add_int("cls.restarts", cfg.cls.restarts);
  add_double("cls.sigma_f2_init_lo", cfg.cls.sigma_f2_init_lo);
  add_double("cls.sigma_f2_init_hi", cfg.cls.sigma_f2_init_hi);

  add_int("pls.components", cfg.pls.components);
  add_int("pls.folds", cfg.pls.folds);
  add_int("pls.max_components", cfg.pls.max_components);

  add_string("evaluate.predictions", cfg.evaluate.predictions);
  add_string("evaluate.truth", cfg.evaluate.truth);

  static const char* known_sections[] = {"run", "data", "toy", "fit", "cls", "pls", "evaluate"};

  std::istringstream in(text);
  std::string line, section;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError("malformed section header at line " + std::to_string(lineno));
      section = detail::trim(t.substr(1, t.size() - 2));
      bool ok = false;
      for (const char* s : known_sections) ok = ok || section == s;
      if (!ok) throw ConfigError("unknown section [" + section + "]");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected 'key = value' at line " + std::to_string(lineno));
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (section.empty()) throw ConfigError("key '" + key + "' appears before any section");
    const std::string full = section + "." + key;
    const auto it = keys.find(full);
    if (it == keys.end()) throw ConfigError("unknown key '" + key + "' in section [" + section + "]");
    it->second(full, value);
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

// Range checks with messages that name the offending key.
inline void validate_run_config(const RunConfig& cfg) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(cfg.jobs >= 1, "run.jobs must be >= 1");
  require(cfg.toy.n_train >= 0, "toy.n_train must be >= 0");
  require(cfg.toy.n_test >= 0, "toy.n_test must be >= 0");
  require(cfg.toy.m >= 2, "toy.m must be >= 2");
  require(cfg.toy.noise_sigma >= 0.0, "toy.noise_sigma must be >= 0");
  require(cfg.toy.peak_width > 0.0, "toy.peak_width must be > 0");
  require(cfg.fit.latent_dim >= 0, "fit.latent_dim must be >= 0");
  require(cfg.fit.n_inducing_latent >= 1, "fit.n_inducing_latent must be >= 1");
  require(cfg.fit.n_inducing_wavelength >= 1, "fit.n_inducing_wavelength must be >= 1");
  require(cfg.fit.stage1_steps >= 0, "fit.stage1_steps must be >= 0");
  require(cfg.fit.stage1_learning_rate > 0.0, "fit.stage1_learning_rate must be > 0");
  require(cfg.fit.anneal_steps >= 0, "fit.anneal_steps must be >= 0");
  require(cfg.fit.stage3_max_iters >= 1, "fit.stage3_max_iters must be >= 1");
  require(cfg.fit.restarts >= 1, "fit.restarts must be >= 1");
  require(cfg.cls.max_iters >= 1, "cls.max_iters must be >= 1");
  require(cfg.cls.restarts >= 1, "cls.restarts must be >= 1");
  require(cfg.pls.components >= 0, "pls.components must be >= 0");
  require(cfg.pls.folds >= 2, "pls.folds must be >= 2");
  require(cfg.pls.max_components >= 1, "pls.max_components must be >= 1");
  if (cfg.data.source == "csv")
    require(!cfg.data.y_train.empty() || !cfg.data.y_test.empty(),
            "data.y_train or data.y_test is required when data.source = csv");
}

inline std::string resolved_config_text(const RunConfig& cfg) {
  std::ostringstream out;
  auto kv = [&out](const char* key, const std::string& v) { out << key << " = " << v << "\n"; };
  auto kd = [&](const char* key, double v) { kv(key, format_double(v)); };
  auto ki = [&](const char* key, long long v) { kv(key, std::to_string(v)); };
  auto kb = [&](const char* key, bool v) { kv(key, v ? "true" : "false"); };

  out << "[run]\n";
  kv("method", method_name(cfg.method));
  kv("seed", std::to_string(cfg.seed));
  ki("jobs", cfg.jobs);
  kv("mode", cfg.mode == WeightMode::regression ? "regression" : "classification");

  out << "\n[data]\n";
  kv("source", cfg.data.source);
  kv("y_train", cfg.data.y_train);
  kv("r_train", cfg.data.r_train);
  kv("y_test", cfg.data.y_test);
  kv("r_test_truth", cfg.data.r_test_truth);
  kv("lambda", cfg.data.lambda);
  kb("snv", cfg.data.snv);

  out << "\n[toy]\n";
  ki("n_train", cfg.toy.n_train);
  ki("n_test", cfg.toy.n_test);
  ki("m", cfg.toy.m);
  kd("noise_sigma", cfg.toy.noise_sigma);
  kd("peak_center_1", cfg.toy.peak_center_1);
  kd("peak_center_2", cfg.toy.peak_center_2);
  kd("center_shift", cfg.toy.center_shift);
  kd("amp_slope", cfg.toy.amp_slope);
  kd("peak_width", cfg.toy.peak_width);

  out << "\n[fit]\n";
  ki("latent_dim", cfg.fit.latent_dim);
  ki("n_inducing_latent", cfg.fit.n_inducing_latent);
  ki("n_inducing_wavelength", cfg.fit.n_inducing_wavelength);
  ki("stage1_steps", cfg.fit.stage1_steps);
  kd("stage1_learning_rate", cfg.fit.stage1_learning_rate);
  ki("anneal_steps", cfg.fit.anneal_steps);
  ki("quasi_newton_steps_per_anneal", cfg.fit.quasi_newton_steps_per_anneal);
  kd("stage3_rel_tol", cfg.fit.stage3_rel_tol);
  ki("stage3_max_iters", cfg.fit.stage3_max_iters);
  ki("restarts", cfg.fit.restarts);
  kv("skip_stage1", cfg.fit.skip_stage1 ? (*cfg.fit.skip_stage1 ? "true" : "false") : "auto");
  kb("freeze_latents_stage1", cfg.fit.freeze_latents_stage1);
  kd("sigma_f2_init_lo", cfg.fit.sigma_f2_init_lo);
  kd("sigma_f2_init_hi", cfg.fit.sigma_f2_init_hi);
  kd("beta_init_lo", cfg.fit.beta_init_lo);
  kd("beta_init_hi", cfg.fit.beta_init_hi);

  out << "\n[cls]\n";
  ki("max_iters", cfg.cls.max_iters);
  kd("rel_tol", cfg.cls.rel_tol);
  ki("restarts", cfg.cls.restarts);
  kd("sigma_f2_init_lo", cfg.cls.sigma_f2_init_lo);
  kd("sigma_f2_init_hi", cfg.cls.sigma_f2_init_hi);

  out << "\n[pls]\n";
  ki("components", cfg.pls.components);
  ki("folds", cfg.pls.folds);
  ki("max_components", cfg.pls.max_components);

  out << "\n[evaluate]\n";
  kv("predictions", cfg.evaluate.predictions);
  kv("truth", cfg.evaluate.truth);
  return out.str();
}

}  // namespace mixsig
