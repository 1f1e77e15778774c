#pragma once

// JSON run configuration shared by the command-line tool.
//
// {
//   "model": {"family": "gaussian", "mu0": 1, "var0": 3, "var_x": 1},
//   "hazard_beta": 100,
//   "fidelities": [{"zeta": 1, "cost": 2}, {"zeta": 0.5, "cost": 1}],
//   "policy": {"name": "info-rate"},
//   "seed": 0,
//   "generator": {"T": 500},
//   "tune": {"target_lf": 0.5},
//   "ablation": {"cost_grid": [1.5, 2, 2.5]}
// }
//
// Unknown keys are rejected at every level.

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfbocd/core.hpp"
#include "mfbocd/eval.hpp"
#include "mfbocd/models.hpp"
#include "mfbocd/policy.hpp"
#include "mfbocd/synth.hpp"

namespace mfbocd {

class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class PolicyKind { kInfoRate, kMargin, kRandom, kHighOnly, kLowOnly };

inline PolicyKind parse_policy_kind(const std::string& name) {
  if (name == "info-rate") return PolicyKind::kInfoRate;
  if (name == "margin") return PolicyKind::kMargin;
  if (name == "random") return PolicyKind::kRandom;
  if (name == "fixed-hf") return PolicyKind::kHighOnly;
  if (name == "fixed-lf") return PolicyKind::kLowOnly;
  throw ConfigError("unknown policy '" + name + "' (info-rate, margin, random, fixed-hf, fixed-lf)");
}

inline const char* to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::kInfoRate: return "info-rate";
    case PolicyKind::kMargin: return "margin";
    case PolicyKind::kRandom: return "random";
    case PolicyKind::kHighOnly: return "fixed-hf";
    case PolicyKind::kLowOnly: return "fixed-lf";
  }
  return "?";
}

enum class PosteriorFormat { kAuto, kDense, kSparse };

struct PolicyConfig {
  PolicyKind kind = PolicyKind::kInfoRate;
  double delta = 0.0;
  double p_lf = 0.5;
  /// When set, overrides the low-fidelity weight as a multiple of the high one.
  std::optional<double> weight_ratio;
};

struct GeneratorSection {
  std::size_t T = 500;
  std::optional<double> beta;
  std::optional<std::uint64_t> seed;
};

struct TuneSection {
  double target_lf = 0.5;
  double tolerance = 0.05;
  std::size_t heldout_streams = 5;
  double bracket_lo = 1e-4;
  double bracket_hi = 1e4;
  std::size_t max_steps = 30;
};

struct AblationSection {
  std::vector<double> cost_grid{2.0};
  std::size_t n_trials = 200;
  std::size_t threads = 1;
  std::size_t T = 500;
  Baseline baseline = Baseline::kRandom;
};

struct RunConfig {
  ModelConfig model;
  double hazard_beta = 100.0;
  std::vector<FidelitySpec> fidelities{{1.0, 2.0, 1.0}, {0.5, 1.0, 1.0}};
  PolicyConfig policy;
  std::optional<std::size_t> prune_k;
  InfoGainOptions info;
  std::uint64_t seed = 0;
  std::optional<std::string> input;
  /// Binarization thresholds applied to input values (one, or one per fidelity).
  std::optional<std::vector<double>> threshold;
  std::string output_dir = "out";
  PosteriorFormat posterior_format = PosteriorFormat::kAuto;
  GeneratorSection generator;
  TuneSection tune;
  AblationSection ablation;

  FidelitySet fidelity_set() const {
    FidelitySet fids(fidelities);
    if (policy.weight_ratio && fids.size() == 2) {
      fids = fids.with_weight(fids.high_index(), 1.0).with_weight(fids.low_index(), *policy.weight_ratio);
    }
    return fids;
  }

  Hazard hazard() const { return Hazard(hazard_beta); }

  RunOptions run_options() const { return RunOptions{prune_k}; }

  /// Synthetic stream settings derived from the model and fidelity sections.
  GeneratorConfig generator_config(std::uint64_t stream_seed) const {
    GeneratorConfig g;
    g.family = model.family;
    g.T = generator.T;
    g.beta = generator.beta.value_or(hazard_beta);
    g.gaussian = model.gaussian;
    g.bernoulli = model.bernoulli;
    g.zetas.clear();
    for (const FidelitySpec& f : fidelities) g.zetas.push_back(f.zeta);
    g.seed = stream_seed;
    return g;
  }

  std::uint64_t generator_seed() const { return generator.seed.value_or(seed); }

  /// Builds the policy for a two-fidelity or general set.
  Policy make_policy() const {
    const FidelitySet fids = fidelity_set();
    switch (policy.kind) {
      case PolicyKind::kInfoRate: return InfoRatePolicy{info};
      case PolicyKind::kMargin: return MarginPolicy{policy.delta, info};
      case PolicyKind::kRandom: return RandomPolicy{policy.p_lf, derive_seed(seed, 0x5eed)};
      case PolicyKind::kHighOnly: return FixedPolicy{fids.high_index()};
      case PolicyKind::kLowOnly: return FixedPolicy{fids.low_index()};
    }
    throw ConfigError("unhandled policy");
  }

  void validate() const {
    (void)fidelity_set();
    (void)hazard();
    if (model.family == ModelFamily::kGaussian) {
      model.gaussian.validate();
    } else {
      model.bernoulli.validate();
    }
    if (prune_k && *prune_k < 2) throw ConfigError("prune_k must be at least 2");
    if (info.quadrature_nodes < 2) throw ConfigError("quadrature_nodes must be at least 2");
    if (!(info.window_sd > 0.0)) throw ConfigError("window_sd must be positive");
    if (!(policy.p_lf >= 0.0 && policy.p_lf <= 1.0)) throw ConfigError("policy.p_lf must lie in [0, 1]");
    if (policy.weight_ratio && !(*policy.weight_ratio >= 0.0)) {
      throw ConfigError("policy.weight_ratio must be nonnegative");
    }
    if (policy.kind != PolicyKind::kInfoRate && fidelities.size() != 2) {
      throw ConfigError(std::string(to_string(policy.kind)) + " policy needs exactly two fidelities");
    }
    if (generator.T < 1) throw ConfigError("generator.T must be at least 1");
    if (!(tune.target_lf >= 0.0 && tune.target_lf <= 1.0)) throw ConfigError("tune.target_lf must lie in [0, 1]");
    if (tune.heldout_streams < 1) throw ConfigError("tune.heldout_streams must be at least 1");
    if (ablation.cost_grid.empty()) throw ConfigError("ablation.cost_grid must not be empty");
    if (ablation.n_trials < 2) throw ConfigError("ablation.n_trials must be at least 2");
  }
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

template <class T>
void read(const json& obj, const char* key, std::optional<T>& out, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return;
  T v{};
  read(obj, key, v, where);
  out = v;
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::read;
  RunConfig c;
  check_keys(j, "config",
             {"model", "hazard_beta", "fidelities", "policy", "prune_k", "quadrature_nodes", "window_sd",
              "seed", "input", "threshold", "output_dir", "posterior_format", "generator", "tune", "ablation"});

  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m, "model", {"family", "mu0", "var0", "var_x", "alpha0", "beta0"});
    std::string family = "gaussian";
    read(m, "family", family, "model");
    if (family == "gaussian") {
      c.model.family = ModelFamily::kGaussian;
      if (m.contains("alpha0") || m.contains("beta0")) throw ConfigError("alpha0/beta0 belong to the bernoulli family");
    } else if (family == "bernoulli") {
      c.model.family = ModelFamily::kBernoulli;
      if (m.contains("mu0") || m.contains("var0") || m.contains("var_x")) {
        throw ConfigError("mu0/var0/var_x belong to the gaussian family");
      }
    } else {
      throw ConfigError("unknown model family '" + family + "'");
    }
    c.model.gaussian = {1.0, 3.0, 1.0};
    read(m, "mu0", c.model.gaussian.mu0, "model");
    read(m, "var0", c.model.gaussian.var0, "model");
    read(m, "var_x", c.model.gaussian.var_x, "model");
    read(m, "alpha0", c.model.bernoulli.alpha0, "model");
    read(m, "beta0", c.model.bernoulli.beta0, "model");
  } else {
    c.model.gaussian = {1.0, 3.0, 1.0};
  }

  read(j, "hazard_beta", c.hazard_beta, "config");
  if (j.contains("fidelities")) {
    if (!j["fidelities"].is_array()) throw ConfigError("fidelities must be an array");
    c.fidelities.clear();
    for (const auto& f : j["fidelities"]) {
      check_keys(f, "fidelity", {"zeta", "cost", "weight"});
      if (!f.contains("zeta") || !f.contains("cost")) throw ConfigError("fidelity needs zeta and cost");
      FidelitySpec s;
      read(f, "zeta", s.zeta, "fidelity");
      read(f, "cost", s.cost, "fidelity");
      read(f, "weight", s.weight, "fidelity");
      c.fidelities.push_back(s);
    }
  }

  if (j.contains("policy")) {
    const auto& p = j["policy"];
    check_keys(p, "policy", {"name", "delta", "p_lf", "weight_ratio"});
    std::string name = "info-rate";
    read(p, "name", name, "policy");
    c.policy.kind = parse_policy_kind(name);
    read(p, "delta", c.policy.delta, "policy");
    read(p, "p_lf", c.policy.p_lf, "policy");
    read(p, "weight_ratio", c.policy.weight_ratio, "policy");
  }

  read(j, "prune_k", c.prune_k, "config");
  read(j, "quadrature_nodes", c.info.quadrature_nodes, "config");
  read(j, "window_sd", c.info.window_sd, "config");
  read(j, "seed", c.seed, "config");
  read(j, "input", c.input, "config");
  if (j.contains("threshold") && !j["threshold"].is_null()) {
    if (j["threshold"].is_number()) {
      c.threshold = std::vector<double>{j["threshold"].get<double>()};
    } else {
      std::vector<double> thr;
      read(j, "threshold", thr, "config");
      c.threshold = std::move(thr);
    }
  }
  read(j, "output_dir", c.output_dir, "config");
  if (j.contains("posterior_format")) {
    std::string f;
    read(j, "posterior_format", f, "config");
    if (f == "auto") {
      c.posterior_format = PosteriorFormat::kAuto;
    } else if (f == "dense") {
      c.posterior_format = PosteriorFormat::kDense;
    } else if (f == "sparse") {
      c.posterior_format = PosteriorFormat::kSparse;
    } else {
      throw ConfigError("posterior_format must be auto, dense or sparse");
    }
  }

  if (j.contains("generator")) {
    const auto& g = j["generator"];
    check_keys(g, "generator", {"T", "beta", "seed"});
    read(g, "T", c.generator.T, "generator");
    read(g, "beta", c.generator.beta, "generator");
    read(g, "seed", c.generator.seed, "generator");
  }
  if (j.contains("tune")) {
    const auto& t = j["tune"];
    check_keys(t, "tune", {"target_lf", "tolerance", "heldout_streams", "bracket_lo", "bracket_hi", "max_steps"});
    read(t, "target_lf", c.tune.target_lf, "tune");
    read(t, "tolerance", c.tune.tolerance, "tune");
    read(t, "heldout_streams", c.tune.heldout_streams, "tune");
    read(t, "bracket_lo", c.tune.bracket_lo, "tune");
    read(t, "bracket_hi", c.tune.bracket_hi, "tune");
    read(t, "max_steps", c.tune.max_steps, "tune");
  }
  if (j.contains("ablation")) {
    const auto& a = j["ablation"];
    check_keys(a, "ablation", {"cost_grid", "n_trials", "threads", "T", "baseline"});
    read(a, "cost_grid", c.ablation.cost_grid, "ablation");
    read(a, "n_trials", c.ablation.n_trials, "ablation");
    read(a, "threads", c.ablation.threads, "ablation");
    read(a, "T", c.ablation.T, "ablation");
    std::string baseline = "random";
    read(a, "baseline", baseline, "ablation");
    if (baseline == "random") {
      c.ablation.baseline = Baseline::kRandom;
    } else if (baseline == "info") {
      c.ablation.baseline = Baseline::kInfo;
    } else {
      throw ConfigError("ablation.baseline must be random or info");
    }
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(j);
}

/// Ablation settings for a two-fidelity run configuration. The first cost of
/// each grid cell replaces the high-fidelity cost.
inline AblationConfig ablation_config(const RunConfig& c) {
  const FidelitySet fids = c.fidelity_set();
  if (fids.size() != 2) throw ConfigError("ablation needs exactly two fidelities");
  AblationConfig a;
  a.model = c.model;
  a.beta = c.generator.beta.value_or(c.hazard_beta);
  a.zeta_hf = fids[fids.high_index()].zeta;
  a.zeta_lf = fids[fids.low_index()].zeta;
  a.cost_lf = fids[fids.low_index()].cost;
  a.cost_grid = c.ablation.cost_grid;
  a.T = c.ablation.T;
  a.n_trials = c.ablation.n_trials;
  a.seed = c.seed;
  a.threads = c.ablation.threads;
  a.info = c.info;
  a.run = c.run_options();
  a.baseline = c.ablation.baseline;
  return a;
}

}  // namespace mfbocd
