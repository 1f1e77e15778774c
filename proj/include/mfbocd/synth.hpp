#pragma once

// Synthetic changepoint streams with paired multi-fidelity channels.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mfbocd/core.hpp"
#include "mfbocd/models.hpp"

namespace mfbocd {

/// splitmix64 finalizer, used to derive independent per-trial seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

struct GeneratorConfig {
  ModelFamily family = ModelFamily::kGaussian;
  std::size_t T = 500;
  /// Mean segment length; 1 puts a changepoint at every step.
  double beta = 100.0;
  GaussianParams gaussian{1.0, 3.0, 1.0};
  BernoulliParams bernoulli{1.0, 1.0};
  std::vector<double> zetas{1.0, 0.5};
  std::uint64_t seed = 0;

  void validate() const {
    if (T < 1) throw InvalidParameter("generator needs T >= 1");
    if (!(beta >= 1.0) || !std::isfinite(beta)) throw InvalidParameter("generator beta must be >= 1");
    if (zetas.empty()) throw InvalidParameter("generator needs at least one fidelity");
    for (double z : zetas) {
      if (!(z >= 0.0 && z <= 1.0)) throw InvalidParameter("generator zeta must lie in [0, 1]");
      if (family == ModelFamily::kGaussian && z == 0.0) {
        throw InvalidParameter("gaussian generator cannot sample at zeta = 0");
      }
    }
    if (family == ModelFamily::kGaussian) {
      gaussian.validate();
    } else {
      bernoulli.validate();
    }
  }
};

struct SyntheticData {
  Stream data;
  std::vector<bool> is_cp;   // per t, 0-based
  std::vector<double> theta; // per t, 0-based
};

/// Draws theta from the prior at every changepoint (probability 1/beta per
/// step, starting from a prior draw) and emits one observation per fidelity.
/// Gaussian channels are independent N(theta, var_x / zeta); the Bernoulli
/// high channel draws Bern(theta) and each channel flips that shared outcome
/// with probability 1 - zeta.
inline SyntheticData generate(const GeneratorConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> stdnorm(0.0, 1.0);

  auto draw_theta = [&]() {
    if (cfg.family == ModelFamily::kGaussian) {
      return cfg.gaussian.mu0 + std::sqrt(cfg.gaussian.var0) * stdnorm(rng);
    }
    std::gamma_distribution<double> ga(cfg.bernoulli.alpha0, 1.0);
    std::gamma_distribution<double> gb(cfg.bernoulli.beta0, 1.0);
    const double a = ga(rng);
    const double b = gb(rng);
    return a / (a + b);
  };

  SyntheticData out;
  out.data.reserve(cfg.T);
  out.is_cp.reserve(cfg.T);
  out.theta.reserve(cfg.T);
  const double hazard = 1.0 / cfg.beta;
  double theta = draw_theta();
  for (std::size_t t = 1; t <= cfg.T; ++t) {
    const bool cp = unif(rng) < hazard;
    if (cp) theta = draw_theta();
    Datum d;
    d.t = t;
    d.values.resize(cfg.zetas.size());
    if (cfg.family == ModelFamily::kGaussian) {
      for (std::size_t j = 0; j < cfg.zetas.size(); ++j) {
        d.values[j] = theta + std::sqrt(cfg.gaussian.var_x / cfg.zetas[j]) * stdnorm(rng);
      }
    } else {
      const double event = unif(rng) < theta ? 1.0 : 0.0;
      for (std::size_t j = 0; j < cfg.zetas.size(); ++j) {
        const bool flip = unif(rng) < 1.0 - cfg.zetas[j];
        d.values[j] = flip ? 1.0 - event : event;
      }
    }
    out.data.push_back(std::move(d));
    out.is_cp.push_back(cp);
    out.theta.push_back(theta);
  }
  return out;
}

}  // namespace mfbocd
