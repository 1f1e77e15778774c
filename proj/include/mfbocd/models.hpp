#pragma once

// Conjugate multi-fidelity observation models. Each model keeps one set of
// sufficient statistics per run-length hypothesis, ordered like the detector's
// message: index 0 is the most recent changepoint hypothesis (prior only),
// index i conditions on the i most recent observations (before pruning).
//
// A datum observed at fidelity zeta enters as p(x | theta)^zeta, so the
// natural statistics advance by (zeta * u(x), zeta) instead of (u(x), 1).

#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mfbocd/core.hpp"

namespace mfbocd {

enum class ModelFamily { kGaussian, kBernoulli };

inline const char* to_string(ModelFamily f) {
  return f == ModelFamily::kGaussian ? "gaussian" : "bernoulli";
}

template <class M>
concept MFModel = requires(M m, const M cm, double x, double zeta, std::vector<double>& out,
                           std::span<const std::size_t> idx) {
  { cm.size() } -> std::convertible_to<std::size_t>;
  cm.validate(x);
  cm.log_pred_prob(x, zeta, out);
  m.update(x, zeta);
  { cm.means() } -> std::convertible_to<std::span<const double>>;
  m.keep(idx);
  { M::kFamily } -> std::convertible_to<ModelFamily>;
  { M::kPredFlops } -> std::convertible_to<long>;
  { M::kUpdateFlops } -> std::convertible_to<long>;
};

namespace detail {

// Keeps the entries of `v` at the (ascending) positions in `idx`.
template <class T>
void keep_indices(std::vector<T>& v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v.at(i));
  v = std::move(out);
}

inline void check_zeta(double zeta) {
  if (!(zeta >= 0.0 && zeta <= 1.0)) {
    throw InvalidParameter("zeta must lie in [0, 1], got " + std::to_string(zeta));
  }
}

}  // namespace detail

// Gaussian with known observation variance -----------------------------------

struct GaussianParams {
  double mu0 = 0.0;
  double var0 = 1.0;
  double var_x = 1.0;

  void validate() const {
    if (!std::isfinite(mu0)) throw InvalidParameter("gaussian mu0 must be finite");
    if (!(var0 > 0.0) || !std::isfinite(var0)) {
      throw InvalidParameter("gaussian var0 must be positive");
    }
    if (!(var_x > 0.0) || !std::isfinite(var_x)) {
      throw InvalidParameter("gaussian var_x must be positive");
    }
  }
};

/// Normal likelihood with known variance and a normal prior on the mean.
/// Per hypothesis: precision 1/var0 + sum(zeta_i)/var_x and the matching
/// posterior mean. The predictive at fidelity zeta is
/// N(mu_l, var_x / zeta + var_l); at zeta = 0 the likelihood is flat.
class GaussianKnownVariance {
 public:
  static constexpr ModelFamily kFamily = ModelFamily::kGaussian;
  // Per-hypothesis flop counts, see cost.hpp for the counting convention.
  static constexpr long kPredFlops = 10;
  static constexpr long kUpdateFlops = 7;

  explicit GaussianKnownVariance(GaussianParams p)
      : params_(p), prec_{1.0 / p.var0}, mean_{p.mu0} {
    p.validate();
  }

  const GaussianParams& params() const { return params_; }
  std::size_t size() const { return mean_.size(); }
  std::span<const double> means() const { return mean_; }
  std::span<const double> precisions() const { return prec_; }
  double posterior_variance(std::size_t i) const { return 1.0 / prec_.at(i); }

  double predictive_variance(std::size_t i, double zeta) const {
    return params_.var_x / zeta + 1.0 / prec_[i];
  }

  void validate(double x) const {
    if (!std::isfinite(x)) throw InvalidDatum("gaussian observation must be finite");
  }

  void log_pred_prob(double x, double zeta, std::vector<double>& out) const {
    validate(x);
    detail::check_zeta(zeta);
    out.resize(size());
    if (zeta == 0.0) {
      std::fill(out.begin(), out.end(), 0.0);
      return;
    }
    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    for (std::size_t i = 0; i < size(); ++i) {
      const double var = params_.var_x / zeta + 1.0 / prec_[i];
      const double d = x - mean_[i];
      out[i] = -0.5 * (kLog2Pi + std::log(var) + d * d / var);
    }
  }

  /// Folds (x, zeta) into every hypothesis, then opens a fresh changepoint
  /// hypothesis carrying only the prior.
  void update(double x, double zeta) {
    validate(x);
    detail::check_zeta(zeta);
    if (zeta > 0.0) {
      const double obs_prec = zeta / params_.var_x;
      const double obs_info = zeta * x / params_.var_x;
      for (std::size_t i = 0; i < size(); ++i) {
        const double new_prec = prec_[i] + obs_prec;
        mean_[i] = (mean_[i] * prec_[i] + obs_info) / new_prec;
        prec_[i] = new_prec;
      }
    }
    prec_.insert(prec_.begin(), 1.0 / params_.var0);
    mean_.insert(mean_.begin(), params_.mu0);
  }

  void keep(std::span<const std::size_t> idx) {
    detail::keep_indices(prec_, idx);
    detail::keep_indices(mean_, idx);
  }

 private:
  GaussianParams params_;
  std::vector<double> prec_;
  std::vector<double> mean_;
};

// Beta-Bernoulli ---------------------------------------------------------------

struct BernoulliParams {
  double alpha0 = 1.0;
  double beta0 = 1.0;

  void validate() const {
    if (!(alpha0 > 0.0) || !std::isfinite(alpha0) || !(beta0 > 0.0) || !std::isfinite(beta0)) {
      throw InvalidParameter("beta prior pseudo-counts must be positive");
    }
  }
};

/// log B(a, b) via log-gamma.
inline double log_beta_fn(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

/// Bernoulli likelihood with a Beta prior. Per hypothesis
/// alpha_l = alpha0 + sum(zeta_i x_i), beta_l = beta0 + sum(zeta_i (1 - x_i)).
/// The predictive mass B(alpha + zeta x, beta + zeta (1 - x)) / B(alpha, beta)
/// is not normalized over x when zeta < 1; it is used as a likelihood weight.
class BetaBernoulli {
 public:
  static constexpr ModelFamily kFamily = ModelFamily::kBernoulli;
  static constexpr long kPredFlops = 9;
  static constexpr long kUpdateFlops = 4;

  explicit BetaBernoulli(BernoulliParams p) : params_(p), alpha_{p.alpha0}, beta_{p.beta0} {
    p.validate();
    mean_.push_back(p.alpha0 / (p.alpha0 + p.beta0));
  }

  const BernoulliParams& params() const { return params_; }
  std::size_t size() const { return alpha_.size(); }
  std::span<const double> alphas() const { return alpha_; }
  std::span<const double> betas() const { return beta_; }
  std::span<const double> means() const { return mean_; }

  void validate(double x) const {
    if (x != 0.0 && x != 1.0) {
      throw InvalidDatum("bernoulli observation must be 0 or 1, got " + std::to_string(x));
    }
  }

  /// Unnormalized log predictive mass of x under hypothesis i.
  double log_pred(std::size_t i, double x, double zeta) const {
    if (zeta == 0.0) return 0.0;
    const double a = alpha_[i];
    const double b = beta_[i];
    // log B(a + zeta x, b + zeta (1 - x)) - log B(a, b)
    if (x == 1.0) {
      return (std::lgamma(a + zeta) - std::lgamma(a)) - (std::lgamma(a + b + zeta) - std::lgamma(a + b));
    }
    return (std::lgamma(b + zeta) - std::lgamma(b)) - (std::lgamma(a + b + zeta) - std::lgamma(a + b));
  }

  void log_pred_prob(double x, double zeta, std::vector<double>& out) const {
    validate(x);
    detail::check_zeta(zeta);
    out.resize(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = log_pred(i, x, zeta);
  }

  void update(double x, double zeta) {
    validate(x);
    detail::check_zeta(zeta);
    if (zeta > 0.0) {
      const double da = zeta * x;
      const double db = zeta * (1.0 - x);
      for (std::size_t i = 0; i < size(); ++i) {
        alpha_[i] += da;
        beta_[i] += db;
        mean_[i] = alpha_[i] / (alpha_[i] + beta_[i]);
      }
    }
    alpha_.insert(alpha_.begin(), params_.alpha0);
    beta_.insert(beta_.begin(), params_.beta0);
    mean_.insert(mean_.begin(), params_.alpha0 / (params_.alpha0 + params_.beta0));
  }

  void keep(std::span<const std::size_t> idx) {
    detail::keep_indices(alpha_, idx);
    detail::keep_indices(beta_, idx);
    detail::keep_indices(mean_, idx);
  }

 private:
  BernoulliParams params_;
  std::vector<double> alpha_;
  std::vector<double> beta_;
  std::vector<double> mean_;
};

/// Marginal predictive over {0, 1} at fidelity zeta: the run-length mixture of
/// the per-hypothesis masses, renormalized over the two outcomes.
inline std::array<double, 2> normalized_pred(const BetaBernoulli& model,
                                             std::span<const double> rl_posterior, double zeta) {
  if (rl_posterior.size() != model.size()) {
    throw InvalidArgument("posterior length does not match hypothesis count");
  }
  std::array<double, 2> mass{0.0, 0.0};
  for (std::size_t i = 0; i < model.size(); ++i) {
    mass[0] += rl_posterior[i] * std::exp(model.log_pred(i, 0.0, zeta));
    mass[1] += rl_posterior[i] * std::exp(model.log_pred(i, 1.0, zeta));
  }
  const double z = mass[0] + mass[1];
  if (!(z > 0.0) || !std::isfinite(z)) {
    throw NumericalDegeneracy("bernoulli predictive has no mass");
  }
  return {mass[0] / z, mass[1] / z};
}

/// Model family plus the prior of whichever family is selected.
struct ModelConfig {
  ModelFamily family = ModelFamily::kGaussian;
  GaussianParams gaussian{};
  BernoulliParams bernoulli{};
};

/// Calls fn with a freshly constructed model of the configured family.
template <class Fn>
decltype(auto) with_model(const ModelConfig& cfg, Fn&& fn) {
  if (cfg.family == ModelFamily::kGaussian) return fn(GaussianKnownVariance(cfg.gaussian));
  return fn(BetaBernoulli(cfg.bernoulli));
}

static_assert(MFModel<GaussianKnownVariance>);
static_assert(MFModel<BetaBernoulli>);

}  // namespace mfbocd
