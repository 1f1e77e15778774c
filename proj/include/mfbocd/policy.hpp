#pragma once

// Fidelity selection.
//
// The information gain of observing the next datum at fidelity zeta is the
// mutual information between the next run length r_t and the datum x_t under
// the joint
//
//   J(r_t, x) ∝ p(r_t | D_1:t-1) * pred_{r_t}(x | zeta)
//
// where the changepoint hypothesis r_t = 0 predicts with the run-length
// mixture (the same factor the filter step uses). It is computed either as
// H[r_t] - E_x H[r_t | x] (posterior form, any model) or as
// H[x] - E_r H[x | r_t] (predictive form, finite outcome spaces). When the
// per-hypothesis predictive is not normalized over x (Bernoulli, zeta < 1) both
// forms are taken on the normalized joint, so they remain equal.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "mfbocd/core.hpp"
#include "mfbocd/cost.hpp"
#include "mfbocd/detector.hpp"
#include "mfbocd/models.hpp"

namespace mfbocd {

struct InfoGainOptions {
  /// Trapezoid nodes for the Gaussian expectation over x.
  std::size_t quadrature_nodes = 129;
  /// Half-width of the quadrature window in mixture standard deviations.
  double window_sd = 12.0;
};

// Finite-joint mutual information ----------------------------------------------

namespace detail {

inline double safe_log(double v) { return v > 0.0 ? std::log(v) : kNegInf; }

}  // namespace detail

/// Mutual information of the joint J(o, r) ∝ w_o * prior_r * exp(loglik[o][r])
/// as H[r] - sum_o J(o) H[r | o]. `loglik` is indexed [outcome][hypothesis].
inline double mutual_information_posterior_form(std::span<const double> prior,
                                                const std::vector<std::vector<double>>& loglik,
                                                std::span<const double> outcome_weights) {
  if (loglik.size() != outcome_weights.size() || loglik.empty()) {
    throw InvalidArgument("outcome count mismatch");
  }
  const std::size_t n = prior.size();
  std::vector<std::vector<double>> lj(loglik.size(), std::vector<double>(n));
  std::vector<double> log_po(loglik.size());
  for (std::size_t o = 0; o < loglik.size(); ++o) {
    if (loglik[o].size() != n) throw InvalidArgument("hypothesis count mismatch");
    const double lw = detail::safe_log(outcome_weights[o]);
    for (std::size_t r = 0; r < n; ++r) lj[o][r] = lw + detail::safe_log(prior[r]) + loglik[o][r];
    log_po[o] = log_sum_exp(lj[o]);
  }
  const double z = log_sum_exp(log_po);
  if (z == kNegInf || std::isnan(z)) throw NumericalDegeneracy("joint has no mass");

  std::vector<double> marginal(n, 0.0);
  double expected = 0.0;
  for (std::size_t o = 0; o < lj.size(); ++o) {
    if (log_po[o] == kNegInf) continue;
    const double po = std::exp(log_po[o] - z);
    expected += po * entropy_from_log_weights(lj[o]);
    for (std::size_t r = 0; r < n; ++r) marginal[r] += std::exp(lj[o][r] - z);
  }
  double total = 0.0;
  for (double m : marginal) total += m;
  for (double& m : marginal) m /= total;
  return entropy(marginal) - expected;
}

/// The same mutual information as H[o] - sum_r J(r) H[o | r].
inline double mutual_information_predictive_form(std::span<const double> prior,
                                                 const std::vector<std::vector<double>>& loglik,
                                                 std::span<const double> outcome_weights) {
  if (loglik.size() != outcome_weights.size() || loglik.empty()) {
    throw InvalidArgument("outcome count mismatch");
  }
  const std::size_t n = prior.size();
  const std::size_t k = loglik.size();
  std::vector<double> log_pr(n);
  std::vector<std::vector<double>> cond(n, std::vector<double>(k));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < k; ++o) {
      cond[r][o] = detail::safe_log(outcome_weights[o]) + loglik[o][r];
    }
    log_pr[r] = detail::safe_log(prior[r]) + log_sum_exp(cond[r]);
  }
  const double z = log_sum_exp(log_pr);
  if (z == kNegInf || std::isnan(z)) throw NumericalDegeneracy("joint has no mass");

  std::vector<double> px(k, 0.0);
  double expected = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (log_pr[r] == kNegInf) continue;
    const double pr = std::exp(log_pr[r] - z);
    const std::vector<double> q = normalize_log(cond[r]);
    expected += pr * entropy(q);
    for (std::size_t o = 0; o < k; ++o) px[o] += pr * q[o];
  }
  double total = 0.0;
  for (double v : px) total += v;
  for (double& v : px) v /= total;
  return entropy(px) - expected;
}

// Detector-level information gain ----------------------------------------------

namespace detail {

inline double binary_entropy(double h) {
  double out = 0.0;
  if (h > 0.0) out -= h * std::log(h);
  if (h < 1.0) out -= (1.0 - h) * std::log1p(-h);
  return out;
}

}  // namespace detail

/// H[r_t] - E_x H[r_t | x, zeta] for the Bernoulli model, enumerating
/// x in {0, 1} through non-mutating filter steps.
inline double info_gain_rl(const Detector<BetaBernoulli>& det, double zeta,
                           const InfoGainOptions& = {}) {
  if (zeta == 0.0) return 0.0;
  const std::array<std::vector<double>, 2> lj{det.peek(0.0, zeta), det.peek(1.0, zeta)};
  const std::array<double, 2> lz{log_sum_exp(lj[0]), log_sum_exp(lj[1])};
  const double z = log_sum_exp(lz);
  if (z == kNegInf || std::isnan(z)) throw NumericalDegeneracy("bernoulli predictive has no mass");
  const std::size_t n = lj[0].size();
  std::vector<double> marginal(n, 0.0);
  double expected = 0.0;
  for (int x = 0; x < 2; ++x) {
    expected += std::exp(lz[x] - z) * entropy_from_log_weights(lj[x]);
    for (std::size_t r = 0; r < n; ++r) marginal[r] += std::exp(lj[x][r] - z);
  }
  double total = 0.0;
  for (double m : marginal) total += m;
  for (double& m : marginal) m /= total;
  return entropy(marginal) - expected;
}

/// H[x] - E_r H[x | r_t, zeta] for the Bernoulli model from the normalized
/// per-hypothesis predictive distributions.
inline double info_gain_pred(const Detector<BetaBernoulli>& det, double zeta) {
  if (zeta == 0.0) return 0.0;
  const BetaBernoulli& model = det.model();
  const std::vector<double> p = det.posterior();
  const double h = det.hazard().rate();
  const std::size_t n = p.size();

  // Per hypothesis: total predictive mass and entropy of the normalized pair.
  std::vector<double> mass(n);
  std::vector<double> cond_entropy(n);
  std::array<double, 2> mix{0.0, 0.0};
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double m0 = std::exp(model.log_pred(i, 0.0, zeta));
    const double m1 = std::exp(model.log_pred(i, 1.0, zeta));
    mass[i] = m0 + m1;
    const double q1 = m1 / mass[i];
    cond_entropy[i] = detail::binary_entropy(q1);
    mix[0] += p[i] * m0;
    mix[1] += p[i] * m1;
    total += p[i] * mass[i];
  }
  if (!(total > 0.0)) throw NumericalDegeneracy("bernoulli predictive has no mass");
  const double hx = detail::binary_entropy(mix[1] / total);

  // J(r_t = 0) = h with the mixture as its conditional; J(r_t = i + 1) is the
  // hazard-complement share reweighted by the hypothesis' predictive mass.
  double expected = h * hx;
  for (std::size_t i = 0; i < n; ++i) {
    expected += (1.0 - h) * p[i] * mass[i] / total * cond_entropy[i];
  }
  return hx - expected;
}

/// H[r_t] - E_x H[r_t | x, zeta] for the Gaussian model. The expectation over
/// the continuous predictive mixture uses a fixed trapezoid grid over
/// mean ± window_sd standard deviations, and the entropy term is taken from the
/// same discretized joint, which keeps the result a proper mutual information.
inline double info_gain_rl(const Detector<GaussianKnownVariance>& det, double zeta,
                           const InfoGainOptions& opts = {}) {
  if (zeta == 0.0) return 0.0;
  if (opts.quadrature_nodes < 2) throw InvalidArgument("need at least two quadrature nodes");
  const GaussianKnownVariance& model = det.model();
  const std::vector<double> p = det.posterior();
  const double h = det.hazard().rate();
  const std::size_t n = p.size();
  const auto means = model.means();

  std::vector<double> base(n);
  std::vector<double> half_inv_var(n);
  double m = 0.0;
  double second = 0.0;
  constexpr double kLog2Pi = 1.8378770664093454835606594728112;
  for (std::size_t i = 0; i < n; ++i) {
    const double var = model.predictive_variance(i, zeta);
    base[i] = detail::safe_log(p[i]) - 0.5 * (kLog2Pi + std::log(var));
    half_inv_var[i] = 0.5 / var;
    m += p[i] * means[i];
    second += p[i] * (var + means[i] * means[i]);
  }
  const double sd = std::sqrt(std::max(second - m * m, 0.0));
  if (!(sd > 0.0) || !std::isfinite(sd)) throw NumericalDegeneracy("gaussian predictive is degenerate");

  const std::size_t nodes = opts.quadrature_nodes;
  const double lo = m - opts.window_sd * sd;
  const double step = 2.0 * opts.window_sd * sd / static_cast<double>(nodes - 1);
  const double hb = detail::binary_entropy(h);

  // Running accumulator of J(x_i, r) over nodes, kept relative to `ref`.
  std::vector<double> acc(n, 0.0);
  double ref = kNegInf;
  std::vector<double> a(n);
  std::vector<double> log_px(nodes);
  std::vector<double> node_entropy(nodes);
  for (std::size_t k = 0; k < nodes; ++k) {
    const double x = lo + step * static_cast<double>(k);
    const double w = (k == 0 || k + 1 == nodes) ? 0.5 * step : step;
    double mx = kNegInf;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = x - means[i];
      a[i] = base[i] - half_inv_var[i] * d * d;
      mx = std::max(mx, a[i]);
    }
    if (mx == kNegInf) {
      log_px[k] = kNegInf;
      node_entropy[k] = 0.0;
      continue;
    }
    if (mx > ref) {
      const double scale = ref == kNegInf ? 0.0 : std::exp(ref - mx);
      for (double& v : acc) v *= scale;
      ref = mx;
    }
    const double node_scale = w * std::exp(mx - ref);
    double s = 0.0;
    double s_shift = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = a[i] - mx;
      const double e = std::exp(d);
      s += e;
      s_shift += e * d;
      acc[i] += node_scale * e;
    }
    log_px[k] = std::log(w) + mx + std::log(s);
    // Posterior over r_t at x: mass h at r = 0, (1 - h) q_i on growth, where
    // q is the normalized per-hypothesis responsibility.
    const double hq = std::max(std::log(s) - s_shift / s, 0.0);
    node_entropy[k] = hb + (1.0 - h) * hq;
  }
  const double z = log_sum_exp(log_px);
  if (z == kNegInf || std::isnan(z)) throw NumericalDegeneracy("gaussian predictive has no mass");
  double expected = 0.0;
  for (std::size_t k = 0; k < nodes; ++k) {
    if (log_px[k] != kNegInf) expected += std::exp(log_px[k] - z) * node_entropy[k];
  }

  double total = 0.0;
  for (double v : acc) total += v;
  std::vector<double> marginal(n + 1);
  marginal[0] = h;
  for (std::size_t i = 0; i < n; ++i) marginal[i + 1] = (1.0 - h) * acc[i] / total;
  return entropy(marginal) - expected;
}

/// Monte Carlo estimate of the Gaussian information gain, for cross-checking
/// the quadrature: samples x from the predictive mixture and averages the
/// entropy of the hypothetical posterior.
inline double info_gain_rl_monte_carlo(const Detector<GaussianKnownVariance>& det, double zeta,
                                       std::size_t samples, std::uint64_t seed) {
  if (zeta == 0.0) return 0.0;
  if (samples == 0) throw InvalidArgument("need at least one sample");
  const std::vector<double> p = det.posterior();
  const auto means = det.model().means();
  std::mt19937_64 rng(seed);
  std::discrete_distribution<std::size_t> pick(p.begin(), p.end());
  double expected = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t i = pick(rng);
    std::normal_distribution<double> noise(means[i], std::sqrt(det.model().predictive_variance(i, zeta)));
    expected += entropy_from_log_weights(det.peek(noise(rng), zeta));
  }
  return entropy(det.rolled_forward_prior()) - expected / static_cast<double>(samples);
}

template <class Model>
double info_gain(const Detector<Model>& det, double zeta, const InfoGainOptions& opts = {}) {
  if constexpr (std::is_same_v<Model, BetaBernoulli>) {
    (void)opts;
    return info_gain_pred(det, zeta);
  } else {
    return info_gain_rl(det, zeta, opts);
  }
}

namespace flops {

/// Decision cost of one information-gain evaluation over n hypotheses.
template <class Model>
long info_gain(long n, const InfoGainOptions& opts) {
  if constexpr (std::is_same_v<Model, BetaBernoulli>) {
    // posterior normalization, two predictive masses, binary entropies and
    // the weighted combination per hypothesis
    return log_sum_exp(n) + 2 * n + n * (2 * BetaBernoulli::kPredFlops + 2 + 3 + 7 + 6) + 12;
  } else {
    const long nodes = static_cast<long>(opts.quadrature_nodes);
    const long setup = log_sum_exp(n) + 2 * n + n * 12 + 8;
    const long per_node = n * 11 + 12;
    const long tail = nodes * 4 + n * 6 + 4;
    return setup + nodes * per_node + tail;
  }
}

}  // namespace flops

// Decisions ----------------------------------------------------------------------

struct PolicyDecision {
  std::size_t chosen = 0;
  std::vector<double> utilities;
  std::vector<double> rates;
  long decision_flops = 0;
};

namespace detail {

/// argmax of rates. Zero-weight fidelities only compete when every weight is
/// zero; exact ties go to the cheaper fidelity.
inline std::size_t argmax_rate(const FidelitySet& fids, std::span<const double> rates) {
  const bool any_weight =
      std::any_of(fids.begin(), fids.end(), [](const FidelitySpec& f) { return f.weight > 0.0; });
  std::optional<std::size_t> best;
  for (std::size_t j = 0; j < fids.size(); ++j) {
    if (any_weight && fids[j].weight == 0.0) continue;
    if (!best || rates[j] > rates[*best] ||
        (rates[j] == rates[*best] && fids[j].cost < fids[*best].cost)) {
      best = j;
    }
  }
  return *best;
}

}  // namespace detail

/// Picks the fidelity maximizing weight * utility / cost.
template <class Model>
PolicyDecision select_fidelity(const Detector<Model>& det, const FidelitySet& fids,
                               const InfoGainOptions& opts = {}) {
  if (fids.empty()) throw InvalidArgument("empty fidelity set");
  PolicyDecision d;
  d.utilities.resize(fids.size());
  d.rates.resize(fids.size());
  for (std::size_t j = 0; j < fids.size(); ++j) {
    d.utilities[j] = info_gain(det, fids[j].zeta, opts);
    d.rates[j] = fids[j].weight * std::max(d.utilities[j], 0.0) / fids[j].cost;
    d.decision_flops += flops::info_gain<Model>(static_cast<long>(det.size()), opts) + 3;
  }
  d.chosen = detail::argmax_rate(fids, d.rates);
  d.decision_flops += 2 * static_cast<long>(fids.size());
  return d;
}

/// Two-fidelity margin rule: low fidelity iff |U(low) - U(high)| < delta.
template <class Model>
PolicyDecision select_margin(const Detector<Model>& det, const FidelitySet& fids, double delta,
                             const InfoGainOptions& opts = {}) {
  if (fids.size() != 2) throw InvalidArgument("margin rule needs exactly two fidelities");
  if (std::isnan(delta)) throw InvalidArgument("margin delta is NaN");
  PolicyDecision d;
  d.utilities.resize(2);
  d.rates.resize(2);
  for (std::size_t j = 0; j < 2; ++j) {
    d.utilities[j] = info_gain(det, fids[j].zeta, opts);
    d.rates[j] = fids[j].weight * d.utilities[j] / fids[j].cost;
    d.decision_flops += flops::info_gain<Model>(static_cast<long>(det.size()), opts);
  }
  const std::size_t lf = fids.low_index();
  const std::size_t hf = fids.high_index();
  d.chosen = std::abs(d.utilities[lf] - d.utilities[hf]) < delta ? lf : hf;
  d.decision_flops += 3;
  return d;
}

/// Seeded coin-flip switching between the two fidelities of a set.
class RandomSwitcher {
 public:
  RandomSwitcher(double p_lf, std::uint64_t seed) : p_lf_(p_lf), rng_(seed) {
    if (!(p_lf >= 0.0 && p_lf <= 1.0)) {
      throw InvalidArgument("p_lf must lie in [0, 1], got " + std::to_string(p_lf));
    }
  }

  double p_lf() const { return p_lf_; }

  PolicyDecision next(const FidelitySet& fids) {
    if (fids.size() != 2) throw InvalidArgument("random switching needs exactly two fidelities");
    PolicyDecision d;
    d.chosen = uniform_(rng_) < p_lf_ ? fids.low_index() : fids.high_index();
    d.decision_flops = 1;
    return d;
  }

 private:
  double p_lf_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

inline PolicyDecision select_random(const FidelitySet& fids, RandomSwitcher& switcher) {
  return switcher.next(fids);
}

// Policies and the stream loop ------------------------------------------------------

struct InfoRatePolicy {
  InfoGainOptions options;
};

struct MarginPolicy {
  double delta = 0.0;
  InfoGainOptions options;
};

struct RandomPolicy {
  double p_lf = 0.5;
  std::uint64_t seed = 0;
};

struct FixedPolicy {
  std::size_t index = 0;
};

using Policy = std::variant<InfoRatePolicy, MarginPolicy, RandomPolicy, FixedPolicy>;

struct RunOptions {
  std::optional<std::size_t> prune_k;
};

struct RunOutput {
  PosteriorRecord record;
  CostLedger ledger;
  /// Entropy of p(r_t | D_1:t-1) at each decision.
  std::vector<double> prior_entropy;
};

/// Runs one stream through select -> observe -> filter step -> predict.
template <MFModel Model>
RunOutput run_policy(const Stream& stream, const Model& model, const Hazard& hazard,
                     const FidelitySet& fids, const Policy& policy, const RunOptions& run = {}) {
  Detector<Model> det(model, hazard, run.prune_k);
  std::optional<RandomSwitcher> switcher;
  if (const auto* rp = std::get_if<RandomPolicy>(&policy)) switcher.emplace(rp->p_lf, rp->seed);
  if (const auto* fp = std::get_if<FixedPolicy>(&policy); fp && fp->index >= fids.size()) {
    throw InvalidArgument("fixed policy index out of range");
  }

  RunOutput out;
  out.record.rows.reserve(stream.size() + 1);
  out.record.rows.push_back(det.posterior_row());
  out.record.pmean.reserve(stream.size());
  out.record.choices.reserve(stream.size());
  out.prior_entropy.reserve(stream.size());

  for (const Datum& datum : stream) {
    const PolicyDecision d = std::visit(
        [&](const auto& pol) -> PolicyDecision {
          using P = std::decay_t<decltype(pol)>;
          if constexpr (std::is_same_v<P, InfoRatePolicy>) {
            return select_fidelity(det, fids, pol.options);
          } else if constexpr (std::is_same_v<P, MarginPolicy>) {
            return select_margin(det, fids, pol.delta, pol.options);
          } else if constexpr (std::is_same_v<P, RandomPolicy>) {
            return switcher->next(fids);
          } else {
            return PolicyDecision{pol.index, {}, {}, 0};
          }
        },
        policy);
    out.prior_entropy.push_back(entropy(det.rolled_forward_prior()));
    const double x = datum.at(d.chosen);
    det.step(x, fids[d.chosen].zeta);
    out.record.rows.push_back(det.posterior_row());
    out.record.pmean.push_back(det.predict());
    out.record.choices.push_back(d.chosen);
    out.ledger.record({fids[d.chosen].cost, d.decision_flops, det.last_step_flops()});
  }
  return out;
}

inline double lf_fraction(std::span<const std::size_t> choices, std::size_t lf_index) {
  if (choices.empty()) return 0.0;
  const auto n = std::count(choices.begin(), choices.end(), lf_index);
  return static_cast<double>(n) / static_cast<double>(choices.size());
}

// Weight tuning ----------------------------------------------------------------------

struct TuneResult {
  double ratio = 0.0;
  double lf_fraction = 0.0;
  std::size_t evaluations = 0;
};

class TuningFailed : public Error {
 public:
  TuningFailed(const std::string& what, TuneResult best) : Error(what), best_(best) {}
  const TuneResult& best() const { return best_; }

 private:
  TuneResult best_;
};

struct TuneOptions {
  double bracket_lo = 1e-4;
  double bracket_hi = 1e4;
  std::size_t max_steps = 30;
  InfoGainOptions info;
  RunOptions run;
};

/// Searches the weight ratio w_low / w_high (w_high fixed at 1) whose
/// information-rate policy uses the target fraction of low-fidelity data on
/// the held-out streams. Bisection in log space over the bracket.
template <MFModel Model>
TuneResult tune_weights(std::span<const Stream> heldout, const Model& model, const Hazard& hazard,
                        const FidelitySet& fids, double target, double tolerance,
                        const TuneOptions& opts = {}) {
  if (fids.size() != 2) throw InvalidArgument("weight tuning needs exactly two fidelities");
  if (heldout.empty()) throw InvalidArgument("weight tuning needs held-out data");
  if (!(target >= 0.0 && target <= 1.0)) throw InvalidArgument("target LF fraction must lie in [0, 1]");
  if (!(tolerance >= 0.0)) throw InvalidArgument("tolerance must be nonnegative");
  if (!(opts.bracket_lo > 0.0 && opts.bracket_hi > opts.bracket_lo)) {
    throw InvalidArgument("invalid ratio bracket");
  }
  const std::size_t lf = fids.low_index();
  const std::size_t hf = fids.high_index();

  TuneResult best{0.0, 0.0, 0};
  double best_err = std::numeric_limits<double>::infinity();
  std::size_t evaluations = 0;
  auto realized = [&](double ratio) {
    const FidelitySet tuned = fids.with_weight(hf, 1.0).with_weight(lf, ratio);
    std::size_t low = 0;
    std::size_t total = 0;
    for (const Stream& s : heldout) {
      const RunOutput out = run_policy(s, model, hazard, tuned, InfoRatePolicy{opts.info}, opts.run);
      low += static_cast<std::size_t>(std::count(out.record.choices.begin(), out.record.choices.end(), lf));
      total += out.record.choices.size();
    }
    ++evaluations;
    const double f = total ? static_cast<double>(low) / static_cast<double>(total) : 0.0;
    if (std::abs(f - target) < best_err) {
      best_err = std::abs(f - target);
      best = {ratio, f, evaluations};
    }
    return f;
  };
  auto done = [&] {
    best.evaluations = evaluations;
    return best;
  };

  if (std::abs(realized(0.0) - target) <= tolerance) return done();
  double lo = opts.bracket_lo;
  double hi = opts.bracket_hi;
  const double f_hi = realized(hi);
  if (std::abs(f_hi - target) <= tolerance) return done();
  const double f_lo = realized(lo);
  if (std::abs(f_lo - target) <= tolerance) return done();
  if (target < f_lo || target > f_hi) {
    best.evaluations = evaluations;
    throw TuningFailed("target LF fraction lies outside the bracket", best);
  }
  for (std::size_t step = 0; step < opts.max_steps; ++step) {
    const double mid = std::sqrt(lo * hi);
    const double f = realized(mid);
    if (std::abs(f - target) <= tolerance) return done();
    (f < target ? lo : hi) = mid;
  }
  best.evaluations = evaluations;
  throw TuningFailed("bisection did not reach the target LF fraction", best);
}

}  // namespace mfbocd
