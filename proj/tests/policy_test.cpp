#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "mfbocd/policy.hpp"
#include "mfbocd/synth.hpp"

using namespace mfbocd;

namespace {

struct BernState {
  Detector<BetaBernoulli> det;
};

// Random Bernoulli detector state: random prior, hazard, length and fidelities.
Detector<BetaBernoulli> random_bernoulli_state(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Detector<BetaBernoulli> det(BetaBernoulli({0.3 + 3.0 * u(rng), 0.3 + 3.0 * u(rng)}), Hazard(1.5 + 60.0 * u(rng)));
  const int len = static_cast<int>(u(rng) * 40.0);
  const double theta = u(rng);
  for (int i = 0; i < len; ++i) det.step(u(rng) < theta ? 1.0 : 0.0, u(rng) < 0.3 ? 1.0 : u(rng));
  return det;
}

Detector<GaussianKnownVariance> random_gaussian_state(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  Detector<GaussianKnownVariance> det(GaussianKnownVariance({1.0, 3.0, 1.0}), Hazard(2.0 + 100.0 * u(rng)));
  const int len = static_cast<int>(u(rng) * 60.0);
  double theta = 1.0 + std::sqrt(3.0) * n(rng);
  for (int i = 0; i < len; ++i) {
    if (u(rng) < 0.05) theta = 1.0 + std::sqrt(3.0) * n(rng);
    det.step(theta + n(rng), u(rng) < 0.5 ? 1.0 : 0.5);
  }
  return det;
}

double plogp_entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

// Mutual information of the normalized joint J(r, x) built directly from the
// two hypothetical next messages, as H[r] - sum_x J(x) H[r | x].
double bernoulli_mi_from_peeks(const Detector<BetaBernoulli>& det, double zeta) {
  const auto l0 = det.peek(0.0, zeta);
  const auto l1 = det.peek(1.0, zeta);
  double z = 0.0;
  for (double v : l0) z += std::exp(v);
  for (double v : l1) z += std::exp(v);
  std::vector<double> jr(l0.size(), 0.0);
  double expected = 0.0;
  for (const auto* l : {&l0, &l1}) {
    std::vector<double> cond;
    double px = 0.0;
    for (double v : *l) px += std::exp(v);
    for (double v : *l) cond.push_back(std::exp(v) / px);
    expected += px / z * plogp_entropy(cond);
    for (std::size_t r = 0; r < l->size(); ++r) jr[r] += std::exp((*l)[r]) / z;
  }
  return plogp_entropy(jr) - expected;
}

Stream two_fidelity_stream(std::uint64_t seed, std::size_t T = 500) {
  GeneratorConfig g;
  g.gaussian = {1.0, 3.0, 1.0};
  g.T = T;
  g.seed = seed;
  return generate(g).data;
}

const FidelitySet kTwoFids({{1.0, 2.0, 1.0}, {0.5, 1.0, 1.0}});

std::size_t switches(const std::vector<std::size_t>& c) {
  std::size_t s = 0;
  for (std::size_t i = 1; i < c.size(); ++i) s += c[i] != c[i - 1];
  return s;
}

}  // namespace

TEST(InfoGain, ZeroFidelityIsExactlyZero) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto b = random_bernoulli_state(rng);
    const auto g = random_gaussian_state(rng);
    EXPECT_EQ(info_gain_rl(b, 0.0), 0.0);
    EXPECT_EQ(info_gain_pred(b, 0.0), 0.0);
    EXPECT_EQ(info_gain_rl(g, 0.0), 0.0);
    EXPECT_EQ(info_gain(g, 0.0), 0.0);
  }
}

TEST(InfoGain, SingleHypothesisCarriesNoInformation) {
  // Both next run lengths predict with the prior, so x is independent of r_t.
  Detector<BetaBernoulli> b(BetaBernoulli({2.0, 3.0}), Hazard(10.0));
  Detector<GaussianKnownVariance> g(GaussianKnownVariance({1.0, 3.0, 1.0}), Hazard(10.0));
  for (double z : {0.3, 1.0}) {
    EXPECT_NEAR(info_gain_rl(b, z), 0.0, 1e-12);
    EXPECT_NEAR(info_gain_pred(b, z), 0.0, 1e-12);
    EXPECT_NEAR(info_gain_rl(g, z), 0.0, 1e-12);
  }
}

TEST(InfoGain, BernoulliFormsAgree) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto det = random_bernoulli_state(rng);
    const double z = i % 5 == 0 ? 1.0 : u(rng);
    const double a = info_gain_rl(det, z);
    const double b = info_gain_pred(det, z);
    worst = std::max(worst, std::abs(a - b));
    EXPECT_GE(a, -1e-10);
    EXPECT_GE(b, -1e-10);
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(InfoGain, BernoulliMatchesDirectJoint) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 300; ++i) {
    const auto det = random_bernoulli_state(rng);
    const double z = u(rng);
    EXPECT_NEAR(info_gain_rl(det, z), bernoulli_mi_from_peeks(det, z), 1e-10);
  }
}

TEST(InfoGain, UnitFidelityTwoTermStructure) {
  // At zeta = 1 the predictive is normalized per hypothesis, so the first term
  // is the rolled-forward prior entropy and the second the expected entropy of
  // the hypothetical posterior under the normalized marginal predictive.
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto det = random_bernoulli_state(rng);
    const double h_prior = plogp_entropy(det.rolled_forward_prior());
    const auto px = normalized_pred(det.model(), det.posterior(), 1.0);
    double expected = 0.0;
    for (int x = 0; x < 2; ++x) expected += px[x] * entropy(normalize_log(det.peek(x, 1.0)));
    EXPECT_NEAR(info_gain_rl(det, 1.0), h_prior - expected, 1e-10);
  }
}

TEST(InfoGain, HighFidelityCarriesMoreInformation) {
  std::mt19937_64 rng(5);
  int violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto det = random_bernoulli_state(rng);
    if (info_gain_pred(det, 1.0) < info_gain_pred(det, 0.5) - 1e-12) ++violations;
  }
  EXPECT_EQ(violations, 0);
}

TEST(InfoGain, GaussianNonnegativeAndOrdered) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    const auto det = random_gaussian_state(rng);
    const double hf = info_gain_rl(det, 1.0);
    const double lf = info_gain_rl(det, 0.5);
    EXPECT_GE(hf, -1e-10);
    EXPECT_GE(lf, -1e-10);
    EXPECT_GE(hf, lf - 1e-9);
  }
}

TEST(InfoGain, GaussianMatchesAdaptiveQuadrature) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 25; ++i) {
    const auto det = random_gaussian_state(rng);
    if (det.size() < 3) continue;
    for (double z : {1.0, 0.5}) {
      const double h_prior = entropy(det.rolled_forward_prior());
      auto integrand = [&](double x) {
        const auto lj = det.peek(x, z);
        const double lz = log_sum_exp(lj);
        return std::exp(lz) * entropy_from_log_weights(lj);
      };
      const double inf = 80.0;
      auto mass = [&](double x) { return std::exp(log_sum_exp(det.peek(x, z))); };
      using gk = boost::math::quadrature::gauss_kronrod<double, 61>;
      // the stored message is unnormalized, so divide by the total mass
      const double expected = gk::integrate(integrand, -inf, inf, 20, 1e-13) / gk::integrate(mass, -inf, inf, 20, 1e-13);
      EXPECT_NEAR(info_gain_rl(det, z), h_prior - expected, 1e-6);
    }
  }
}

TEST(InfoGain, GaussianMonteCarloCrossCheck) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 5; ++i) {
    const auto det = random_gaussian_state(rng);
    const double q = info_gain_rl(det, 1.0);
    const double mc = info_gain_rl_monte_carlo(det, 1.0, 40000, 99 + i);
    EXPECT_NEAR(q, mc, 5e-3);
  }
}

TEST(InfoGain, GaussianQuadratureConverges) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 10; ++i) {
    const auto det = random_gaussian_state(rng);
    const double coarse = info_gain_rl(det, 0.5);
    const double fine = info_gain_rl(det, 0.5, {2049, 16.0});
    EXPECT_NEAR(coarse, fine, 1e-8);
  }
}

TEST(Select, ArgmaxRateAndTies) {
  const FidelitySet f({{1.0, 1.0, 1.0}, {0.5, 2.0, 1.0}});
  // U = (0.5, 0.5) gives rates (0.5, 0.25)
  EXPECT_EQ(detail::argmax_rate(f, std::vector<double>{0.5, 0.25}), 0u);
  const FidelitySet g({{1.0, 2.0, 1.0}, {0.5, 1.0, 1.0}});
  EXPECT_EQ(detail::argmax_rate(g, std::vector<double>{0.3, 0.3}), 1u);
  EXPECT_EQ(detail::argmax_rate(g, std::vector<double>{0.0, 0.0}), 1u);
  const FidelitySet zero_lf({{1.0, 2.0, 1.0}, {0.5, 1.0, 0.0}});
  EXPECT_EQ(detail::argmax_rate(zero_lf, std::vector<double>{0.0, 0.0}), 0u);
}

TEST(Select, ZeroLowWeightAlwaysHigh) {
  const FidelitySet f = kTwoFids.with_weight(1, 0.0);
  const auto out = run_policy(two_fidelity_stream(1, 200), GaussianKnownVariance({1.0, 3.0, 1.0}), Hazard(100.0), f,
                              InfoRatePolicy{});
  for (std::size_t c : out.record.choices) EXPECT_EQ(c, 0u);
}

TEST(Select, ArgmaxInvariantToWeightScale) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 60; ++i) {
    const auto det = random_gaussian_state(rng);
    const FidelitySet f({{1.0, 2.0, 0.7}, {0.5, 1.0, 1.3}});
    const std::size_t base = select_fidelity(det, f).chosen;
    for (double c : {1e-3, 0.5, 3.0, 1e4}) {
      const FidelitySet s = f.with_weight(0, 0.7 * c).with_weight(1, 1.3 * c);
      EXPECT_EQ(select_fidelity(det, s).chosen, base);
    }
  }
}

TEST(Select, RatesAreWeightedUtilityPerCost) {
  std::mt19937_64 rng(11);
  const auto det = random_gaussian_state(rng);
  const FidelitySet f({{1.0, 2.0, 0.5}, {0.5, 1.0, 1.5}});
  const auto d = select_fidelity(det, f);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_DOUBLE_EQ(d.utilities[j], info_gain_rl(det, f[j].zeta));
    EXPECT_DOUBLE_EQ(d.rates[j], f[j].weight * std::max(d.utilities[j], 0.0) / f[j].cost);
  }
  EXPECT_GT(d.decision_flops, 0);
}

TEST(Select, EntropyHigherOnHighFidelitySteps) {
  double hf_sum = 0.0;
  double lf_sum = 0.0;
  std::size_t hf_n = 0;
  std::size_t lf_n = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto out = run_policy(two_fidelity_stream(derive_seed(11, s)), GaussianKnownVariance({1.0, 3.0, 1.0}),
                                Hazard(100.0), kTwoFids, InfoRatePolicy{});
    for (std::size_t i = 0; i < out.record.choices.size(); ++i) {
      if (out.record.choices[i] == 0) {
        hf_sum += out.prior_entropy[i];
        ++hf_n;
      } else {
        lf_sum += out.prior_entropy[i];
        ++lf_n;
      }
    }
  }
  ASSERT_GT(hf_n, 0u);
  ASSERT_GT(lf_n, 0u);
  EXPECT_GT(hf_sum / static_cast<double>(hf_n), lf_sum / static_cast<double>(lf_n));
}

TEST(Margin, Extremes) {
  const Stream s = two_fidelity_stream(2, 150);
  const GaussianKnownVariance m({1.0, 3.0, 1.0});
  const double big = std::numeric_limits<double>::infinity();
  const auto inf = run_policy(s, m, Hazard(100.0), kTwoFids, MarginPolicy{big, {}});
  const auto zero = run_policy(s, m, Hazard(100.0), kTwoFids, MarginPolicy{0.0, {}});
  for (std::size_t c : inf.record.choices) EXPECT_EQ(c, 1u);
  for (std::size_t c : zero.record.choices) EXPECT_EQ(c, 0u);
  std::mt19937_64 rng(12);
  const auto det = random_gaussian_state(rng);
  EXPECT_THROW(select_margin(det, FidelitySet({{1.0, 1.0, 1.0}}), 0.1), InvalidArgument);
  EXPECT_THROW(select_margin(det, kTwoFids, std::nan("")), InvalidArgument);
}

TEST(Margin, SwitchesMoreThanRateRuleAtMatchedFraction) {
  const GaussianKnownVariance m({1.0, 3.0, 1.0});
  std::size_t rate_switches = 0;
  std::size_t margin_switches = 0;
  int compared = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Stream s = two_fidelity_stream(derive_seed(21, seed));
    const auto rate = run_policy(s, m, Hazard(100.0), kTwoFids, InfoRatePolicy{});
    const double target = lf_fraction(rate.record.choices, 1);
    if (target < 0.1 || target > 0.9) continue;
    // bisect delta to match the realized LF fraction
    double lo = 0.0;
    double hi = 1.0;
    RunOutput best;
    double best_err = 2.0;
    for (int it = 0; it < 16; ++it) {
      const double mid = 0.5 * (lo + hi);
      RunOutput o = run_policy(s, m, Hazard(100.0), kTwoFids, MarginPolicy{mid, {}});
      const double f = lf_fraction(o.record.choices, 1);
      if (std::abs(f - target) < best_err) {
        best_err = std::abs(f - target);
        best = std::move(o);
      }
      (f < target ? lo : hi) = mid;
    }
    if (best_err > 0.05) continue;
    rate_switches += switches(rate.record.choices);
    margin_switches += switches(best.record.choices);
    ++compared;
  }
  ASSERT_GT(compared, 0);
  EXPECT_GT(margin_switches, rate_switches);
}

TEST(Random, ExtremesAndConcentration) {
  const FidelitySet f = kTwoFids;
  RandomSwitcher never(0.0, 1);
  RandomSwitcher always(1.0, 1);
  RandomSwitcher half(0.5, 42);
  std::size_t low = 0;
  for (int i = 0; i < 10000; ++i) {
    EXPECT_EQ(select_random(f, never).chosen, 0u);
    EXPECT_EQ(select_random(f, always).chosen, 1u);
    low += select_random(f, half).chosen == 1u;
  }
  EXPECT_NEAR(static_cast<double>(low) / 10000.0, 0.5, 0.02);
  EXPECT_THROW(RandomSwitcher(-0.1, 1), InvalidArgument);
  EXPECT_THROW(RandomSwitcher(1.1, 1), InvalidArgument);
}

TEST(Random, SeededReproducible) {
  RandomSwitcher a(0.3, 7);
  RandomSwitcher b(0.3, 7);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(a.next(kTwoFids).chosen, b.next(kTwoFids).chosen);
}

TEST(RunPolicy, BookkeepingAndCostOrdering) {
  const Stream s = two_fidelity_stream(3, 300);
  const GaussianKnownVariance m({1.0, 3.0, 1.0});
  const auto hf = run_policy(s, m, Hazard(100.0), kTwoFids, FixedPolicy{0});
  const auto lf = run_policy(s, m, Hazard(100.0), kTwoFids, FixedPolicy{1});
  const auto mixed = run_policy(s, m, Hazard(100.0), kTwoFids, InfoRatePolicy{});
  EXPECT_EQ(hf.ledger.observation_cost_total(), 600.0);
  EXPECT_EQ(lf.ledger.observation_cost_total(), 300.0);
  EXPECT_LE(lf.ledger.observation_cost_total(), mixed.ledger.observation_cost_total());
  EXPECT_LE(mixed.ledger.observation_cost_total(), hf.ledger.observation_cost_total());
  const double f = lf_fraction(mixed.record.choices, 1);
  EXPECT_DOUBLE_EQ(mixed.ledger.observation_cost_total(), 300.0 * (2.0 - f));
  EXPECT_EQ(mixed.record.rows.size(), s.size() + 1);
  EXPECT_EQ(mixed.record.pmean.size(), s.size());
  double obs = 0.0;
  long dec = 0;
  for (const auto& e : mixed.ledger.entries()) {
    obs += e.observation_cost;
    dec += e.decision_flops;
  }
  EXPECT_EQ(obs, mixed.ledger.observation_cost_total());
  EXPECT_EQ(dec, mixed.ledger.decision_flops_total());
}

TEST(RunPolicy, MissingChannelNamesTime) {
  Stream s = two_fidelity_stream(4, 20);
  s[9].values[0].reset();
  try {
    run_policy(s, GaussianKnownVariance({1.0, 3.0, 1.0}), Hazard(100.0), kTwoFids, FixedPolicy{0});
    FAIL();
  } catch (const MissingFidelity& e) {
    EXPECT_EQ(e.t(), 10u);
  }
}

TEST(Tune, Endpoints) {
  const std::vector<Stream> held{two_fidelity_stream(5, 200)};
  const GaussianKnownVariance m({1.0, 3.0, 1.0});
  const auto zero = tune_weights(std::span<const Stream>(held), m, Hazard(100.0), kTwoFids, 0.0, 0.0);
  EXPECT_EQ(zero.ratio, 0.0);
  EXPECT_EQ(zero.lf_fraction, 0.0);
  const auto one = tune_weights(std::span<const Stream>(held), m, Hazard(100.0), kTwoFids, 1.0, 0.0);
  EXPECT_EQ(one.lf_fraction, 1.0);
  EXPECT_EQ(one.ratio, 1e4);
}

TEST(Tune, HalfLowFidelityTarget) {
  std::vector<Stream> held;
  for (std::uint64_t i = 0; i < 3; ++i) held.push_back(two_fidelity_stream(derive_seed(31, i)));
  const GaussianKnownVariance m({1.0, 3.0, 1.0});
  const auto r = tune_weights(std::span<const Stream>(held), m, Hazard(100.0), kTwoFids, 0.5, 0.05);
  EXPECT_NEAR(r.lf_fraction, 0.5, 0.05);
  EXPECT_LE(r.evaluations, 33u);
  // LF fraction is monotone in the ratio on this data
  double prev = -1.0;
  for (double ratio : {0.25, 0.5, 1.0, 2.0, 4.0}) {
    const FidelitySet f = kTwoFids.with_weight(1, ratio);
    std::size_t low = 0;
    std::size_t total = 0;
    for (const Stream& s : held) {
      const auto o = run_policy(s, m, Hazard(100.0), f, InfoRatePolicy{});
      low += static_cast<std::size_t>(std::count(o.record.choices.begin(), o.record.choices.end(), 1u));
      total += o.record.choices.size();
    }
    const double frac = static_cast<double>(low) / static_cast<double>(total);
    EXPECT_GE(frac, prev);
    prev = frac;
  }
}

TEST(Tune, FailureCarriesBestRatio) {
  const std::vector<Stream> held{two_fidelity_stream(6, 100)};
  const GaussianKnownVariance m({1.0, 3.0, 1.0});
  TuneOptions opts;
  opts.max_steps = 1;
  try {
    tune_weights(std::span<const Stream>(held), m, Hazard(100.0), kTwoFids, 0.37, 0.0, opts);
    FAIL();
  } catch (const TuningFailed& e) {
    EXPECT_GE(e.best().evaluations, 1u);
    EXPECT_GE(e.best().lf_fraction, 0.0);
  }
  EXPECT_THROW(tune_weights(std::span<const Stream>(held), m, Hazard(100.0), FidelitySet({{1.0, 1.0, 1.0}}), 0.5,
                            0.05),
               InvalidArgument);
}
