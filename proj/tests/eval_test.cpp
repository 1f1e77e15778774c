#include <atomic>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "mfbocd/eval.hpp"

using namespace mfbocd;

namespace {

const FidelitySet kFids({{1.0, 2.0, 1.0}, {0.5, 1.0, 1.0}});

Stream stream(std::uint64_t seed, std::size_t T = 200) {
  GeneratorConfig g;
  g.T = T;
  g.seed = seed;
  return generate(g).data;
}

AblationConfig small_ablation() {
  AblationConfig c;
  c.model.gaussian = {1.0, 3.0, 1.0};
  c.cost_grid = {1.2, 2.0, 4.0};
  c.T = 120;
  c.n_trials = 6;
  c.seed = 9;
  return c;
}

}  // namespace

TEST(Metrics, MeanSquaredError) {
  const std::vector<double> a{1.0, 2.0, 3.0};
  const std::vector<double> b{1.0, 0.0, 4.0};
  EXPECT_EQ(mse(a, a), 0.0);
  EXPECT_DOUBLE_EQ(mse(a, b), 5.0 / 3.0);
  EXPECT_THROW(mse(a, std::vector<double>{1.0}), InvalidArgument);
}

TEST(Metrics, L1OnRows) {
  using Rows = std::vector<std::vector<double>>;
  EXPECT_EQ(l1_distance(Rows{{1.0, 0.0}}, Rows{{0.0, 1.0}}), 2.0);
  EXPECT_EQ(l1_distance(Rows{{1.0}, {0.2, 0.8}}, Rows{{1.0}, {0.2, 0.8}}), 0.0);
  EXPECT_DOUBLE_EQ(l1_distance(Rows{{1.0, 0.0}, {1.0, 0.0}}, Rows{{1.0, 0.0}, {0.5, 0.5}}), 1.0);
  EXPECT_THROW(l1_distance(Rows{{1.0}, {1.0}}, Rows{{1.0}, {0.5, 0.5}}), InvalidArgument);
}

TEST(Metrics, L1BoundedByTwicePosteriorCount) {
  const GaussianKnownVariance m({1.0, 3.0, 1.0});
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Stream d = stream(s);
    const auto hf = run_policy(d, m, Hazard(100.0), kFids, FixedPolicy{0});
    const auto lf = run_policy(d, m, Hazard(100.0), kFids, FixedPolicy{1});
    const double l1 = l1_distance(lf.record, hf.record);
    EXPECT_GT(l1, 0.0);
    EXPECT_LE(l1, 2.0 * static_cast<double>(d.size() + 1));
    EXPECT_DOUBLE_EQ(l1, l1_distance(hf.record, lf.record));
    EXPECT_NEAR(l1, l1_distance(lf.record.dense(), hf.record.dense()), 1e-9);
  }
}

TEST(Summary, MeanAndTwoStandardErrors) {
  const std::vector<double> xs{1.0, 2.0, 3.0};
  const Summary s = summarize(xs);
  EXPECT_EQ(s.n, 3u);
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.two_se, 2.0 / std::sqrt(3.0));
  EXPECT_DOUBLE_EQ(s.lower(), 2.0 - 2.0 / std::sqrt(3.0));
  const Summary hi = summarize(std::vector<double>{10.0, 11.0, 12.0});
  EXPECT_TRUE(separated_below(s, hi));
  EXPECT_FALSE(separated_below(hi, s));
  EXPECT_FALSE(separated_below(s, s));
}

TEST(Trial, HighOnlyMatchesReference) {
  const Stream d = stream(1);
  const GaussianKnownVariance m({1.0, 3.0, 1.0});
  const auto out = run_trial(d, FixedPolicy{0}, kFids, Hazard(100.0), m);
  EXPECT_EQ(out.result.mse, 0.0);
  EXPECT_EQ(out.result.l1, 0.0);
  EXPECT_EQ(out.result.lf_fraction, 0.0);
  const auto low = run_trial(d, FixedPolicy{1}, kFids, Hazard(100.0), m);
  EXPECT_EQ(low.result.lf_fraction, 1.0);
  EXPECT_GT(low.result.mse, 0.0);
  EXPECT_EQ(low.result.ledger.observation_cost_total(), 200.0);
}

TEST(Trial, BernoulliHighOnlyMatchesReference) {
  GeneratorConfig g;
  g.family = ModelFamily::kBernoulli;
  g.T = 200;
  g.seed = 4;
  const Stream d = generate(g).data;
  const auto out = run_trial(d, FixedPolicy{0}, kFids, Hazard(100.0), BetaBernoulli({1.0, 1.0}));
  EXPECT_EQ(out.result.mse, 0.0);
  EXPECT_EQ(out.result.l1, 0.0);
}

TEST(ParallelFor, VisitsEveryIndexAndRethrows) {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, 4, [&](std::size_t i) { hits[i]++; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(10, 3,
                            [](std::size_t i) {
                              if (i == 7) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
}

TEST(Ablation, DeterministicAcrossThreadCounts) {
  AblationConfig c = small_ablation();
  const AblationTable a = run_ablation(c);
  c.threads = 3;
  const AblationTable b = run_ablation(c);
  ASSERT_EQ(a.rows.size(), 3u);
  for (std::size_t r = 0; r < a.rows.size(); ++r) {
    EXPECT_EQ(a.rows[r].info_mse.mean, b.rows[r].info_mse.mean);
    EXPECT_EQ(a.rows[r].baseline_l1.mean, b.rows[r].baseline_l1.mean);
    EXPECT_EQ(a.rows[r].lf_fraction.mean, b.rows[r].lf_fraction.mean);
  }
}

TEST(Ablation, InfoBaselineReproducesInfoColumns) {
  AblationConfig c = small_ablation();
  c.baseline = Baseline::kInfo;
  const AblationTable t = run_ablation(c);
  for (const AblationRow& row : t.rows) {
    for (const AblationTrial& tr : row.trials) {
      EXPECT_EQ(tr.baseline.mse, tr.info.mse);
      EXPECT_EQ(tr.baseline.l1, tr.info.l1);
    }
  }
}

TEST(Ablation, LowOnlyColumnSharedAndCostMonotone) {
  const AblationTable t = run_ablation(small_ablation());
  for (const AblationRow& row : t.rows) {
    EXPECT_EQ(row.lf_only_mse.mean, t.rows.front().lf_only_mse.mean);
    EXPECT_GT(row.lf_only_mse.mean, 0.0);
    EXPECT_EQ(row.trials.size(), 6u);
  }
  for (std::size_t r = 1; r < t.rows.size(); ++r) {
    EXPECT_GE(t.rows[r].lf_fraction.mean, t.rows[r - 1].lf_fraction.mean);
  }
}

TEST(Ablation, RejectsDegenerateConfigs) {
  AblationConfig c = small_ablation();
  c.n_trials = 1;
  EXPECT_THROW(run_ablation(c), InvalidArgument);
  c = small_ablation();
  c.cost_grid.clear();
  EXPECT_THROW(run_ablation(c), InvalidArgument);
}
