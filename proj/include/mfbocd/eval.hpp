#pragma once

// Metrics against the high-fidelity-only reference, single trials and the
// cost-grid ablation (information-based vs random switching at matched LF%).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

#include "mfbocd/core.hpp"
#include "mfbocd/cost.hpp"
#include "mfbocd/detector.hpp"
#include "mfbocd/models.hpp"
#include "mfbocd/policy.hpp"
#include "mfbocd/synth.hpp"

namespace mfbocd {

// Metrics -------------------------------------------------------------------

inline double mse(std::span<const double> eval, std::span<const double> ref) {
  if (eval.size() != ref.size()) throw InvalidArgument("mse: length mismatch");
  if (eval.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const double d = eval[i] - ref[i];
    s += d * d;
  }
  return s / static_cast<double>(eval.size());
}

/// Entrywise L1 distance between two run-length posterior matrices.
inline double l1_distance(const std::vector<std::vector<double>>& eval,
                          const std::vector<std::vector<double>>& ref) {
  if (eval.size() != ref.size()) throw InvalidArgument("l1_distance: shape mismatch");
  double s = 0.0;
  for (std::size_t t = 0; t < eval.size(); ++t) {
    if (eval[t].size() != ref[t].size()) throw InvalidArgument("l1_distance: shape mismatch");
    for (std::size_t r = 0; r < eval[t].size(); ++r) s += std::abs(eval[t][r] - ref[t][r]);
  }
  return s;
}

/// Same distance computed on the sparse rows of two records.
inline double l1_distance(const PosteriorRecord& eval, const PosteriorRecord& ref) {
  if (eval.rows.size() != ref.rows.size()) throw InvalidArgument("l1_distance: shape mismatch");
  double s = 0.0;
  for (std::size_t t = 0; t < eval.rows.size(); ++t) {
    const PosteriorRow& a = eval.rows[t];
    const PosteriorRow& b = ref.rows[t];
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < a.r.size() || j < b.r.size()) {
      if (j == b.r.size() || (i < a.r.size() && a.r[i] < b.r[j])) {
        s += std::abs(a.p[i++]);
      } else if (i == a.r.size() || b.r[j] < a.r[i]) {
        s += std::abs(b.p[j++]);
      } else {
        s += std::abs(a.p[i++] - b.p[j++]);
      }
    }
  }
  return s;
}

struct Summary {
  double mean = 0.0;
  /// Two standard errors of the mean (sample sd / sqrt(n), doubled).
  double two_se = 0.0;
  std::size_t n = 0;

  double lower() const { return mean - two_se; }
  double upper() const { return mean + two_se; }
};

inline Summary summarize(std::span<const double> xs) {
  Summary s;
  s.n = xs.size();
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    s.two_se = 2.0 * sd / std::sqrt(static_cast<double>(xs.size()));
  }
  return s;
}

/// True when a's interval lies strictly below b's.
inline bool separated_below(const Summary& a, const Summary& b) { return a.upper() < b.lower(); }

// Trials ---------------------------------------------------------------------

struct TrialResult {
  double mse = 0.0;
  double l1 = 0.0;
  double lf_fraction = 0.0;
  CostLedger ledger;
  std::uint64_t seed = 0;
};

struct TrialOutput {
  TrialResult result;
  RunOutput run;
};

inline TrialResult score_run(const RunOutput& run, const RunOutput& reference, const FidelitySet& fids,
                             std::uint64_t seed) {
  TrialResult r;
  r.mse = mse(run.record.pmean, reference.record.pmean);
  r.l1 = l1_distance(run.record, reference.record);
  r.lf_fraction = fids.size() > 1 ? lf_fraction(run.record.choices, fids.low_index()) : 0.0;
  r.ledger = run.ledger;
  r.seed = seed;
  return r;
}

/// Runs the policy on a paired stream and scores it against the same stream's
/// high-fidelity-only run.
template <MFModel Model>
TrialOutput run_trial(const Stream& stream, const Policy& policy, const FidelitySet& fids,
                      const Hazard& hazard, const Model& model, const RunOptions& run = {},
                      std::uint64_t seed = 0) {
  const RunOutput reference =
      run_policy(stream, model, hazard, fids, FixedPolicy{fids.high_index()}, run);
  TrialOutput out;
  out.run = run_policy(stream, model, hazard, fids, policy, run);
  out.result = score_run(out.run, reference, fids, seed);
  return out;
}

// Parallel map ---------------------------------------------------------------

/// Calls fn(i) for i in [0, n) on up to `threads` workers. The first
/// exception thrown by any task is rethrown after all workers join.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// Ablation -------------------------------------------------------------------

enum class Baseline { kRandom, kInfo };

struct AblationConfig {
  ModelConfig model;
  double beta = 100.0;
  double zeta_hf = 1.0;
  double zeta_lf = 0.5;
  double cost_lf = 1.0;
  /// High-fidelity costs, one cell per entry.
  std::vector<double> cost_grid{2.0};
  std::size_t T = 500;
  std::size_t n_trials = 200;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  InfoGainOptions info;
  RunOptions run;
  /// Comparison column; kInfo reruns the information-based policy, which
  /// makes both columns identical.
  Baseline baseline = Baseline::kRandom;
};

struct MetricPair {
  double mse = 0.0;
  double l1 = 0.0;
};

struct AblationTrial {
  MetricPair lf_only;
  MetricPair baseline;
  MetricPair info;
  double lf_fraction = 0.0;
};

struct AblationRow {
  double cost_hf = 0.0;
  double cost_lf = 0.0;
  Summary lf_fraction;
  Summary lf_only_mse, lf_only_l1;
  Summary baseline_mse, baseline_l1;
  Summary info_mse, info_l1;
  std::vector<AblationTrial> trials;
};

struct AblationTable {
  ModelFamily family = ModelFamily::kGaussian;
  std::size_t n_trials = 0;
  std::vector<AblationRow> rows;
};

inline GeneratorConfig ablation_generator(const AblationConfig& cfg, std::uint64_t stream_seed) {
  GeneratorConfig g;
  g.family = cfg.model.family;
  g.T = cfg.T;
  g.beta = cfg.beta;
  g.gaussian = cfg.model.gaussian;
  g.bernoulli = cfg.model.bernoulli;
  g.zetas = {cfg.zeta_hf, cfg.zeta_lf};
  g.seed = stream_seed;
  return g;
}

/// For every cost setting and trial: run the information-rate policy, record
/// its LF fraction, then run random switching with that bias on the same
/// stream. LF-only and HF-only runs are shared across cost settings.
inline AblationTable run_ablation(const AblationConfig& cfg) {
  if (cfg.n_trials < 2) throw InvalidArgument("ablation needs at least two trials");
  if (cfg.cost_grid.empty()) throw InvalidArgument("ablation needs at least one cost setting");
  const Hazard hazard(cfg.beta);
  const std::size_t cells = cfg.cost_grid.size();
  std::vector<std::vector<AblationTrial>> results(cells, std::vector<AblationTrial>(cfg.n_trials));

  parallel_for(cfg.n_trials, cfg.threads, [&](std::size_t trial) {
    with_model(cfg.model, [&](const auto& model) {
      const std::uint64_t stream_seed = derive_seed(cfg.seed, trial);
      const Stream stream = generate(ablation_generator(cfg, stream_seed)).data;
      const FidelitySet base({{cfg.zeta_hf, cfg.cost_grid.front(), 1.0}, {cfg.zeta_lf, cfg.cost_lf, 1.0}});
      const RunOutput ref = run_policy(stream, model, hazard, base, FixedPolicy{0}, cfg.run);
      const RunOutput lf = run_policy(stream, model, hazard, base, FixedPolicy{1}, cfg.run);
      const MetricPair lf_metrics{mse(lf.record.pmean, ref.record.pmean), l1_distance(lf.record, ref.record)};
      for (std::size_t c = 0; c < cells; ++c) {
        const FidelitySet fids({{cfg.zeta_hf, cfg.cost_grid[c], 1.0}, {cfg.zeta_lf, cfg.cost_lf, 1.0}});
        const RunOutput info = run_policy(stream, model, hazard, fids, InfoRatePolicy{cfg.info}, cfg.run);
        const double p_low = lf_fraction(info.record.choices, 1);
        const Policy baseline = cfg.baseline == Baseline::kRandom
                                    ? Policy{RandomPolicy{p_low, derive_seed(cfg.seed, trial, c + 1)}}
                                    : Policy{InfoRatePolicy{cfg.info}};
        const RunOutput other = run_policy(stream, model, hazard, fids, baseline, cfg.run);
        AblationTrial& slot = results[c][trial];
        slot.lf_only = lf_metrics;
        slot.info = {mse(info.record.pmean, ref.record.pmean), l1_distance(info.record, ref.record)};
        slot.baseline = {mse(other.record.pmean, ref.record.pmean), l1_distance(other.record, ref.record)};
        slot.lf_fraction = p_low;
      }
      return 0;
    });
  });

  AblationTable table;
  table.family = cfg.model.family;
  table.n_trials = cfg.n_trials;
  for (std::size_t c = 0; c < cells; ++c) {
    AblationRow row;
    row.cost_hf = cfg.cost_grid[c];
    row.cost_lf = cfg.cost_lf;
    row.trials = std::move(results[c]);
    auto column = [&](auto proj) {
      std::vector<double> v;
      v.reserve(row.trials.size());
      for (const AblationTrial& t : row.trials) v.push_back(proj(t));
      return summarize(v);
    };
    row.lf_fraction = column([](const AblationTrial& t) { return t.lf_fraction; });
    row.lf_only_mse = column([](const AblationTrial& t) { return t.lf_only.mse; });
    row.lf_only_l1 = column([](const AblationTrial& t) { return t.lf_only.l1; });
    row.baseline_mse = column([](const AblationTrial& t) { return t.baseline.mse; });
    row.baseline_l1 = column([](const AblationTrial& t) { return t.baseline.l1; });
    row.info_mse = column([](const AblationTrial& t) { return t.info.mse; });
    row.info_l1 = column([](const AblationTrial& t) { return t.info.l1; });
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace mfbocd
