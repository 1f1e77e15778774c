#pragma once

// Per-step cost accounting.
//
// Flop convention used throughout: one add, subtract, multiply, divide or
// compare counts 1; a multiply-add counts 2; each transcendental call (exp,
// log, lgamma, sqrt) counts as 1 unit. Counts are analytic, derived from the
// loop structure of the code that is being charged, not measured.

#include <cstddef>
#include <vector>

namespace mfbocd {

struct CostEntry {
  double observation_cost = 0.0;
  long decision_flops = 0;
  long detector_flops = 0;
};

class CostLedger {
 public:
  void record(const CostEntry& e) {
    entries_.push_back(e);
    observation_total_ += e.observation_cost;
    decision_total_ += e.decision_flops;
    detector_total_ += e.detector_flops;
  }

  const std::vector<CostEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  double observation_cost_total() const { return observation_total_; }
  long decision_flops_total() const { return decision_total_; }
  long detector_flops_total() const { return detector_total_; }

 private:
  std::vector<CostEntry> entries_;
  double observation_total_ = 0.0;
  long decision_total_ = 0;
  long detector_total_ = 0;
};

namespace flops {

/// log-sum-exp over n entries: max scan, n shifted exps and adds, one log.
constexpr long log_sum_exp(long n) { return n + 3 * n + 2; }

/// One filter step over n live hypotheses for a model with the given
/// per-hypothesis predictive and update costs.
constexpr long detector_step(long n, long pred_flops, long update_flops) {
  const long predictive = n * pred_flops;
  const long growth = 2 * n;
  const long changepoint = 2 * n + log_sum_exp(n);
  const long normalize = log_sum_exp(n + 1) + 2 * (n + 1);
  const long update = n * update_flops;
  return predictive + growth + changepoint + normalize + update;
}

}  // namespace flops

}  // namespace mfbocd
