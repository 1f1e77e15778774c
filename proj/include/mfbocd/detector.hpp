#pragma once

// Run-length filter with fidelity-weighted predictives.
//
// The message holds the unnormalized log joint over run-length hypotheses.
// One step with datum x observed at fidelity zeta:
//
//   growth[l + 1] = log pred_l(x | zeta) + message[l] + log(1 - h)
//   cp[0]         = logsumexp_l(log pred_l(x | zeta) + message[l] + log h)
//
// after which the model folds (x, zeta) into every hypothesis and prepends a
// fresh prior-only hypothesis for r = 0.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mfbocd/core.hpp"
#include "mfbocd/cost.hpp"
#include "mfbocd/models.hpp"

namespace mfbocd {

/// One row of the run-length posterior matrix, stored sparsely.
struct PosteriorRow {
  std::vector<std::size_t> r;
  std::vector<double> p;
};

/// Full history of a detector run: row t is p(r_t | D_1:t), row 0 is the
/// initial delta at r = 0. pmean[t - 1] and choices[t - 1] belong to step t.
struct PosteriorRecord {
  std::vector<PosteriorRow> rows;
  std::vector<double> pmean;
  std::vector<std::size_t> choices;

  std::size_t steps() const { return pmean.size(); }

  /// Lower-triangular (T+1) x (T+1) matrix.
  std::vector<std::vector<double>> dense() const {
    const std::size_t n = rows.size();
    std::vector<std::vector<double>> out(n, std::vector<double>(n, 0.0));
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t k = 0; k < rows[t].r.size(); ++k) out[t].at(rows[t].r[k]) = rows[t].p[k];
    }
    return out;
  }
};

/// Positions of the k largest weights, always including position 0, in
/// ascending order. Equal weights prefer the lower position.
inline std::vector<std::size_t> top_k_indices(std::span<const double> log_w, std::size_t k) {
  if (k < 1) throw InvalidArgument("top-k needs k >= 1");
  const std::size_t n = log_w.size();
  std::vector<std::size_t> keep{0};
  if (n <= k) {
    keep.resize(n);
    std::iota(keep.begin(), keep.end(), std::size_t{0});
    return keep;
  }
  std::vector<std::size_t> order(n - 1);
  std::iota(order.begin(), order.end(), std::size_t{1});
  auto by_mass = [&](std::size_t a, std::size_t b) {
    if (log_w[a] != log_w[b]) return log_w[a] > log_w[b];
    return a < b;
  };
  if (k > 1) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 2), order.end(), by_mass);
    keep.insert(keep.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1));
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

template <MFModel Model>
class Detector {
 public:
  Detector(Model model, Hazard hazard, std::optional<std::size_t> prune_k = std::nullopt)
      : model_(std::move(model)), hazard_(hazard), log_probs_(hazard_log_probs(hazard)), prune_k_(prune_k) {
    if (prune_k_ && *prune_k_ < 2) throw InvalidArgument("prune_k must be at least 2");
    if (model_.size() != 1) throw InvalidArgument("detector needs a freshly initialized model");
  }

  std::size_t t() const { return t_; }
  std::size_t size() const { return log_message_.size(); }
  const Model& model() const { return model_; }
  const Hazard& hazard() const { return hazard_; }
  std::optional<std::size_t> prune_k() const { return prune_k_; }
  std::span<const double> log_message() const { return log_message_; }
  std::span<const std::size_t> run_lengths() const { return run_lengths_; }
  long last_step_flops() const { return last_step_flops_; }

  /// Normalized run-length posterior p(r_t | D_1:t), aligned with run_lengths().
  std::vector<double> posterior() const { return normalize_log(log_message_); }

  /// The unnormalized log joint that step(x, zeta) would produce, without
  /// touching any state. Index 0 is the changepoint hypothesis, index i + 1
  /// grows hypothesis i.
  std::vector<double> peek(double x, double zeta) const {
    std::vector<double> log_pis;
    model_.log_pred_prob(x, zeta, log_pis);
    return advance(log_pis);
  }

  /// Processes one datum and returns the normalized posterior.
  std::vector<double> step(double x, double zeta) {
    model_.log_pred_prob(x, zeta, scratch_);
    std::vector<double> next = advance(scratch_);
    const double z = log_sum_exp(next);
    if (z == kNegInf || std::isnan(z)) {
      throw DegeneratePosterior("run-length posterior has no mass at t=" + std::to_string(t_ + 1));
    }
    const long n = static_cast<long>(size());
    model_.update(x, zeta);
    log_message_ = std::move(next);
    run_lengths_.insert(run_lengths_.begin(), 0);
    for (std::size_t i = 1; i < run_lengths_.size(); ++i) ++run_lengths_[i];
    ++t_;
    last_step_flops_ = flops::detector_step(n, Model::kPredFlops, Model::kUpdateFlops);
    if (prune_k_) prune(*prune_k_);
    return posterior();
  }

  /// p(r_t | D_1:t-1): the posterior rolled one step through the changepoint
  /// prior. Index 0 is r = 0, index i + 1 is run_lengths()[i] + 1.
  std::vector<double> rolled_forward_prior() const {
    const std::vector<double> p = posterior();
    const double h = hazard_.rate();
    std::vector<double> out(p.size() + 1);
    out[0] = h;
    for (std::size_t i = 0; i < p.size(); ++i) out[i + 1] = (1.0 - h) * p[i];
    return out;
  }

  /// Keeps the k most probable hypotheses, always including r = 0, and
  /// renormalizes the message. Identity when at most k hypotheses are live.
  void prune(std::size_t k) {
    if (k < 2) throw InvalidArgument("prune width must be at least 2");
    const std::size_t n = size();
    if (n <= k) return;
    const std::vector<std::size_t> keep = top_k_indices(log_message_, k);

    std::vector<double> msg;
    std::vector<std::size_t> rl;
    msg.reserve(k);
    rl.reserve(k);
    for (std::size_t i : keep) {
      msg.push_back(log_message_[i]);
      rl.push_back(run_lengths_[i]);
    }
    const double z = log_sum_exp(msg);
    for (double& m : msg) m -= z;
    log_message_ = std::move(msg);
    run_lengths_ = std::move(rl);
    model_.keep(keep);
  }

  /// Mean of the run-length mixture of posterior predictives.
  double predict() const {
    const std::vector<double> p = posterior();
    const auto means = model_.means();
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * means[i];
    return s;
  }

  PosteriorRow posterior_row() const {
    return PosteriorRow{std::vector<std::size_t>(run_lengths_.begin(), run_lengths_.end()), posterior()};
  }

 private:
  std::vector<double> advance(std::span<const double> log_pis) const {
    const std::size_t n = size();
    std::vector<double> next(n + 1);
    std::vector<double> cp(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double joint = log_pis[i] + log_message_[i];
      next[i + 1] = joint + log_probs_.log_growth;
      cp[i] = joint + log_probs_.log_cp;
    }
    next[0] = log_sum_exp(cp);
    return next;
  }

  Model model_;
  Hazard hazard_;
  HazardLogProbs log_probs_;
  std::optional<std::size_t> prune_k_;
  std::size_t t_ = 0;
  std::vector<double> log_message_{0.0};
  std::vector<std::size_t> run_lengths_{0};
  std::vector<double> scratch_;
  long last_step_flops_ = 0;
};

}  // namespace mfbocd
