#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mfbocd {

// Errors ---------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class InvalidDistribution : public Error {
 public:
  using Error::Error;
};

class InvalidDatum : public Error {
 public:
  using Error::Error;
};

class NumericalDegeneracy : public Error {
 public:
  using Error::Error;
};

class DegeneratePosterior : public NumericalDegeneracy {
 public:
  using NumericalDegeneracy::NumericalDegeneracy;
};

class MissingFidelity : public Error {
 public:
  MissingFidelity(std::size_t t, std::size_t fidelity)
      : Error("missing observation for fidelity " + std::to_string(fidelity) +
              " at t=" + std::to_string(t)),
        t_(t),
        fidelity_(fidelity) {}

  std::size_t t() const { return t_; }
  std::size_t fidelity() const { return fidelity_; }

 private:
  std::size_t t_;
  std::size_t fidelity_;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Fidelities -----------------------------------------------------------------

/// One observation channel: likelihood power `zeta`, acquisition cost and the
/// decision weight applied to its information rate.
struct FidelitySpec {
  double zeta = 1.0;
  double cost = 1.0;
  double weight = 1.0;

  void validate() const {
    if (!(zeta >= 0.0 && zeta <= 1.0)) {
      throw InvalidParameter("fidelity zeta must lie in [0, 1], got " +
                             std::to_string(zeta));
    }
    if (!(cost > 0.0) || !std::isfinite(cost)) {
      throw InvalidParameter("fidelity cost must be positive, got " +
                             std::to_string(cost));
    }
    if (!(weight >= 0.0) || !std::isfinite(weight)) {
      throw InvalidParameter("fidelity weight must be nonnegative, got " +
                             std::to_string(weight));
    }
  }
};

/// Ordered, nonempty set of fidelities with distinct zeta values.
class FidelitySet {
 public:
  FidelitySet() = default;

  explicit FidelitySet(std::vector<FidelitySpec> specs) : specs_(std::move(specs)) {
    if (specs_.empty()) throw InvalidArgument("fidelity set must be nonempty");
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      specs_[i].validate();
      for (std::size_t j = 0; j < i; ++j) {
        if (specs_[i].zeta == specs_[j].zeta) {
          throw InvalidParameter("fidelity zeta values must be distinct");
        }
      }
    }
  }

  std::size_t size() const { return specs_.size(); }
  bool empty() const { return specs_.empty(); }
  const FidelitySpec& operator[](std::size_t i) const { return specs_.at(i); }
  std::span<const FidelitySpec> specs() const { return specs_; }
  auto begin() const { return specs_.begin(); }
  auto end() const { return specs_.end(); }

  /// Index of the highest-zeta channel.
  std::size_t high_index() const {
    return static_cast<std::size_t>(
        std::max_element(specs_.begin(), specs_.end(),
                         [](const auto& a, const auto& b) { return a.zeta < b.zeta; }) -
        specs_.begin());
  }

  /// Index of the lowest-zeta channel.
  std::size_t low_index() const {
    return static_cast<std::size_t>(
        std::min_element(specs_.begin(), specs_.end(),
                         [](const auto& a, const auto& b) { return a.zeta < b.zeta; }) -
        specs_.begin());
  }

  FidelitySet with_weight(std::size_t i, double weight) const {
    auto specs = specs_;
    specs.at(i).weight = weight;
    return FidelitySet(std::move(specs));
  }

 private:
  std::vector<FidelitySpec> specs_;
};

// Hazard ---------------------------------------------------------------------

/// Constant changepoint hazard 1/beta, where beta is the mean segment length.
class Hazard {
 public:
  explicit Hazard(double beta) : beta_(beta) {
    if (!(beta > 1.0) || std::isnan(beta)) {
      throw InvalidParameter("hazard beta must exceed 1, got " + std::to_string(beta));
    }
  }

  double beta() const { return beta_; }
  double rate() const { return 1.0 / beta_; }

 private:
  double beta_;
};

struct HazardLogProbs {
  double log_cp;
  double log_growth;
};

/// Log transition probabilities of the run-length prior: drop to zero with
/// probability 1/beta, otherwise grow by one.
inline HazardLogProbs hazard_log_probs(const Hazard& h) {
  const double rate = h.rate();
  return {std::log(rate), std::log1p(-rate)};
}

// Data -----------------------------------------------------------------------

/// A single time step of a (possibly paired) multi-fidelity stream. Values are
/// indexed by fidelity; absent channels are empty.
struct Datum {
  std::size_t t = 0;
  std::vector<std::optional<double>> values;

  double at(std::size_t fidelity) const {
    if (fidelity >= values.size() || !values[fidelity]) throw MissingFidelity(t, fidelity);
    return *values[fidelity];
  }

  bool has(std::size_t fidelity) const {
    return fidelity < values.size() && values[fidelity].has_value();
  }
};

using Stream = std::vector<Datum>;

// Log-space numerics ---------------------------------------------------------

/// log(sum(exp(xs))) with max-shifting. Returns -inf when every entry is -inf.
inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) throw InvalidArgument("log_sum_exp of empty input");
  if (xs.size() == 1) return xs[0];
  const double m = *std::max_element(xs.begin(), xs.end());
  if (m == kNegInf) return kNegInf;
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

/// Shannon entropy in nats with the 0 log 0 = 0 convention.
inline double entropy(std::span<const double> p) {
  if (p.empty()) throw InvalidDistribution("entropy of empty distribution");
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw InvalidDistribution("distribution has a negative or non-finite entry");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw InvalidDistribution("distribution sums to " + std::to_string(total));
  }
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return std::max(h, 0.0);
}

/// Entropy of the distribution proportional to exp(log_w), evaluated without
/// leaving log space. Entries at -inf carry no mass.
inline double entropy_from_log_weights(std::span<const double> log_w) {
  const double m = *std::max_element(log_w.begin(), log_w.end());
  if (m == kNegInf) throw NumericalDegeneracy("all weights are zero");
  double s = 0.0;
  double s_shift = 0.0;
  for (double a : log_w) {
    if (a == kNegInf) continue;
    const double d = a - m;
    const double e = std::exp(d);
    s += e;
    s_shift += e * d;
  }
  return std::max(std::log(s) - s_shift / s, 0.0);
}

/// exp(log_w - logsumexp(log_w)).
inline std::vector<double> normalize_log(std::span<const double> log_w) {
  const double z = log_sum_exp(log_w);
  if (z == kNegInf || std::isnan(z)) throw NumericalDegeneracy("cannot normalize zero mass");
  std::vector<double> p(log_w.size());
  for (std::size_t i = 0; i < log_w.size(); ++i) p[i] = std::exp(log_w[i] - z);
  return p;
}

}  // namespace mfbocd
