#pragma once

// File formats.
//
// Stream JSONL, one record per time step:
//   {"t": 1, "values": {"0": 0.83, "1": 1.42}, "theta": 1.1, "is_cp": false}
// "values" maps fidelity index to observation; "theta" and "is_cp" are
// optional ground truth. Posterior records are written as a dense CSV
// (header t,r0..rT, one row per t) or as sparse JSONL
// ({"t": t, "r": [...], "p": [...]} with nonzero entries only).

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfbocd/core.hpp"
#include "mfbocd/cost.hpp"
#include "mfbocd/detector.hpp"
#include "mfbocd/synth.hpp"

namespace mfbocd::io {

using nlohmann::json;

class FormatError : public Error {
 public:
  using Error::Error;
};

/// Shortest decimal string that parses back to exactly `v`.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc{}) throw Error("failed to format number");
  return std::string(buf, res.ptr);
}

struct LoadedStream {
  Stream data;
  std::optional<std::vector<bool>> is_cp;
  std::optional<std::vector<double>> theta;
};

inline json datum_to_json(const Datum& d, std::optional<double> theta = std::nullopt,
                          std::optional<bool> is_cp = std::nullopt) {
  json values = json::object();
  for (std::size_t j = 0; j < d.values.size(); ++j) {
    if (d.values[j]) values[std::to_string(j)] = *d.values[j];
  }
  json rec = {{"t", d.t}, {"values", std::move(values)}};
  if (theta) rec["theta"] = *theta;
  if (is_cp) rec["is_cp"] = *is_cp;
  return rec;
}

inline void write_stream_jsonl(std::ostream& os, const SyntheticData& s) {
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    os << datum_to_json(s.data[i], s.theta[i], static_cast<bool>(s.is_cp[i])).dump() << '\n';
  }
}

inline void write_stream_jsonl(std::ostream& os, const Stream& s) {
  for (const Datum& d : s) os << datum_to_json(d).dump() << '\n';
}

/// Parses a stream. Time indices must run 1, 2, ... in order. When
/// `thresholds` is given, channel j is binarized as value >= thresholds[j]
/// (a single entry applies to every channel).
inline LoadedStream read_stream_jsonl(std::istream& is,
                                      const std::optional<std::vector<double>>& thresholds = std::nullopt) {
  LoadedStream out;
  std::vector<bool> is_cp;
  std::vector<double> theta;
  bool any_truth = false;
  bool all_truth = true;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
    auto fail = [&](const std::string& msg) {
      throw FormatError("line " + std::to_string(lineno) + ": " + msg);
    };
    if (!rec.is_object()) fail("record must be an object");
    for (const auto& [key, _] : rec.items()) {
      if (key != "t" && key != "values" && key != "theta" && key != "is_cp") fail("unknown key '" + key + "'");
    }
    if (!rec.contains("t") || !rec["t"].is_number_unsigned()) fail("missing integer 't'");
    const std::size_t t = rec["t"].get<std::size_t>();
    if (t != out.data.size() + 1) fail("expected t=" + std::to_string(out.data.size() + 1));
    if (!rec.contains("values") || !rec["values"].is_object()) fail("missing 'values' object");
    Datum d;
    d.t = t;
    for (const auto& [key, val] : rec["values"].items()) {
      std::size_t idx = 0;
      const auto res = std::from_chars(key.data(), key.data() + key.size(), idx);
      if (res.ec != std::errc{} || res.ptr != key.data() + key.size()) fail("bad fidelity key '" + key + "'");
      if (val.is_null()) continue;
      if (!val.is_number()) fail("value for fidelity " + key + " is not a number");
      double v = val.get<double>();
      if (thresholds) {
        const double thr = thresholds->size() == 1 ? thresholds->front()
                           : idx < thresholds->size() ? (*thresholds)[idx]
                                                      : throw FormatError("no threshold for fidelity " + key);
        v = v >= thr ? 1.0 : 0.0;
      }
      if (d.values.size() <= idx) d.values.resize(idx + 1);
      d.values[idx] = v;
    }
    const bool has_truth = rec.contains("theta") && rec.contains("is_cp");
    any_truth = any_truth || has_truth;
    all_truth = all_truth && has_truth;
    if (has_truth) {
      if (!rec["theta"].is_number() || !rec["is_cp"].is_boolean()) fail("bad truth fields");
      theta.push_back(rec["theta"].get<double>());
      is_cp.push_back(rec["is_cp"].get<bool>());
    }
    out.data.push_back(std::move(d));
  }
  if (any_truth && all_truth) {
    out.is_cp = std::move(is_cp);
    out.theta = std::move(theta);
  }
  return out;
}

inline LoadedStream read_stream_file(const std::string& path,
                                     const std::optional<std::vector<double>>& thresholds = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_stream_jsonl(in, thresholds);
}

inline void write_truth_csv(std::ostream& os, const SyntheticData& s) {
  os << "t,is_cp,theta\n";
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    os << s.data[i].t << ',' << (s.is_cp[i] ? 1 : 0) << ',' << format_double(s.theta[i]) << '\n';
  }
}

inline void write_posterior_csv(std::ostream& os, const PosteriorRecord& rec) {
  const std::size_t n = rec.rows.size();
  os << 't';
  for (std::size_t r = 0; r < n; ++r) os << ",r" << r;
  os << '\n';
  std::vector<double> row(n);
  for (std::size_t t = 0; t < n; ++t) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t k = 0; k < rec.rows[t].r.size(); ++k) row.at(rec.rows[t].r[k]) = rec.rows[t].p[k];
    os << t;
    for (double v : row) os << ',' << format_double(v);
    os << '\n';
  }
}

inline void write_posterior_jsonl(std::ostream& os, const PosteriorRecord& rec) {
  for (std::size_t t = 0; t < rec.rows.size(); ++t) {
    json r = json::array();
    json p = json::array();
    for (std::size_t k = 0; k < rec.rows[t].r.size(); ++k) {
      if (rec.rows[t].p[k] == 0.0) continue;
      r.push_back(rec.rows[t].r[k]);
      p.push_back(rec.rows[t].p[k]);
    }
    os << json{{"t", t}, {"r", std::move(r)}, {"p", std::move(p)}}.dump() << '\n';
  }
}

/// Reads either posterior format back into sparse rows.
inline PosteriorRecord read_posterior_jsonl(std::istream& is) {
  PosteriorRecord rec;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (j.at("t").get<std::size_t>() != rec.rows.size()) throw FormatError("posterior rows out of order");
    rec.rows.push_back({j.at("r").get<std::vector<std::size_t>>(), j.at("p").get<std::vector<double>>()});
  }
  return rec;
}

inline PosteriorRecord read_posterior_csv(std::istream& is) {
  PosteriorRecord rec;
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty posterior csv");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    if (std::stoul(cell) != rec.rows.size()) throw FormatError("posterior rows out of order");
    PosteriorRow row;
    std::size_t r = 0;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc{}) throw FormatError("bad number '" + cell + "'");
      if (v != 0.0) {
        row.r.push_back(r);
        row.p.push_back(v);
      }
      ++r;
    }
    rec.rows.push_back(std::move(row));
  }
  return rec;
}

inline json ledger_to_json(const CostLedger& ledger) {
  json steps = json::array();
  for (std::size_t i = 0; i < ledger.entries().size(); ++i) {
    const CostEntry& e = ledger.entries()[i];
    steps.push_back({{"t", i + 1},
                     {"observation_cost", e.observation_cost},
                     {"decision_flops", e.decision_flops},
                     {"detector_flops", e.detector_flops}});
  }
  return {{"totals",
           {{"observation_cost", ledger.observation_cost_total()},
            {"decision_flops", ledger.decision_flops_total()},
            {"detector_flops", ledger.detector_flops_total()}}},
          {"steps", std::move(steps)}};
}

}  // namespace mfbocd::io
