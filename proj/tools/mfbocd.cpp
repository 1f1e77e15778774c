// mfbocd: simulate streams, run detection, tune weights and run ablations.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mfbocd/mfbocd.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mfbocd;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr std::size_t kDenseLimit = 2000;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> policy;
  std::optional<std::size_t> prune_k;
  std::optional<double> target_lf;
};

RunConfig resolve(const Overrides& o) {
  RunConfig c = load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.output_dir = *o.out;
  if (o.policy) c.policy.kind = parse_policy_kind(*o.policy);
  if (o.prune_k) c.prune_k = *o.prune_k;
  if (o.target_lf) c.tune.target_lf = *o.target_lf;
  c.validate();
  return c;
}

std::ofstream open_out(const fs::path& dir, const std::string& name) {
  fs::create_directories(dir);
  std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + (dir / name).string());
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw Error("failed writing " + path.string());
}

void write_json(const fs::path& dir, const std::string& name, const json& j) {
  auto out = open_out(dir, name);
  out << j.dump(2) << '\n';
  finish(out, dir / name);
}

io::LoadedStream load_data(const RunConfig& c) {
  if (c.input) {
    spdlog::info("reading {}", *c.input);
    return io::read_stream_file(*c.input, c.threshold);
  }
  const SyntheticData s = generate(c.generator_config(c.generator_seed()));
  spdlog::info("generated {} steps (seed {})", s.data.size(), c.generator_seed());
  return {s.data, s.is_cp, s.theta};
}

int cmd_simulate(const RunConfig& c) {
  const SyntheticData s = generate(c.generator_config(c.generator_seed()));
  const fs::path dir = c.output_dir;
  auto data = open_out(dir, "data.jsonl");
  io::write_stream_jsonl(data, s);
  finish(data, dir / "data.jsonl");
  auto truth = open_out(dir, "truth.csv");
  io::write_truth_csv(truth, s);
  finish(truth, dir / "truth.csv");
  spdlog::info("wrote {} steps to {}", s.data.size(), dir.string());
  return 0;
}

// Distance from each t (1-based) to the nearest true changepoint.
std::vector<double> changepoint_distance(const std::vector<bool>& is_cp) {
  const std::size_t n = is_cp.size();
  std::vector<double> d(n, static_cast<double>(n));
  double last = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_cp[i]) last = static_cast<double>(i);
    if (last >= 0.0) d[i] = static_cast<double>(i) - last;
  }
  last = -1.0;
  for (std::size_t i = n; i-- > 0;) {
    if (is_cp[i]) last = static_cast<double>(i);
    if (last >= 0.0) d[i] = std::min(d[i], last - static_cast<double>(i));
  }
  return d;
}

json mean_by_choice(const std::vector<double>& v, const std::vector<std::size_t>& choices, std::size_t index) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (choices[i] != index) continue;
    s += v[i];
    ++n;
  }
  return n ? json(s / static_cast<double>(n)) : json(nullptr);
}

int cmd_detect(const RunConfig& c) {
  const io::LoadedStream data = load_data(c);
  const FidelitySet fids = c.fidelity_set();
  const Policy policy = c.make_policy();
  const Hazard hazard = c.hazard();
  const std::size_t hf = fids.high_index();
  const bool paired = std::all_of(data.data.begin(), data.data.end(), [&](const Datum& d) { return d.has(hf); });

  RunOutput run;
  std::optional<TrialResult> scored;
  with_model(c.model, [&](const auto& model) {
    if (paired) {
      TrialOutput t = run_trial(data.data, policy, fids, hazard, model, c.run_options(), c.seed);
      run = std::move(t.run);
      scored = t.result;
    } else {
      spdlog::warn("high-fidelity channel is incomplete; skipping reference metrics");
      run = run_policy(data.data, model, hazard, fids, policy, c.run_options());
    }
    return 0;
  });

  const fs::path dir = c.output_dir;
  {
    auto out = open_out(dir, "choices.csv");
    out << "t,fidelity,zeta,cost\n";
    for (std::size_t i = 0; i < run.record.choices.size(); ++i) {
      const FidelitySpec& f = fids[run.record.choices[i]];
      out << data.data[i].t << ',' << run.record.choices[i] << ',' << io::format_double(f.zeta) << ','
          << io::format_double(f.cost) << '\n';
    }
    finish(out, dir / "choices.csv");
  }
  {
    auto out = open_out(dir, "pmean.csv");
    out << "t,pmean\n";
    for (std::size_t i = 0; i < run.record.pmean.size(); ++i) {
      out << data.data[i].t << ',' << io::format_double(run.record.pmean[i]) << '\n';
    }
    finish(out, dir / "pmean.csv");
  }
  const bool sparse = c.posterior_format == PosteriorFormat::kSparse ||
                      (c.posterior_format == PosteriorFormat::kAuto && data.data.size() > kDenseLimit);
  {
    const std::string name = sparse ? "R.jsonl" : "R.csv";
    fs::remove(dir / (sparse ? "R.csv" : "R.jsonl"));
    auto out = open_out(dir, name);
    if (sparse) {
      io::write_posterior_jsonl(out, run.record);
    } else {
      io::write_posterior_csv(out, run.record);
    }
    finish(out, dir / name);
  }
  write_json(dir, "ledger.json", io::ledger_to_json(run.ledger));

  json metrics;
  metrics["policy"] = to_string(c.policy.kind);
  metrics["T"] = data.data.size();
  metrics["mse"] = scored ? json(scored->mse) : json(nullptr);
  metrics["l1"] = scored ? json(scored->l1) : json(nullptr);
  metrics["lf_fraction"] = fids.size() > 1 ? lf_fraction(run.record.choices, fids.low_index()) : 0.0;
  metrics["totals"] = io::ledger_to_json(run.ledger)["totals"];
  if (fids.size() > 1) {
    const std::size_t lf = fids.low_index();
    metrics["mean_prior_entropy_hf"] = mean_by_choice(run.prior_entropy, run.record.choices, hf);
    metrics["mean_prior_entropy_lf"] = mean_by_choice(run.prior_entropy, run.record.choices, lf);
    if (data.is_cp) {
      const std::vector<double> dist = changepoint_distance(*data.is_cp);
      metrics["mean_changepoint_distance_hf"] = mean_by_choice(dist, run.record.choices, hf);
      metrics["mean_changepoint_distance_lf"] = mean_by_choice(dist, run.record.choices, lf);
    }
  }
  write_json(dir, "metrics.json", metrics);
  spdlog::info("detect: T={} lf_fraction={}", data.data.size(), metrics["lf_fraction"].dump());
  return 0;
}

int cmd_tune(const RunConfig& c) {
  std::vector<Stream> heldout;
  if (c.input) {
    heldout.push_back(io::read_stream_file(*c.input, c.threshold).data);
  } else {
    for (std::size_t i = 0; i < c.tune.heldout_streams; ++i) {
      heldout.push_back(generate(c.generator_config(derive_seed(c.generator_seed(), i, 0x7e57))).data);
    }
  }
  const FidelitySet fids(c.fidelities);
  TuneOptions opts;
  opts.bracket_lo = c.tune.bracket_lo;
  opts.bracket_hi = c.tune.bracket_hi;
  opts.max_steps = c.tune.max_steps;
  opts.info = c.info;
  opts.run = c.run_options();

  json report{{"target_lf", c.tune.target_lf}, {"tolerance", c.tune.tolerance}, {"heldout_streams", heldout.size()}};
  with_model(c.model, [&](const auto& model) {
    try {
      const TuneResult r = tune_weights(std::span<const Stream>(heldout), model, c.hazard(), fids,
                                        c.tune.target_lf, c.tune.tolerance, opts);
      report["status"] = "ok";
      report["ratio"] = r.ratio;
      report["lf_fraction"] = r.lf_fraction;
      report["evaluations"] = r.evaluations;
    } catch (const TuningFailed& e) {
      spdlog::warn("tuning did not reach the target: {}", e.what());
      report["status"] = "warning";
      report["message"] = e.what();
      report["ratio"] = e.best().ratio;
      report["lf_fraction"] = e.best().lf_fraction;
      report["evaluations"] = e.best().evaluations;
    }
    return 0;
  });
  write_json(c.output_dir, "tune.json", report);
  spdlog::info("tune: status={} ratio={}", report["status"].get<std::string>(), report["ratio"].dump());
  return 0;
}

json summary_json(const Summary& s) { return {{"mean", s.mean}, {"two_se", s.two_se}, {"n", s.n}}; }

int cmd_ablate(const RunConfig& c) {
  const AblationConfig cfg = ablation_config(c);
  spdlog::info("ablate: {} trials x {} cost settings", cfg.n_trials, cfg.cost_grid.size());
  const AblationTable table = run_ablation(cfg);
  const fs::path dir = c.output_dir;
  const char* baseline = cfg.baseline == Baseline::kRandom ? "random" : "info";

  auto csv = open_out(dir, "ablation.csv");
  csv << "cost_hf,cost_lf,lf_fraction,lf_fraction_2se,lf_only_mse,lf_only_mse_2se,baseline_mse,baseline_mse_2se,"
         "info_mse,info_mse_2se,lf_only_l1,lf_only_l1_2se,baseline_l1,baseline_l1_2se,info_l1,info_l1_2se,"
         "mse_separated,l1_separated\n";
  json rows = json::array();
  for (const AblationRow& r : table.rows) {
    auto f = io::format_double;
    csv << f(r.cost_hf) << ',' << f(r.cost_lf) << ',' << f(r.lf_fraction.mean) << ',' << f(r.lf_fraction.two_se)
        << ',' << f(r.lf_only_mse.mean) << ',' << f(r.lf_only_mse.two_se) << ',' << f(r.baseline_mse.mean) << ','
        << f(r.baseline_mse.two_se) << ',' << f(r.info_mse.mean) << ',' << f(r.info_mse.two_se) << ','
        << f(r.lf_only_l1.mean) << ',' << f(r.lf_only_l1.two_se) << ',' << f(r.baseline_l1.mean) << ','
        << f(r.baseline_l1.two_se) << ',' << f(r.info_l1.mean) << ',' << f(r.info_l1.two_se) << ','
        << separated_below(r.info_mse, r.baseline_mse) << ',' << separated_below(r.info_l1, r.baseline_l1)
        << '\n';
    rows.push_back({{"cost_hf", r.cost_hf},
                    {"cost_lf", r.cost_lf},
                    {"lf_fraction", summary_json(r.lf_fraction)},
                    {"lf_only", {{"mse", summary_json(r.lf_only_mse)}, {"l1", summary_json(r.lf_only_l1)}}},
                    {"baseline", {{"mse", summary_json(r.baseline_mse)}, {"l1", summary_json(r.baseline_l1)}}},
                    {"info", {{"mse", summary_json(r.info_mse)}, {"l1", summary_json(r.info_l1)}}},
                    {"mse_separated", separated_below(r.info_mse, r.baseline_mse)},
                    {"l1_separated", separated_below(r.info_l1, r.baseline_l1)}});
  }
  finish(csv, dir / "ablation.csv");
  write_json(dir, "ablation.json",
             {{"family", to_string(table.family)},
              {"n_trials", table.n_trials},
              {"baseline", baseline},
              {"zeta_hf", cfg.zeta_hf},
              {"zeta_lf", cfg.zeta_lf},
              {"seed", cfg.seed},
              {"rows", std::move(rows)}});
  return 0;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("mfbocd");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("MFCPD_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Multi-fidelity Bayesian online changepoint detection"};
  app.require_subcommand(1);
  Overrides o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Seed override");
    sub->add_option("--out", o.out, "Output directory override");
    sub->add_option("--policy", o.policy, "info-rate, margin, random, fixed-hf or fixed-lf");
    sub->add_option("--prune-k", o.prune_k, "Keep at most this many run-length hypotheses");
    sub->add_option("--target-lf", o.target_lf, "Target low-fidelity fraction for tune");
  };
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic paired stream");
  auto* detect = app.add_subcommand("detect", "Run detection on a stream");
  auto* tune = app.add_subcommand("tune", "Tune the low/high weight ratio to a target LF fraction");
  auto* ablate = app.add_subcommand("ablate", "Information-based vs random switching over a cost grid");
  for (auto* sub : {simulate, detect, tune, ablate}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  RunConfig cfg;
  try {
    cfg = resolve(o);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  }

  try {
    if (*simulate) return cmd_simulate(cfg);
    if (*detect) return cmd_detect(cfg);
    if (*tune) return cmd_tune(cfg);
    return cmd_ablate(cfg);
  } catch (const InvalidParameter& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
}
