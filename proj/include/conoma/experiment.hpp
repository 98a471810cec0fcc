#pragma once

// Experiment drivers: named parameter sweeps over Monte-Carlo drops, run on a
// small work pool, emitting RFC-4180 CSV plus a JSON manifest. All numeric
// output is formatted with %.17g so a rerun with the same manifest reproduces
// the CSV byte for byte (the runtime experiment's wall-clock column is the one
// deliberate exception).

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "conoma/metrics.hpp"
#include "conoma/orchestrator.hpp"

#ifndef CONOMA_BUILD_ID
#define CONOMA_BUILD_ID "unknown"
#endif

namespace conoma {

inline const char* build_id() { return CONOMA_BUILD_ID; }

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"fading",        "nu",      "uav-power",
                                                 "comp-capacity", "scale",   "runtime",
                                                 "convergence"};
  return names;
}

struct ExperimentConfig {
  std::string name;
  NetworkParams params;       // base scenario parameters (desk scale by default)
  std::string out_dir;        // empty: keep results in memory only
  std::vector<Scheme> schemes = {Scheme::CoNoma, Scheme::Noma, Scheme::Sdma};
  std::vector<RunMode> modes = {RunMode::Crm, RunMode::Drm};
  std::vector<double> sweep;  // empty: the experiment's default sweep
  // Coarse time-split search grid used by the sweep experiments; the `nu`
  // experiment sweeps the full params.nu_grid instead.
  std::vector<double> conoma_nu_grid = {0.6, 0.8, 1.0};
  RunOptions run;
  int threads = 0;  // 0: hardware concurrency

  ExperimentConfig() {
    run.max_relaxed_iters = 30;
    run.max_fixed_iters = 10;
  }
};

struct RunRow {
  std::string sweep_name;
  double sweep_value = 0.0;
  int drop = 0;
  std::uint64_t seed = 0;
  Scheme scheme = Scheme::CoNoma;
  RunMode mode = RunMode::Crm;
  double nu = 1.0;
  double objective = 0.0;       // sum ln(r / Mbit/s)
  double sum_rate_mbit = 0.0;
  double jain = 0.0;
  int direct_served = 0;        // weak devices on the direct link
  int relay_served = 0;
  double avg_delay_ms = 0.0;
  double avg_transmission_ms = 0.0;
  double avg_computation_ms = 0.0;
  double avg_fronthaul_ms = 0.0;
  double worst_delay_ms = 0.0;
  int relaxed_iters = 0;
  int fixed_iters = 0;
  double wall_sec = 0.0;
};

struct TraceRow {
  double sweep_value = 0.0;
  int drop = 0;
  std::uint64_t seed = 0;
  Scheme scheme = Scheme::CoNoma;
  RunMode mode = RunMode::Crm;
  int iteration = 0;
  Phase phase = Phase::Relaxed;
  double objective = 0.0;
  double improvement = 0.0;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<double> sweep;
  std::vector<RunRow> rows;
  std::vector<TraceRow> trace_rows;  // convergence experiment only
  std::string csv_path, manifest_path;
};

namespace detail {

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string num17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline const char* sweep_name_of(const std::string& experiment) {
  if (experiment == "fading") return "additional_fading_db";
  if (experiment == "nu") return "nu";
  if (experiment == "uav-power") return "p_ec_max_dbm";
  if (experiment == "comp-capacity") return "compute_scale";
  if (experiment == "scale" || experiment == "runtime") return "num_devices";
  return "none";
}

inline std::vector<double> default_sweep(const std::string& experiment,
                                         const NetworkParams& params) {
  if (experiment == "fading") return {0.0, 3.0, 6.0, 9.0, 12.0, 15.0};
  if (experiment == "nu") return params.nu_grid;
  if (experiment == "uav-power") return {16.0, 19.0, 22.0, 25.0, 28.0};
  if (experiment == "comp-capacity") return {0.5, 0.75, 1.0, 1.5, 2.0};
  if (experiment == "scale") return {6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0};
  if (experiment == "runtime") return {8.0, 14.0, 20.0};
  return {0.0};  // convergence
}

inline NetworkParams apply_sweep(const std::string& experiment, NetworkParams p, double v) {
  if (experiment == "fading") p.additional_fading = v;
  else if (experiment == "uav-power") p.p_ec_max = v;
  else if (experiment == "comp-capacity") {
    p.f_cc_max *= v;
    p.f_ec_max *= v;
  } else if (experiment == "scale" || experiment == "runtime") {
    p.num_devices = static_cast<int>(v);
  }
  // "nu" fixes the time split at run time, not in the scenario.
  return p;
}

struct Job {
  double sweep_value = 0.0;
  int drop = 0;
  Scheme scheme = Scheme::CoNoma;
  RunMode mode = RunMode::Crm;
};

inline RunResult execute_job(const ExperimentConfig& cfg, const Scenario& sc, const Job& job,
                             double* nu_out) {
  RunOptions opts = cfg.run;
  opts.scheme = job.scheme;
  if (job.scheme != Scheme::CoNoma) {
    *nu_out = 1.0;
    return baseline_run(sc, job.scheme, job.mode, opts);
  }
  if (cfg.name == "nu") {
    *nu_out = job.sweep_value;
    return run_once(sc, job.sweep_value, job.mode, opts);
  }
  const NuSearchResult best =
      nu_search(sc, Scheme::CoNoma, job.mode, opts, cfg.conoma_nu_grid);
  *nu_out = best.nu;
  return best.run;
}

inline RunRow make_row(const ExperimentConfig& cfg, const Scenario& sc, const Job& job,
                       const RunResult& res, double nu, double wall_sec) {
  RunRow row;
  row.sweep_name = sweep_name_of(cfg.name);
  row.sweep_value = job.sweep_value;
  row.drop = job.drop;
  row.seed = sc.params.seed;
  row.scheme = job.scheme;
  row.mode = job.mode;
  row.nu = nu;
  row.objective = res.trace.final_objective;
  row.sum_rate_mbit = res.state.r.sum() / 1e6;
  row.jain = jain_index(res.state);
  for (int w : sc.topology.weak_set)
    (res.trace.selection.relay[w] ? row.relay_served : row.direct_served)++;
  const DelayReport rep = delay_report(res.state, sc, res.trace.selection.bs_links);
  row.avg_delay_ms = rep.avg_total * 1e3;
  row.avg_transmission_ms = rep.avg_transmission * 1e3;
  row.avg_computation_ms = rep.avg_computation * 1e3;
  row.avg_fronthaul_ms = rep.avg_fronthaul * 1e3;
  row.worst_delay_ms = rep.worst_total * 1e3;
  row.relaxed_iters = res.trace.relaxed_iters;
  row.fixed_iters = res.trace.fixed_iters;
  row.wall_sec = wall_sec;
  return row;
}

}  // namespace detail

inline const std::vector<std::string>& run_csv_columns() {
  static const std::vector<std::string> cols = {
      "experiment",     "sweep",           "value",
      "drop",           "seed",            "scheme",
      "mode",           "nu",              "objective",
      "sum_rate_mbit",  "jain",            "direct_served",
      "relay_served",   "avg_delay_ms",    "avg_transmission_ms",
      "avg_computation_ms", "avg_fronthaul_ms", "worst_delay_ms",
      "relaxed_iters",  "fixed_iters",     "wall_sec"};
  return cols;
}

inline const std::vector<std::string>& trace_csv_columns() {
  static const std::vector<std::string> cols = {
      "experiment", "value",     "drop",      "seed",       "scheme", "mode",
      "iteration",  "phase",     "objective", "improvement"};
  return cols;
}

inline void write_run_csv(const ExperimentResult& result, std::ostream& out) {
  const auto& cols = run_csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << "\r\n";
  const bool timed = result.config.name == "runtime";
  for (const auto& r : result.rows) {
    out << detail::csv_escape(result.config.name) << ',' << detail::csv_escape(r.sweep_name)
        << ',' << detail::num17(r.sweep_value) << ',' << r.drop << ',' << r.seed << ','
        << to_string(r.scheme) << ',' << to_string(r.mode) << ',' << detail::num17(r.nu) << ','
        << detail::num17(r.objective) << ',' << detail::num17(r.sum_rate_mbit) << ','
        << detail::num17(r.jain) << ',' << r.direct_served << ',' << r.relay_served << ','
        << detail::num17(r.avg_delay_ms) << ',' << detail::num17(r.avg_transmission_ms) << ','
        << detail::num17(r.avg_computation_ms) << ',' << detail::num17(r.avg_fronthaul_ms) << ','
        << detail::num17(r.worst_delay_ms) << ',' << r.relaxed_iters << ',' << r.fixed_iters
        << ',' << (timed ? detail::num17(r.wall_sec) : std::string()) << "\r\n";
  }
}

inline void write_trace_csv(const ExperimentResult& result, std::ostream& out) {
  const auto& cols = trace_csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << "\r\n";
  for (const auto& t : result.trace_rows) {
    out << detail::csv_escape(result.config.name) << ',' << detail::num17(t.sweep_value) << ','
        << t.drop << ',' << t.seed << ',' << to_string(t.scheme) << ',' << to_string(t.mode)
        << ',' << t.iteration << ',' << to_string(t.phase) << ',' << detail::num17(t.objective)
        << ',' << detail::num17(t.improvement) << "\r\n";
  }
}

inline nlohmann::json experiment_manifest(const ExperimentResult& result) {
  const ExperimentConfig& cfg = result.config;
  nlohmann::json j;
  j["format"] = "conoma-experiment-manifest-v1";
  j["experiment"] = cfg.name;
  j["csv_schema"] = cfg.name == "convergence" ? "trace-v1" : "run-v1";
  j["columns"] = cfg.name == "convergence" ? trace_csv_columns() : run_csv_columns();
  j["build_id"] = build_id();
  j["params"] = cfg.params;
  j["seed"] = cfg.params.seed;
  j["drops"] = cfg.params.num_drops;
  std::vector<std::string> schemes, modes;
  for (Scheme s : cfg.schemes) schemes.emplace_back(to_string(s));
  for (RunMode m : cfg.modes) modes.emplace_back(to_string(m));
  j["schemes"] = schemes;
  j["modes"] = modes;
  j["sweep"] = result.sweep;
  j["sweep_name"] = detail::sweep_name_of(cfg.name);
  j["conoma_nu_grid"] = cfg.conoma_nu_grid;
  j["objective_normalization"] =
      "sum over devices of the natural log of the rate in Mbit/s";
  j["solver"] = {{"eps", cfg.run.solver.eps},
                 {"relax_alpha", cfg.run.solver.relax_alpha},
                 {"max_iters", cfg.run.solver.max_iters}};
  j["outer"] = {{"max_relaxed_iters", cfg.run.max_relaxed_iters},
                {"max_fixed_iters", cfg.run.max_fixed_iters},
                {"omega", cfg.run.omega}};
  return j;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), cfg.name) == names.end()) {
    std::string msg = "unknown experiment '" + cfg.name + "'; available:";
    for (const auto& n : names) msg += " " + n;
    throw std::invalid_argument(msg);
  }
  cfg.params.validate();

  ExperimentResult result;
  result.config = cfg;
  result.sweep = cfg.sweep.empty() ? detail::default_sweep(cfg.name, cfg.params) : cfg.sweep;

  // The nu sweep exercises the Co-NOMA time split only; baselines have no nu.
  std::vector<Scheme> schemes = cfg.schemes;
  if (cfg.name == "nu") schemes = {Scheme::CoNoma};

  std::vector<detail::Job> jobs;
  for (double v : result.sweep)
    for (int drop = 0; drop < cfg.params.num_drops; ++drop)
      for (Scheme s : schemes)
        for (RunMode m : cfg.modes) jobs.push_back({v, drop, s, m});

  struct Slot {
    RunRow row;
    std::vector<TraceRow> trace;
    std::string error;
  };
  std::vector<Slot> slots(jobs.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const detail::Job& job = jobs[i];
      try {
        const NetworkParams p = detail::apply_sweep(cfg.name, cfg.params, job.sweep_value);
        const Scenario sc = make_scenario(p, cfg.params.seed + static_cast<std::uint64_t>(job.drop));
        const auto t0 = std::chrono::steady_clock::now();
        double nu = 1.0;
        const RunResult res = detail::execute_job(cfg, sc, job, &nu);
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        slots[i].row = detail::make_row(cfg, sc, job, res, nu, wall);
        if (cfg.name == "convergence") {
          int it = 0;
          for (const auto& rec : res.trace.iterations) {
            TraceRow t;
            t.sweep_value = job.sweep_value;
            t.drop = job.drop;
            t.seed = sc.params.seed;
            t.scheme = job.scheme;
            t.mode = job.mode;
            t.iteration = it++;
            t.phase = rec.phase;
            t.objective = rec.objective;
            t.improvement = rec.improvement;
            slots[i].trace.push_back(t);
          }
        }
      } catch (const std::exception& e) {
        slots[i].error = e.what();
      }
    }
  };

  int nthreads = cfg.threads > 0 ? cfg.threads
                                 : static_cast<int>(std::thread::hardware_concurrency());
  if (nthreads < 1) nthreads = 1;
  nthreads = std::min<int>(nthreads, static_cast<int>(jobs.size()));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::string errors;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!slots[i].error.empty()) {
      errors += "job " + std::to_string(i) + " (" + to_string(jobs[i].scheme) + "/" +
                to_string(jobs[i].mode) + " value " + detail::num17(jobs[i].sweep_value) +
                " drop " + std::to_string(jobs[i].drop) + "): " + slots[i].error + "\n";
      continue;
    }
    result.rows.push_back(slots[i].row);
    for (auto& t : slots[i].trace) result.trace_rows.push_back(std::move(t));
  }
  if (!errors.empty()) throw std::runtime_error("experiment '" + cfg.name + "' failed:\n" + errors);

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    result.csv_path = cfg.out_dir + "/" + cfg.name + ".csv";
    result.manifest_path = cfg.out_dir + "/" + cfg.name + ".manifest.json";
    std::ofstream csv(result.csv_path, std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write " + result.csv_path);
    if (cfg.name == "convergence") write_trace_csv(result, csv);
    else write_run_csv(result, csv);
    std::ofstream mf(result.manifest_path, std::ios::binary);
    mf << experiment_manifest(result).dump(2) << "\n";
  }
  return result;
}

}  // namespace conoma
