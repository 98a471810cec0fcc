// conoma command line: experiment driver (`run`) and standalone cone-program
// solves (`solve-file`).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "conoma/experiment.hpp"

namespace {

conoma::Scheme parse_scheme(const std::string& s) {
  if (s == "conoma") return conoma::Scheme::CoNoma;
  if (s == "noma") return conoma::Scheme::Noma;
  if (s == "sdma") return conoma::Scheme::Sdma;
  throw CLI::ValidationError("--scheme", "expected conoma|noma|sdma");
}

conoma::RunMode parse_mode(const std::string& s) {
  if (s == "crm") return conoma::RunMode::Crm;
  if (s == "drm") return conoma::RunMode::Drm;
  throw CLI::ValidationError("--mode", "expected crm|drm");
}

int cmd_run(const std::string& experiment, const std::string& scenario_path,
            const std::string& out_dir, std::int64_t seed, int drops, const std::string& mode,
            const std::string& scheme, bool paper_scale, int threads) {
  conoma::ExperimentConfig cfg;
  cfg.name = experiment;
  cfg.out_dir = out_dir;
  cfg.threads = threads;
  if (paper_scale) cfg.params = conoma::NetworkParams::paper_scale();
  if (!scenario_path.empty()) {
    const conoma::Scenario sc = conoma::load_scenario_file(scenario_path);
    cfg.params = sc.params;
  }
  if (seed >= 0) cfg.params.seed = static_cast<std::uint64_t>(seed);
  if (drops > 0) cfg.params.num_drops = drops;
  if (!mode.empty()) cfg.modes = {parse_mode(mode)};
  if (!scheme.empty()) cfg.schemes = {parse_scheme(scheme)};

  const conoma::ExperimentResult res = conoma::run_experiment(cfg);
  std::printf("%s: %zu rows", cfg.name.c_str(), res.rows.size());
  if (!res.csv_path.empty())
    std::printf(" -> %s (+ %s)", res.csv_path.c_str(), res.manifest_path.c_str());
  std::printf("\n");
  return 0;
}

int cmd_solve_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::fprintf(stderr, "cannot open %s\n", path.c_str());
    return 1;
  }
  const conoma::ConeProgram prog = conoma::read_cone_program(in);
  conoma::ConicSolver solver;
  const conoma::Solution sol = solver.solve(prog);
  std::printf("status %s\n", conoma::to_string(sol.status));
  std::printf("objective %.17g\n", sol.obj);
  std::printf("reported_objective %.17g\n", sol.reported_objective);
  std::printf("iterations %d\n", sol.iterations);
  std::printf("primal_res %.3e dual_res %.3e gap %.3e\n", sol.primal_res, sol.dual_res, sol.gap);
  return sol.status == conoma::SolveStatus::Optimal ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conoma: cooperative-NOMA resource management experiments"};
  app.require_subcommand(1);

  std::string experiment, scenario_path, out_dir = "out", mode, scheme;
  std::int64_t seed = -1;
  int drops = 0, threads = 0;
  bool paper_scale = false;
  CLI::App* run = app.add_subcommand("run", "run a named experiment");
  run->add_option("--experiment", experiment, "one of: fading nu uav-power comp-capacity scale runtime convergence")
      ->required();
  run->add_option("--scenario", scenario_path, "scenario file (.json or key=value text)");
  run->add_option("--out", out_dir, "output directory for CSV + manifest");
  run->add_option("--seed", seed, "base RNG seed (default: scenario seed)");
  run->add_option("--drops", drops, "Monte-Carlo drops (default: scenario num_drops)");
  run->add_option("--mode", mode, "restrict to crm or drm");
  run->add_option("--scheme", scheme, "restrict to conoma, noma or sdma");
  run->add_flag("--paper-scale", paper_scale, "full-scale network instead of desk scale");
  run->add_option("--threads", threads, "worker threads (default: hardware concurrency)");

  std::string prog_path;
  CLI::App* solve = app.add_subcommand("solve-file", "solve a serialized cone program");
  solve->add_option("program", prog_path, "cone program text dump")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (app.got_subcommand(run))
      return cmd_run(experiment, scenario_path, out_dir, seed, drops, mode, scheme, paper_scale,
                     threads);
    return cmd_solve_file(prog_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
