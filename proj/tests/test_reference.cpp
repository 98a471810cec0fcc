#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <sstream>

#include "support/reference.hpp"

using namespace conoma;

TEST_CASE("text dump round-trips bit for bit") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 10; ++i) {
    const ConeProgram prog = testing::random_cone_program(rng);
    const std::string text = cone_program_to_string(prog);
    std::istringstream in(text);
    const ConeProgram back = read_cone_program(in);
    CHECK(cone_program_to_string(back) == text);
  }
}

TEST_CASE("solver matches an external reference on random mixed-cone programs") {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<ConeProgram> progs;
  const auto files = testing::write_random_programs("refprogs", 50, 20240811, progs);
  const auto ref = testing::run_reference(REF_SOLVE_PY, files);

  SolverSettings st;
  st.eps = 1e-8;
  st.max_iters = 400000;
  ConicSolver solver;
  for (std::size_t i = 0; i < progs.size(); ++i) {
    CAPTURE(i);
    REQUIRE(ref[i].status == "optimal");
    const Solution sol = solver.solve(progs[i], st);
    CHECK(sol.status == SolveStatus::Optimal);
    CHECK(sol.primal_res <= 1e-6);
    CHECK(sol.dual_res <= 1e-6);
    CHECK(sol.obj == doctest::Approx(ref[i].objective).epsilon(1e-5));
  }
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(sec < 60.0);
}
