#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "conoma/fp.hpp"
#include "conoma/phy.hpp"
#include "conoma/solver.hpp"
#include "conoma/sparsity.hpp"
#include "conoma/subproblem.hpp"
#include "conoma/units.hpp"

using namespace conoma;

namespace {

// A strictly feasible, deliberately conservative operating point: equal-split
// beams well inside every power budget, half the device power for D2D, equal
// computation shares, and rates/SINRs taken from the actual channel state.
ResourceState seed_state(const Scenario& sc, double nu, Scheme scheme,
                         const std::vector<char>& decode) {
  const auto& topo = sc.topology;
  const int K = topo.num_devices();
  ResourceState st = ResourceState::zeros(sc.dim(), sc.params.num_bs, K);
  st.nu = nu;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int k = 0; k < K; ++k) {
    const auto blk = platform_block(sc, k);
    const bool weak = !topo.is_strong[k];
    auto fill = [&](Eigen::MatrixXcd& q) {
      for (int c = 0; c < blk.length; ++c)
        q(blk.offset + c, k) = cplx(gauss(rng), gauss(rng));
    };
    if (!weak || scheme != Scheme::Noma) fill(st.q_direct);
    if (weak && scheme != Scheme::Sdma) fill(st.q_relay);
  }
  // Scale all beams uniformly so every transmitter sits at 10% of budget.
  double worst = 0.0;
  const Eigen::VectorXd pcc = power_cc(st, sc);
  for (int b = 0; b < sc.params.num_bs; ++b)
    worst = std::max(worst, pcc(b) / dbm_to_watt(sc.params.p_bs_max));
  for (int e = 0; e < sc.params.num_ec; ++e) {
    double tx = 0.0;
    for (int k : topo.ec_sets[e]) {
      const auto blk = platform_block(sc, k);
      tx += st.q_direct.col(k).segment(blk.offset, blk.length).squaredNorm() +
            st.q_relay.col(k).segment(blk.offset, blk.length).squaredNorm();
    }
    worst = std::max(worst, tx / dbm_to_watt(sc.params.p_ec_max));
  }
  const double scale = std::sqrt(0.1 / std::max(worst, 1e-300));
  st.q_direct *= scale;
  st.q_relay *= scale;
  for (int s : topo.strong_set) st.p(s) = 0.5 * dbm_to_watt(sc.params.p_dev_max);
  if (scheme != Scheme::CoNoma || nu >= 1.0) st.p.setZero();
  for (int k : topo.cc_set) st.f(k) = 0.5 * sc.params.f_cc_max / std::max(1, int(topo.cc_set.size()));
  for (int e = 0; e < sc.params.num_ec; ++e)
    for (int k : topo.ec_sets[e]) st.f(k) = 0.5 * sc.params.f_ec_max / 2.0;

  const SinrBundle sinr = sinr_all(st, sc, decode);
  const RateBounds rb = rates(sinr, nu, sc.params.bandwidth);
  for (int k = 0; k < K; ++k) {
    st.gamma_s(k) = sinr.strong(k);
    st.gamma_w_direct(k) = sinr.weak_direct(k);
    st.gamma_w_relay(k) = sinr.weak_relay(k);
    st.gamma_w_hop2(k) = sinr.weak_hop2(k);
  }
  for (int s : topo.strong_set) st.r(s) = 0.5 * rb.strong(s);
  for (int w : topo.weak_set) {
    st.r_direct(w) = rb.weak_direct(w);
    st.r_relay_hop1(w) = rb.weak_relay(w);
    st.r_relay_hop2(w) = rb.weak_hop2(w);
    st.r_aux(w) = std::min(rb.weak_relay(w), rb.weak_hop2(w));
    st.z_direct(w) = 0.5;
    st.z_relay(w) = 0.5;
    st.r(w) = 0.25 * (st.z_direct(w) * st.r_direct(w) + st.z_relay(w) * st.r_aux(w));
  }
  st.r = st.r.cwiseMax(1.0);  // keep above the 1 bit/s rate floor
  st.z_bs.setZero();
  for (int b = 0; b < sc.params.num_bs; ++b)
    for (int k : topo.cc_set) st.z_bs(b, k) = 1.0;
  update_aux(st, sc, decode, scheme);
  update_link_weights(st, topo, sc.params.l1_delta, st.beta_direct, st.beta_relay);
  st.beta_bs = update_bs_weights(st, sc, sc.params.l1_delta);
  return st;
}

std::vector<char> all_decode(const Scenario& sc, bool value) {
  return std::vector<char>(sc.num_devices(), value ? 1 : 0);
}

int count_blocks(const ConeProgram& p, Cone c) {
  int n = 0;
  for (const auto& b : p.blocks)
    if (b.cone == c) ++n;
  return n;
}

}  // namespace

TEST_CASE("hand-enumerated program size for K=2, B=1, E=0, single antenna") {
  NetworkParams par;
  par.num_bs = 1;
  par.num_ec = 0;
  par.num_devices = 2;
  par.antennas_bs = 1;
  Scenario sc = make_scenario(par, 3);
  const auto decode = all_decode(sc, true);
  ResourceState prev = seed_state(sc, 0.8, Scheme::CoNoma, decode);
  AssemblyInput in;
  in.nu = 0.8;
  in.decode_flags = decode;
  AssembledProblem ap = assemble(sc, prev, in);

  // Variables. Strong device: 2 beam reals, r, f, t, gamma_s, p, sqrt(p),
  // z_bs -> 9. Weak device: 2+2 beam reals, r, f, t, (rd, gwd), (rr1, gwr,
  // rr2, gw2), (raux, zd, zr), z_bs -> 17. Constraint-local: 2x2 delay
  // epigraphs, 2 surrogate squares, 1x2 fronthaul squares, 3 interference
  // epigraphs (strong one collapses: empty interference set) -> 11.
  CHECK(ap.prog.num_vars == 37);

  // Nonnegative rows. Strong: rate floor, f, p, sp, gs bounds, psmax, 2 z_bs
  // bounds -> 8. Weak: floor, f, 7 scalar bounds, 3 selection rows, 2 z_bs
  // bounds -> 14. Shared: compute cap 1, delay 2, r_aux <= min(rr1, rr2) 2,
  // surrogate bounds 2 + row 1, fronthaul 1, interference bounds 3,
  // g-rows 4 -> 16.
  CHECK(count_blocks(ap.prog, Cone::NonNeg) == 38);
  // RSOCs: sqrt(p) 1, delay 4, BS power 1, link-selection norms 2, z_bs
  // norms 2, surrogate squares 2, fronthaul squares 2, interference 2.
  CHECK(count_blocks(ap.prog, Cone::RotatedSoc) == 16);
  // Exp cones: 2 objective epigraphs + 4 rate rows.
  CHECK(count_blocks(ap.prog, Cone::Exp) == 6);
  CHECK(count_blocks(ap.prog, Cone::Zero) == 0);
  CHECK(count_blocks(ap.prog, Cone::Power) == 0);
}

TEST_CASE("inject/extract round trip preserves the mapped state") {
  Scenario sc = make_scenario(NetworkParams{}, 11);
  const auto decode = all_decode(sc, true);
  ResourceState st = seed_state(sc, 0.7, Scheme::CoNoma, decode);
  AssemblyInput in;
  in.nu = 0.7;
  in.decode_flags = decode;
  AssembledProblem ap = assemble(sc, st, in);
  const VarMap& M = ap.map;

  Solution sol;
  sol.x = Eigen::VectorXd::Zero(ap.prog.num_vars);
  auto put = [&](int idx, double v) {
    if (idx >= 0) sol.x(idx) = v;
  };
  for (int k : M.devices) {
    const int len = M.block_len[k];
    for (int c = 0; c < len; ++c) {
      const cplx qd = st.q_direct(M.block_offset[k] + c, k);
      const cplx qr = st.q_relay(M.block_offset[k] + c, k);
      if (!M.qd[k].empty()) {
        put(M.qd[k][c], qd.real());
        put(M.qd[k][len + c], qd.imag());
      }
      if (!M.qr[k].empty()) {
        put(M.qr[k][c], qr.real());
        put(M.qr[k][len + c], qr.imag());
      }
    }
    put(M.p[k], st.p(k));
    put(M.sp[k], std::sqrt(st.p(k)));
    put(M.r[k], st.r(k) / 1e6);
    put(M.rd[k], st.r_direct(k) / 1e6);
    put(M.rr1[k], st.r_relay_hop1(k) / 1e6);
    put(M.rr2[k], st.r_relay_hop2(k) / 1e6);
    put(M.raux[k], st.r_aux(k) / 1e6);
    put(M.f[k], st.f(k) / 1e9);
    put(M.zd[k], st.z_direct(k));
    put(M.zr[k], st.z_relay(k));
    put(M.gs[k], st.gamma_s(k));
    put(M.gwd[k], st.gamma_w_direct(k));
    put(M.gwr[k], st.gamma_w_relay(k));
    put(M.gw2[k], st.gamma_w_hop2(k));
    for (int b = 0; b < M.zbs.rows(); ++b) put(M.zbs(b, k), st.z_bs(b, k));
  }
  ResourceState back = extract(sol, ap, st, sc, in);
  CHECK((back.q_direct - st.q_direct).norm() == doctest::Approx(0.0).epsilon(1e-9));
  CHECK((back.q_relay - st.q_relay).norm() == doctest::Approx(0.0).epsilon(1e-9));
  for (int k = 0; k < sc.num_devices(); ++k) {
    CHECK(back.r(k) == doctest::Approx(st.r(k)).epsilon(1e-9));
    CHECK(back.f(k) == doctest::Approx(st.f(k)).epsilon(1e-9));
    CHECK(back.p(k) == doctest::Approx(st.p(k)).epsilon(1e-9));
    CHECK(back.z_direct(k) == doctest::Approx(st.z_direct(k)).epsilon(1e-9));
    CHECK(back.gamma_w_relay(k) == doctest::Approx(st.gamma_w_relay(k)).epsilon(1e-9));
  }
  CHECK((back.z_bs - st.z_bs).norm() == doctest::Approx(0.0).epsilon(1e-9));

  Solution bad = sol;
  bad.x(0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(extract(bad, ap, st, sc, in));
}

TEST_CASE("solved subproblem is feasible for the physical-layer evaluators") {
  NetworkParams par;
  par.num_devices = 4;  // one core pair, one edge pair per EC
  par.num_ec = 1;
  par.num_bs = 2;
  Scenario sc = make_scenario(par, 5);
  const auto decode = all_decode(sc, true);
  const double nu = 0.7;
  ResourceState prev = seed_state(sc, nu, Scheme::CoNoma, decode);
  AssemblyInput in;
  in.nu = nu;
  in.decode_flags = decode;
  in.lambda = worst_case_fronthaul_delay(sc, full_bs_links(sc));
  AssembledProblem ap = assemble(sc, prev, in);

  SolverSettings st;
  st.eps = 1e-5;
  st.relax_alpha = 1.9;
  Solution sol = solve_cone_program(ap.prog, st);
  REQUIRE(sol.status == SolveStatus::Optimal);
  ResourceState out = extract(sol, ap, prev, sc, in);

  const double tol = 1e-4;
  const auto& topo = sc.topology;

  // Power budgets.
  const Eigen::VectorXd pcc = power_cc(out, sc);
  for (int b = 0; b < par.num_bs; ++b)
    CHECK(pcc(b) <= dbm_to_watt(par.p_bs_max) * (1.0 + tol));
  const Eigen::VectorXd pec = power_ec(out, sc);
  for (int e = 0; e < par.num_ec; ++e)
    CHECK(pec(e) - par.op_power <= dbm_to_watt(par.p_ec_max) * (1.0 + tol) + tol);
  for (int s : topo.strong_set) CHECK(out.p(s) <= dbm_to_watt(par.p_dev_max) * (1.0 + tol));

  // Computation capacity.
  double fcc = 0.0;
  for (int k : topo.cc_set) fcc += out.f(k);
  CHECK(fcc <= par.f_cc_max * (1.0 + tol));
  for (int e = 0; e < par.num_ec; ++e) {
    double fec = 0.0;
    for (int k : topo.ec_sets[e]) fec += out.f(k);
    CHECK(fec <= par.f_ec_max * (1.0 + tol));
  }

  // Delay with the worst-case fronthaul bound used in the assembly.
  for (int k = 0; k < sc.num_devices(); ++k) {
    const double d = par.task_cycles / out.f(k) + par.data_bits / out.r(k) + in.lambda(k);
    CHECK(d <= par.delay_budget * (1.0 + tol));
  }

  // FP rows evaluated by the independent g-function implementation.
  const GResiduals g = g_functions(out, sc, decode, Scheme::CoNoma);
  for (int w : topo.weak_set) {
    CHECK(g.weak_relay(w) <= tol * (1.0 + std::abs(out.gamma_w_relay(w))));
    CHECK(g.weak_direct(w) <= tol * (1.0 + std::abs(out.gamma_w_direct(w))));
    CHECK(g.weak_hop2(w) <= tol * (1.0 + std::abs(out.gamma_w_hop2(w))));
  }
  for (int s : topo.strong_set) CHECK(g.strong(s) <= tol * (1.0 + std::abs(out.gamma_s(s))));

  // g <= 0 certifies gamma below the true SINR, so the claimed rates are
  // achievable at the extracted beams.
  const SinrBundle sinr = sinr_all(out, sc, decode);
  for (int s : topo.strong_set)
    CHECK(out.gamma_s(s) <= sinr.strong(s) * (1.0 + tol) + tol);
  for (int w : topo.weak_set) {
    CHECK(out.gamma_w_direct(w) <= sinr.weak_direct(w) * (1.0 + tol) + tol);
    CHECK(out.gamma_w_relay(w) <= sinr.weak_relay(w) * (1.0 + tol) + tol);
    CHECK(out.gamma_w_hop2(w) <= sinr.weak_hop2(w) * (1.0 + tol) + tol);
  }
  const RateBounds rb = rates(sinr, nu, par.bandwidth);
  for (int s : topo.strong_set) CHECK(out.r(s) <= rb.strong(s) * (1.0 + tol) + tol);
  for (int w : topo.weak_set) {
    CHECK(out.r_direct(w) <= rb.weak_direct(w) * (1.0 + tol) + tol);
    CHECK(out.r_relay_hop1(w) <= rb.weak_relay(w) * (1.0 + tol) + tol);
    CHECK(out.r_relay_hop2(w) <= rb.weak_hop2(w) * (1.0 + tol) + tol);
  }

  // SCA surrogates from the sparsity module.
  for (int w : topo.weak_set) {
    const double res = lemma1_surrogate(
        out.z_direct(w), out.r_direct(w) / 1e6, out.z_relay(w), out.r_aux(w) / 1e6, out.r(w) / 1e6,
        prev.z_direct(w), prev.r_direct(w) / 1e6, prev.z_relay(w), prev.r_aux(w) / 1e6);
    CHECK(res <= tol * (1.0 + out.r(w) / 1e6));
    CHECK(out.z_direct(w) + out.z_relay(w) <= 1.0 + tol);
  }
  // The solver's row residuals act multiplicatively on the squared-term
  // epigraphs (the x1 = 1/2 cone row scales the whole square), so the
  // surrogate check is relative to the magnitude of the squared terms.
  for (int b = 0; b < par.num_bs; ++b) {
    double amp = 1.0;
    for (int k : topo.cc_set) {
      const double sum = out.z_bs(b, k) + out.r(k) / 1e6;
      amp += sum * sum;
    }
    const double res = fronthaul_sca_residual(
        out.z_bs.row(b).transpose() / 1.0, out.r / 1e6, prev.z_bs.row(b).transpose() / 1.0,
        prev.r / 1e6, topo.cc_set, par.fronthaul_cap / 1e6);
    CHECK(res <= 10.0 * tol * amp);
    double load = 0.0;  // the surrogate upper-bounds the soft fronthaul load
    for (int k : topo.cc_set) load += out.z_bs(b, k) * out.r(k) / 1e6;
    CHECK(load <= par.fronthaul_cap / 1e6 * (1.0 + tol) + tol * amp);
  }

  // Reported objective equals the sum of log rates in Mbit/s.
  double obj = 0.0;
  for (int k = 0; k < sc.num_devices(); ++k) obj += std::log(out.r(k) / 1e6);
  CHECK(sol.reported_objective == doctest::Approx(obj).epsilon(1e-3));

  // The conservative previous iterate stays feasible, so the maximizer cannot
  // do worse than it.
  double prev_obj = 0.0;
  for (int k = 0; k < sc.num_devices(); ++k) prev_obj += std::log(prev.r(k) / 1e6);
  CHECK(sol.reported_objective >= prev_obj - 1e-6);
}

TEST_CASE("distributed assembly matches the centralized one when E=0") {
  NetworkParams par;
  par.num_ec = 0;
  par.num_devices = 4;
  Scenario sc = make_scenario(par, 9);
  const auto decode = all_decode(sc, true);
  ResourceState prev = seed_state(sc, 0.6, Scheme::CoNoma, decode);
  AssemblyInput in;
  in.nu = 0.6;
  in.decode_flags = decode;
  AssembledProblem crm = assemble(sc, prev, in);
  in.platform = -1;
  in.frozen = compute_frozen(prev, sc, -1);
  AssembledProblem drm = assemble(sc, prev, in);
  CHECK(cone_program_to_string(crm.prog) == cone_program_to_string(drm.prog));
  CHECK(compute_frozen(prev, sc, -1).slot1.norm() == 0.0);
}

TEST_CASE("distributed platform programs only touch their own devices") {
  Scenario sc = make_scenario(NetworkParams{}, 13);
  const auto decode = all_decode(sc, true);
  ResourceState prev = seed_state(sc, 0.7, Scheme::CoNoma, decode);
  AssemblyInput in;
  in.nu = 0.7;
  in.decode_flags = decode;
  in.platform = 0;  // EC 0
  in.frozen = compute_frozen(prev, sc, 0);
  AssembledProblem ap = assemble(sc, prev, in);
  for (int k : ap.map.devices) CHECK(sc.topology.platform_of[k] == 0);
  CHECK(ap.map.devices.size() == 2);
  // No fronthaul/clustering machinery in an EC program.
  CHECK(ap.map.zbs.maxCoeff() == -1);

  Solution sol = solve_cone_program(ap.prog, SolverSettings{});
  REQUIRE(sol.status == SolveStatus::Optimal);
  ResourceState out = extract(sol, ap, prev, sc, in);
  for (int k = 0; k < sc.num_devices(); ++k) {
    if (sc.topology.platform_of[k] == 0) continue;
    CHECK((out.q_direct.col(k) - prev.q_direct.col(k)).norm() == 0.0);
    CHECK(out.r(k) == prev.r(k));
    CHECK(out.f(k) == prev.f(k));
  }
}

TEST_CASE("frozen interference matches the phy interference split") {
  Scenario sc = make_scenario(NetworkParams{}, 21);
  const auto decode = all_decode(sc, true);
  ResourceState st = seed_state(sc, 0.7, Scheme::CoNoma, decode);
  const auto& topo = sc.topology;
  // own-platform interference + frozen cross-platform part + noise must equal
  // the full-network interference for any observer and full sets.
  for (int plat : {-1, 0, 1}) {
    const FrozenInterference fr = compute_frozen(st, sc, plat);
    for (int i = 0; i < sc.num_devices(); ++i) {
      std::vector<int> Xown, Yown;
      for (int s : topo.strong_set)
        if (topo.platform_of[s] == plat) Xown.push_back(s);
      for (int w : topo.weak_set)
        if (topo.platform_of[w] == plat) Yown.push_back(w);
      const double full =
          interference(i, topo.strong_set, topo.weak_set, st, sc.channels, sc.sigma2);
      const double own = interference(i, Xown, Yown, st, sc.channels, sc.sigma2);
      CHECK(own + fr.slot1(i) == doctest::Approx(full).epsilon(1e-10));
    }
  }
}

TEST_CASE("delay-infeasible assembly is rejected unless slack is enabled") {
  NetworkParams par;
  par.num_ec = 0;
  par.num_devices = 2;
  par.delay_budget = 1e-9;
  par.data_bits = 1e9;  // fronthaul load alone exceeds the budget
  Scenario sc = make_scenario(par, 2);
  const auto decode = all_decode(sc, true);
  ResourceState prev = seed_state(sc, 0.7, Scheme::CoNoma, decode);
  AssemblyInput in;
  in.nu = 0.7;
  in.decode_flags = decode;
  in.lambda = worst_case_fronthaul_delay(sc, full_bs_links(sc));
  CHECK_THROWS(assemble(sc, prev, in));
  in.delay_slack = true;
  AssembledProblem ap = assemble(sc, prev, in);
  CHECK(ap.map.slack[sc.topology.cc_set.front()] >= 0);
}

TEST_CASE("baseline schemes assemble without selection machinery") {
  Scenario sc = make_scenario(NetworkParams{}, 17);
  ResourceState prev_s = seed_state(sc, 1.0, Scheme::Sdma, all_decode(sc, false));
  AssemblyInput in;
  in.scheme = Scheme::Sdma;
  in.nu = 1.0;
  in.decode_flags = all_decode(sc, false);
  AssembledProblem sdma = assemble(sc, prev_s, in);
  for (int w : sc.topology.weak_set) {
    CHECK(sdma.map.zd[w] == -1);
    CHECK(sdma.map.rr1[w] == -1);
    CHECK(sdma.map.qr[w].empty());
  }
  ResourceState prev_n = seed_state(sc, 1.0, Scheme::Noma, all_decode(sc, true));
  in.scheme = Scheme::Noma;
  in.decode_flags = all_decode(sc, true);
  AssembledProblem noma = assemble(sc, prev_n, in);
  for (int w : sc.topology.weak_set) {
    CHECK(noma.map.zd[w] == -1);
    CHECK(noma.map.qd[w].empty());   // single superposed beam lives in qr
    CHECK(noma.map.rr1[w] >= 0);     // decodability at the strong partner
    CHECK(noma.map.rr2[w] == -1);    // no second slot
  }
  for (int s : sc.topology.strong_set) CHECK(noma.map.p[s] == -1);
}
