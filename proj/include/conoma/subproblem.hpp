#pragma once

// Assembly of the per-iteration convex subproblem into canonical conic form,
// and extraction of the solver result back into a ResourceState.
//
// Internal units are chosen for conditioning: rates in Mbit/s, powers in W,
// computation in GHz. Interference epigraph variables are pre-scaled by |a|^2
// so that every g-constraint row carries O(1) coefficients.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "conoma/cone.hpp"
#include "conoma/fp.hpp"
#include "conoma/modes.hpp"
#include "conoma/phy.hpp"
#include "conoma/solver.hpp"
#include "conoma/sparsity.hpp"

namespace conoma {

inline constexpr int kAllPlatforms = -2;  // CRM; otherwise -1 = CC, e >= 0 = EC e
inline constexpr double kRateFloorMbit = 1e-6;  // 1 bit/s

struct HardSelection {
  std::vector<char> relay;   // per weak device: relay link selected
  Eigen::MatrixXi bs_links;  // B x K hard clustering (core devices)
};

// Cross-platform interference constants for the distributed protocol, indexed
// by observer device. slot1 is received beam power from other platforms,
// slot2 the D2D relay interference from other platforms' strong devices.
struct FrozenInterference {
  Eigen::VectorXd slot1, slot2;
};

inline FrozenInterference compute_frozen(const ResourceState& st, const Scenario& sc,
                                         int platform) {
  const auto& topo = sc.topology;
  const int K = topo.num_devices();
  FrozenInterference out;
  out.slot1 = Eigen::VectorXd::Zero(K);
  out.slot2 = Eigen::VectorXd::Zero(K);
  for (int i = 0; i < K; ++i) {
    const cvec& h = sc.channels.aggregate[i];
    for (int s : topo.strong_set)
      if (topo.platform_of[s] != platform)
        out.slot1(i) += std::norm(h.dot(st.q_direct.col(s)));
    for (int w : topo.weak_set)
      if (topo.platform_of[w] != platform)
        out.slot1(i) += std::norm(h.dot(cvec(st.q_direct.col(w) + st.q_relay.col(w))));
  }
  for (int w : topo.weak_set)
    for (int w2 : topo.weak_set)
      if (w2 != w && topo.platform_of[w2] != platform) {
        const int s2 = topo.pairing[w2];
        out.slot2(w) += std::norm(sc.channels.g_d2d(s2, w)) * st.p(s2);
      }
  return out;
}

struct AssemblyInput {
  Scheme scheme = Scheme::CoNoma;
  Phase phase = Phase::Relaxed;
  double nu = 1.0;
  int platform = kAllPlatforms;
  bool delay_slack = false;       // restoration mode
  double slack_penalty = 1e3;     // objective cost per second of delay violation
  Eigen::VectorXd lambda;         // worst-case fronthaul delay per device, s
  std::vector<char> decode_flags; // per strong device
  HardSelection selection;        // consulted when phase == FixedSelection
  FrozenInterference frozen;      // consulted when platform != kAllPlatforms
};

// Column indices into the assembled program; -1 marks "not a variable here"
// (fixed to zero or owned by another platform).
struct VarMap {
  std::vector<std::vector<int>> qd, qr;  // per device: 2*len reals (Re block, Im block)
  std::vector<int> block_offset, block_len;
  std::vector<int> p, sp, r, rd, rr1, rr2, raux, f, zd, zr, t, slack;
  std::vector<int> gs, gwd, gwr, gw2;
  Eigen::MatrixXi zbs;
  std::vector<int> devices;  // devices with variables in this program
  std::vector<char> owned;   // per device
};

struct AssembledProblem {
  ConeProgram prog;
  VarMap map;
};

namespace detail {

// Accumulates one nonnegative-orthant row built as s = b - a'x >= 0.
class RowBuilder {
 public:
  RowBuilder(ConeProgram& prog, double rhs) : prog_(prog), row_(prog.add_block(Cone::NonNeg, 1)) {
    prog_.set_b(row_, rhs);
  }
  RowBuilder& coef(int var, double v) {
    if (var >= 0) prog_.add_entry(row_, var, v);
    return *this;
  }
  int row() const { return row_; }

 private:
  ConeProgram& prog_;
  int row_;
};

}  // namespace detail

inline AssembledProblem assemble(const Scenario& sc, const ResourceState& prev,
                                 const AssemblyInput& in) {
  const auto& topo = sc.topology;
  const auto& ch = sc.channels;
  const auto& par = sc.params;
  const int K = topo.num_devices();
  const int B = par.num_bs;
  const double nu = in.nu;
  if (nu <= 0.0 || nu > 1.0) throw std::invalid_argument("assemble: nu must be in (0,1]");
  const bool conoma = in.scheme == Scheme::CoNoma;
  const bool relaxed = in.phase == Phase::Relaxed;
  const bool slot2_active = conoma && nu < 1.0;
  const double bw_mbit = par.bandwidth / 1e6;  // nu*W*log2(1+g) in Mbit/s
  const double sigma2 = sc.sigma2;

  AssembledProblem ap;
  ConeProgram& P = ap.prog;
  VarMap& M = ap.map;
  P.maximize = true;

  auto owned = [&](int k) {
    return in.platform == kAllPlatforms || topo.platform_of[k] == in.platform;
  };
  auto weak_uses_relay = [&](int w) {
    if (!conoma) return false;
    if (relaxed) return true;
    return static_cast<bool>(in.selection.relay.at(w));
  };
  auto weak_uses_direct = [&](int w) {
    if (in.scheme == Scheme::Noma) return false;  // single superposed beam in qr
    if (relaxed || !conoma) return true;
    return !static_cast<bool>(in.selection.relay.at(w));
  };
  auto weak_has_qr = [&](int w) {
    return in.scheme == Scheme::Noma || weak_uses_relay(w);
  };

  M.qd.assign(K, {});
  M.qr.assign(K, {});
  M.block_offset.assign(K, 0);
  M.block_len.assign(K, 0);
  auto init_idx = [&](std::vector<int>& v) { v.assign(K, -1); };
  init_idx(M.p);
  init_idx(M.sp);
  init_idx(M.r);
  init_idx(M.rd);
  init_idx(M.rr1);
  init_idx(M.rr2);
  init_idx(M.raux);
  init_idx(M.f);
  init_idx(M.zd);
  init_idx(M.zr);
  init_idx(M.t);
  init_idx(M.slack);
  init_idx(M.gs);
  init_idx(M.gwd);
  init_idx(M.gwr);
  init_idx(M.gw2);
  M.zbs = Eigen::MatrixXi::Constant(B, K, -1);
  M.owned.assign(K, 0);

  // --- variables -----------------------------------------------------------
  for (int k = 0; k < K; ++k) {
    const auto blk = platform_block(sc, k);
    M.block_offset[k] = blk.offset;
    M.block_len[k] = blk.length;
    if (!owned(k)) continue;
    M.owned[k] = 1;
    M.devices.push_back(k);
    const bool weak = !topo.is_strong[k];
    const std::string id = std::to_string(k);

    // In the fixed phase core-device beams exist only on clustered BSs.
    auto coord_active = [&](int c) {
      if (!topo.is_core(k) || relaxed) return true;
      const int b = c / par.antennas_bs;
      return in.selection.bs_links(b, k) != 0;
    };
    auto make_beam = [&](std::vector<int>& cols, const char* tag) {
      cols.assign(2 * blk.length, -1);
      for (int c = 0; c < blk.length; ++c) {
        if (!coord_active(c)) continue;
        cols[c] = P.add_var(tag + id + "." + std::to_string(c) + "re");
        cols[blk.length + c] = P.add_var(tag + id + "." + std::to_string(c) + "im");
      }
    };
    if (!weak || weak_uses_direct(k)) make_beam(M.qd[k], "qd");
    if (weak && weak_has_qr(k)) make_beam(M.qr[k], "qr");

    M.r[k] = P.add_var("r" + id);
    M.f[k] = P.add_var("f" + id);
    M.t[k] = P.add_var("t" + id);
    if (in.delay_slack) M.slack[k] = P.add_var("slack" + id);
    if (!weak) {
      M.gs[k] = P.add_var("gs" + id);
      if (slot2_active && weak_uses_relay(topo.pairing[k])) {
        M.p[k] = P.add_var("p" + id);
        M.sp[k] = P.add_var("sp" + id);
      }
    } else {
      if (weak_uses_direct(k) || in.scheme == Scheme::Noma) {
        M.rd[k] = P.add_var("rd" + id);
        M.gwd[k] = P.add_var("gwd" + id);
      }
      if (weak_has_qr(k) && conoma) {
        M.rr1[k] = P.add_var("rr1" + id);
        M.gwr[k] = P.add_var("gwr" + id);
        if (slot2_active) {
          M.rr2[k] = P.add_var("rr2" + id);
          M.gw2[k] = P.add_var("gw2" + id);
        }
      }
      if (in.scheme == Scheme::Noma) {
        M.rr1[k] = P.add_var("rr1" + id);
        M.gwr[k] = P.add_var("gwr" + id);
      }
      if (conoma && relaxed) {
        M.raux[k] = P.add_var("raux" + id);
        M.zd[k] = P.add_var("zd" + id);
        M.zr[k] = P.add_var("zr" + id);
      }
    }
    if (topo.is_core(k) && relaxed)
      for (int b = 0; b < B; ++b) M.zbs(b, k) = P.add_var("zbs" + std::to_string(b) + "_" + id);
  }

  const bool cc_owned = in.platform == kAllPlatforms || in.platform == -1;

  // --- objective -----------------------------------------------------------
  // maximize sum_k t_k - penalty * sum slack; stored as minimization of c'x.
  // (finalized after all variables exist)

  // --- per-device scalar bounds -------------------------------------------
  for (int k : M.devices) {
    detail::RowBuilder(P, -kRateFloorMbit).coef(M.r[k], -1.0);  // r >= floor
    detail::RowBuilder(P, 0.0).coef(M.f[k], -1.0);
    for (int idx : {M.rd[k], M.rr1[k], M.rr2[k], M.raux[k], M.p[k], M.sp[k], M.slack[k], M.gs[k],
                    M.gwd[k], M.gwr[k], M.gw2[k]})
      if (idx >= 0) detail::RowBuilder(P, 0.0).coef(idx, -1.0);
    if (M.p[k] >= 0) {
      detail::RowBuilder(P, dbm_to_watt(par.p_dev_max)).coef(M.p[k], 1.0);  // psmax
      // sp^2 <= p via rotated SOC (p, 1/2, sp)
      const int r0 = P.add_block(Cone::RotatedSoc, 3);
      P.add_entry(r0, M.p[k], -1.0);
      P.set_b(r0 + 1, 0.5);
      P.add_entry(r0 + 2, M.sp[k], -1.0);
    }
    if (M.zd[k] >= 0) {
      detail::RowBuilder(P, 0.0).coef(M.zd[k], -1.0);
      detail::RowBuilder(P, 0.0).coef(M.zr[k], -1.0);
      detail::RowBuilder(P, 1.0).coef(M.zd[k], 1.0).coef(M.zr[k], 1.0);  // dir/rel budget
    }
    if (topo.is_core(k) && relaxed)
      for (int b = 0; b < B; ++b) {
        detail::RowBuilder(P, 0.0).coef(M.zbs(b, k), -1.0);
        detail::RowBuilder(P, 1.0).coef(M.zbs(b, k), 1.0);
      }
  }

  // --- objective epigraph: t_k <= ln(r_k) ---------------------------------
  for (int k : M.devices) {
    const int e0 = P.add_block(Cone::Exp, 3);
    P.add_entry(e0, M.t[k], -1.0);
    P.set_b(e0 + 1, 1.0);
    P.add_entry(e0 + 2, M.r[k], -1.0);
  }

  // --- computation capacity and delay -------------------------------------
  if (cc_owned) {
    detail::RowBuilder row(P, par.f_cc_max / 1e9);
    for (int k : topo.cc_set)
      if (M.f[k] >= 0) row.coef(M.f[k], 1.0);
  }
  for (int e = 0; e < par.num_ec; ++e) {
    if (!(in.platform == kAllPlatforms || in.platform == e)) continue;
    detail::RowBuilder row(P, par.f_ec_max / 1e9);
    for (int k : topo.ec_sets[e])
      if (M.f[k] >= 0) row.coef(M.f[k], 1.0);
  }
  for (int k : M.devices) {
    const double lam = (in.lambda.size() == K && topo.is_core(k)) ? in.lambda(k) : 0.0;
    const double budget = par.delay_budget - lam;
    if (budget <= 0.0 && !in.delay_slack)
      throw std::runtime_error("assemble: delay budget exhausted by fronthaul delay (device " +
                               std::to_string(k) + ")");
    // c >= F/f and d >= D/r via rotated SOCs, then c + d <= budget (+ slack)
    const int ck = P.add_var("cdel" + std::to_string(k));
    const int dk = P.add_var("tdel" + std::to_string(k));
    {
      const int r0 = P.add_block(Cone::RotatedSoc, 3);
      P.add_entry(r0, ck, -1.0);
      P.add_entry(r0 + 1, M.f[k], -1.0);
      P.set_b(r0 + 2, std::sqrt(2.0 * par.task_cycles / 1e9));
    }
    {
      const int r0 = P.add_block(Cone::RotatedSoc, 3);
      P.add_entry(r0, dk, -1.0);
      P.add_entry(r0 + 1, M.r[k], -1.0);
      P.set_b(r0 + 2, std::sqrt(2.0 * par.data_bits / 1e6));
    }
    detail::RowBuilder(P, budget).coef(ck, 1.0).coef(dk, 1.0).coef(M.slack[k], -1.0);
  }

  // --- transmit power ------------------------------------------------------
  auto beam_power_block = [&](const std::vector<int>& members, int coord_lo, int coord_hi,
                              int budget_var, double budget_coef, double rhs) {
    // 2 * x0 * (1/2) >= sum of squared coords, x0 = rhs - budget_coef*budget_var
    std::vector<int> cols;
    for (int k : members)
      for (const auto* beam : {&M.qd[k], &M.qr[k]})
        for (int c = 0; c < static_cast<int>(beam->size()); ++c) {
          const int col = (*beam)[c];
          if (col < 0) continue;
          const int coord = c % M.block_len[k] + M.block_offset[k];
          if (coord >= coord_lo && coord < coord_hi) cols.push_back(col);
        }
    if (cols.empty()) {
      if (budget_var >= 0) detail::RowBuilder(P, rhs).coef(budget_var, budget_coef);
      return;
    }
    const int r0 = P.add_block(Cone::RotatedSoc, 2 + static_cast<int>(cols.size()));
    P.set_b(r0, rhs);
    if (budget_var >= 0) P.add_entry(r0, budget_var, budget_coef);
    P.set_b(r0 + 1, 0.5);
    for (int i = 0; i < static_cast<int>(cols.size()); ++i)
      P.add_entry(r0 + 2 + i, cols[i], -1.0);
  };

  if (cc_owned)
    for (int b = 0; b < B; ++b) {
      const auto blk = bs_block(sc, b);
      beam_power_block(topo.cc_set, blk.offset, blk.offset + blk.length, -1, 0.0,
                       dbm_to_watt(par.p_bs_max));
    }
  for (int e = 0; e < par.num_ec; ++e) {
    if (!(in.platform == kAllPlatforms || in.platform == e)) continue;
    // o_e (sum f)^mu via power cone: (te, 1, s) in P_{1/mu} => te >= s^mu
    const int te = P.add_var("tcpu" + std::to_string(e));
    const int se = P.add_var("scpu" + std::to_string(e));
    detail::RowBuilder(P, 0.0).coef(te, -1.0);
    {
      const int z0 = P.add_block(Cone::Zero, 1);  // se = sum f (GHz)
      P.add_entry(z0, se, 1.0);
      for (int k : topo.ec_sets[e])
        if (M.f[k] >= 0) P.add_entry(z0, M.f[k], -1.0);
    }
    {
      const int p0 = P.add_block(Cone::Power, 3, 1.0 / par.cpu_exp);
      P.add_entry(p0, te, -1.0);
      P.set_b(p0 + 1, 1.0);
      P.add_entry(p0 + 2, se, -1.0);
    }
    const double cpu_scale = par.cpu_coeff * std::pow(1e9, par.cpu_exp);
    const auto blk = AntennaBlock{B * par.antennas_bs + e * par.antennas_ec, par.antennas_ec};
    beam_power_block(topo.ec_sets[e], blk.offset, blk.offset + blk.length, te, cpu_scale,
                     dbm_to_watt(par.p_ec_max));
  }

  // --- weighted-l1 link selection (relaxed phase) --------------------------
  auto norm_cap = [&](const std::vector<int>& cols, int zvar, double beta) {
    // beta * ||q||^2 <= z as RSOC (z, 1/(2 beta), q)
    if (beta <= 0.0) throw std::invalid_argument("assemble: l1 weights must be positive");
    int nz = 0;
    for (int c : cols)
      if (c >= 0) ++nz;
    const int r0 = P.add_block(Cone::RotatedSoc, 2 + nz);
    P.add_entry(r0, zvar, -1.0);
    P.set_b(r0 + 1, 1.0 / (2.0 * beta));
    int i = 0;
    for (int c : cols)
      if (c >= 0) P.add_entry(r0 + 2 + (i++), c, -1.0);
  };
  if (relaxed && conoma)
    for (int w : topo.weak_set) {
      if (!M.owned[w]) continue;
      norm_cap(M.qd[w], M.zd[w], prev.beta_direct(w));
      norm_cap(M.qr[w], M.zr[w], prev.beta_relay(w));
    }
  if (relaxed && cc_owned)
    for (int k : topo.cc_set) {
      for (int b = 0; b < B; ++b) {
        const auto blk = bs_block(sc, b);
        std::vector<int> cols;
        for (const auto* beam : {&M.qd[k], &M.qr[k]})
          for (int c = 0; c < static_cast<int>(beam->size()); ++c) {
            const int col = (*beam)[c];
            const int coord = c % M.block_len[k] + M.block_offset[k];
            if (col >= 0 && coord >= blk.offset && coord < blk.offset + blk.length)
              cols.push_back(col);
          }
        norm_cap(cols, M.zbs(b, k), prev.beta_bs(b, k));
      }
    }

  // --- weak-device rate coupling ------------------------------------------
  const double mb = 1e-6;  // bit/s -> Mbit/s for operating-point values
  for (int w : topo.weak_set) {
    if (!M.owned[w]) continue;
    if (conoma && relaxed) {
      // r_aux <= min(rr1, rr2); rr2 absent when nu == 1 forces r_aux ~ relay off
      if (M.rr1[w] >= 0) detail::RowBuilder(P, 0.0).coef(M.raux[w], 1.0).coef(M.rr1[w], -1.0);
      if (M.rr2[w] >= 0)
        detail::RowBuilder(P, 0.0).coef(M.raux[w], 1.0).coef(M.rr2[w], -1.0);
      else
        detail::RowBuilder(P, 0.0).coef(M.raux[w], 1.0);  // r_aux <= 0
      // Lemma-1 SCA surrogate of r_w <= zd*rd + zr*raux.
      const double ztd = prev.z_direct(w), ztr = prev.z_relay(w);
      const double rtd = prev.r_direct(w) * mb, rta = prev.r_aux(w) * mb;
      const double sd = ztd + rtd, sr = ztr + rta;
      const int e1 = P.add_var("l1e" + std::to_string(w));
      const int e2 = P.add_var("l2e" + std::to_string(w));
      for (int idx : {e1, e2}) detail::RowBuilder(P, 0.0).coef(idx, -1.0);
      auto sq = [&](int ev, int za, int rb) {
        const int r0 = P.add_block(Cone::RotatedSoc, 3);
        P.add_entry(r0, ev, -1.0);
        P.set_b(r0 + 1, 0.5);
        P.add_entry(r0 + 2, za, -1.0);
        P.add_entry(r0 + 2, rb, 1.0);
      };
      sq(e1, M.zd[w], M.rd[w]);
      sq(e2, M.zr[w], M.raux[w]);
      detail::RowBuilder(P, -sd * sd - sr * sr)
          .coef(M.r[w], 4.0)
          .coef(e1, 1.0)
          .coef(e2, 1.0)
          .coef(M.zd[w], -2.0 * sd)
          .coef(M.rd[w], -2.0 * sd)
          .coef(M.zr[w], -2.0 * sr)
          .coef(M.raux[w], -2.0 * sr);
    } else if (conoma && !relaxed) {
      if (in.selection.relay[w]) {
        detail::RowBuilder(P, 0.0).coef(M.r[w], 1.0).coef(M.rr1[w], -1.0);
        if (M.rr2[w] >= 0)
          detail::RowBuilder(P, 0.0).coef(M.r[w], 1.0).coef(M.rr2[w], -1.0);
        else
          detail::RowBuilder(P, 0.0).coef(M.r[w], 1.0);
      } else {
        detail::RowBuilder(P, 0.0).coef(M.r[w], 1.0).coef(M.rd[w], -1.0);
      }
    } else if (in.scheme == Scheme::Noma) {
      detail::RowBuilder(P, 0.0).coef(M.r[w], 1.0).coef(M.rd[w], -1.0);
      detail::RowBuilder(P, 0.0).coef(M.r[w], 1.0).coef(M.rr1[w], -1.0);  // SIC decodability
    } else {  // Sdma
      detail::RowBuilder(P, 0.0).coef(M.r[w], 1.0).coef(M.rd[w], -1.0);
    }
  }

  // --- fronthaul -----------------------------------------------------------
  if (cc_owned) {
    const double cap_mbit = par.fronthaul_cap / 1e6;
    if (relaxed) {
      for (int b = 0; b < B; ++b) {
        double rhs = 4.0 * cap_mbit;
        detail::RowBuilder row(P, 0.0);
        for (int k : topo.cc_set) {
          const double dt = prev.z_bs(b, k) - prev.r(k) * mb;
          rhs -= dt * dt;
          const int ebk = P.add_var("fe" + std::to_string(b) + "_" + std::to_string(k));
          const int r0 = P.add_block(Cone::RotatedSoc, 3);
          P.add_entry(r0, ebk, -1.0);
          P.set_b(r0 + 1, 0.5);
          P.add_entry(r0 + 2, M.zbs(b, k), -1.0);
          P.add_entry(r0 + 2, M.r[k], -1.0);
          row.coef(ebk, 1.0).coef(M.zbs(b, k), -2.0 * dt).coef(M.r[k], 2.0 * dt);
        }
        P.set_b(row.row(), rhs);
      }
    } else {
      for (int b = 0; b < B; ++b) {
        detail::RowBuilder row(P, cap_mbit);
        for (int k : topo.cc_set)
          if (in.selection.bs_links(b, k)) row.coef(M.r[k], 1.0);
      }
    }
  }

  // --- achievable rates: exp-cone rows r <= c*W*log2(1+gamma) --------------
  auto rate_row = [&](int rvar, int gvar, double eff_bw_mbit) {
    const int e0 = P.add_block(Cone::Exp, 3);
    P.add_entry(e0, rvar, -std::log(2.0) / eff_bw_mbit);
    P.set_b(e0 + 1, 1.0);
    P.set_b(e0 + 2, 1.0);
    P.add_entry(e0 + 2, gvar, -1.0);
  };
  for (int s : topo.strong_set)
    if (M.owned[s]) rate_row(M.r[s], M.gs[s], nu * bw_mbit);
  for (int w : topo.weak_set) {
    if (!M.owned[w]) continue;
    if (M.rd[w] >= 0) rate_row(M.rd[w], M.gwd[w], nu * bw_mbit);
    if (M.rr1[w] >= 0) rate_row(M.rr1[w], M.gwr[w], nu * bw_mbit);
    if (M.rr2[w] >= 0) rate_row(M.rr2[w], M.gw2[w], (1.0 - nu) * bw_mbit);
  }

  // --- FP g-constraints ----------------------------------------------------
  // Each slot-1 family: gamma - 2 Re{a* h^H q} + |a|^2 (sigma^2 + frozen) +
  // e' <= 0 with e' >= |a|^2 * (own-platform interference). The epigraph rows
  // are pre-multiplied by |a| to keep entries O(1).
  const bool drm = in.platform != kAllPlatforms;
  auto frozen1 = [&](int i) { return drm && in.frozen.slot1.size() == K ? in.frozen.slot1(i) : 0.0; };
  auto frozen2 = [&](int i) { return drm && in.frozen.slot2.size() == K ? in.frozen.slot2(i) : 0.0; };

  // Interference epigraph over own-platform interferers; X strong (direct
  // beam), Y weak (direct + relay superposition).
  auto interference_epigraph = [&](int observer, const std::vector<int>& X,
                                   const std::vector<int>& Y, double amag) {
    struct Term {
      std::vector<std::pair<int, cplx>> cols;  // (var, h-coefficient)
    };
    std::vector<Term> terms;
    // Each real column carries the complex multiplier m with which it enters
    // h^H q (m = conj(h_c) for a Re coordinate, i*conj(h_c) for an Im one).
    auto add_term = [&](int j, bool with_qd, bool with_qr) {
      Term t;
      const int len = M.block_len[j];
      const cvec& h = ch.aggregate[observer];
      for (int c = 0; c < len; ++c) {
        const cplx m = std::conj(h(M.block_offset[j] + c));
        if (with_qd && M.qd[j].size() && M.qd[j][c] >= 0) {
          t.cols.emplace_back(M.qd[j][c], m);
          t.cols.emplace_back(M.qd[j][len + c], m * cplx(0.0, 1.0));
        }
        if (with_qr && M.qr[j].size() && M.qr[j][c] >= 0) {
          t.cols.emplace_back(M.qr[j][c], m);
          t.cols.emplace_back(M.qr[j][len + c], m * cplx(0.0, 1.0));
        }
      }
      if (!t.cols.empty()) terms.push_back(std::move(t));
    };
    for (int s2 : X)
      if (M.owned[s2]) add_term(s2, true, false);
    for (int w2 : Y)
      if (M.owned[w2]) add_term(w2, true, true);
    const int ev = P.add_var("ie" + std::to_string(P.num_vars));
    detail::RowBuilder(P, 0.0).coef(ev, -1.0);
    if (terms.empty()) return ev;  // only noise: epigraph rests at zero
    const int r0 = P.add_block(Cone::RotatedSoc, 2 + 2 * static_cast<int>(terms.size()));
    P.add_entry(r0, ev, -1.0);
    P.set_b(r0 + 1, 0.5);
    int row = r0 + 2;
    for (const auto& t : terms) {
      for (const auto& [col, m] : t.cols) {
        P.add_entry(row, col, -amag * std::real(m));
        P.add_entry(row + 1, col, -amag * std::imag(m));
      }
      row += 2;
    }
    return ev;
  };

  // g-row for a slot-1 family: target beam cols, observer channel, aux a.
  auto g_row = [&](int gvar, int observer, const std::vector<int>& target_cols, int target_dev,
                   bool target_qr, cplx a, const std::vector<int>& X, const std::vector<int>& Y) {
    const double amag2 = std::norm(a);
    const int ev = interference_epigraph(observer, X, Y, std::sqrt(amag2));
    detail::RowBuilder row(P, -amag2 * (sigma2 + frozen1(observer)));
    row.coef(gvar, 1.0).coef(ev, 1.0);
    const cvec& h = ch.aggregate[observer];
    const int len = M.block_len[target_dev];
    (void)target_qr;
    for (int c = 0; c < len; ++c) {
      if (target_cols.empty() || target_cols[c] < 0) continue;
      // 2 Re{conj(a) h^H q} = sum 2[Re(a h_c) qre + Im(a h_c) qim]
      const cplx ahc = a * h(M.block_offset[target_dev] + c);
      row.coef(target_cols[c], -2.0 * std::real(ahc));
      row.coef(target_cols[len + c], -2.0 * std::imag(ahc));
    }
  };

  for (int w : topo.weak_set) {
    if (!M.owned[w]) continue;
    const int s = topo.pairing[w];
    const auto Yw = detail::without(topo.weak_set, w);
    if (M.gwr[w] >= 0)
      g_row(M.gwr[w], s, M.qr[w], w, true, prev.a_w_relay(w), topo.strong_set, Yw);
    if (M.gwd[w] >= 0) {
      const auto& cols = in.scheme == Scheme::Noma ? M.qr[w] : M.qd[w];
      g_row(M.gwd[w], w, cols, w, in.scheme == Scheme::Noma, prev.a_w_direct(w), topo.strong_set,
            Yw);
    }
    if (M.gw2[w] >= 0) {
      // slot 2: gamma - 2 a |g| sp + a^2 (sigma^2 + frozen + own D2D) <= 0
      const double a2 = prev.a_w_hop2(w);
      detail::RowBuilder row(P, -a2 * a2 * (sigma2 + frozen2(w)));
      row.coef(M.gw2[w], 1.0);
      row.coef(M.sp[s], -2.0 * a2 * std::abs(ch.g_d2d(s, w)));
      for (int w2 : Yw) {
        const int s2 = topo.pairing[w2];
        if (M.p[s2] >= 0) row.coef(M.p[s2], a2 * a2 * std::norm(ch.g_d2d(s2, w)));
      }
    }
  }
  for (int s : topo.strong_set) {
    if (!M.owned[s]) continue;
    const int w = topo.pairing[s];
    const bool dec = !in.decode_flags.empty() && in.decode_flags[s];
    const auto X = detail::without(topo.strong_set, s);
    const auto Y = dec ? detail::without(topo.weak_set, w) : topo.weak_set;
    g_row(M.gs[s], s, M.qd[s], s, false, prev.a_s(s), X, Y);
  }

  // --- objective vector ----------------------------------------------------
  P.c = Eigen::VectorXd::Zero(P.num_vars);
  for (int k : M.devices) {
    P.c(M.t[k]) = -1.0;  // maximize sum t  ->  minimize -sum t
    if (M.slack[k] >= 0) P.c(M.slack[k]) = in.slack_penalty;
  }
  P.finalize();
  return ap;
}

// Writes the solved variables of this program back into a copy of prev;
// devices outside the program's platform keep their previous values.
inline ResourceState extract(const Solution& sol, const AssembledProblem& ap,
                             const ResourceState& prev, const Scenario& sc,
                             const AssemblyInput& in) {
  if (!sol.x.allFinite()) throw std::runtime_error("extract: non-finite solution vector");
  const VarMap& M = ap.map;
  ResourceState st = prev;
  st.nu = in.nu;
  auto val = [&](int idx) { return idx >= 0 ? sol.x(idx) : 0.0; };
  for (int k : M.devices) {
    const int len = M.block_len[k];
    st.q_direct.col(k).setZero();
    st.q_relay.col(k).setZero();
    for (int c = 0; c < len; ++c) {
      if (!M.qd[k].empty())
        st.q_direct(M.block_offset[k] + c, k) = cplx(val(M.qd[k][c]), val(M.qd[k][len + c]));
      if (!M.qr[k].empty())
        st.q_relay(M.block_offset[k] + c, k) = cplx(val(M.qr[k][c]), val(M.qr[k][len + c]));
    }
    st.p(k) = val(M.p[k]);
    // The floor is a program constraint; solver residuals may undershoot it.
    st.r(k) = std::max(val(M.r[k]), kRateFloorMbit) * 1e6;
    st.r_direct(k) = val(M.rd[k]) * 1e6;
    st.r_relay_hop1(k) = val(M.rr1[k]) * 1e6;
    st.r_relay_hop2(k) = val(M.rr2[k]) * 1e6;
    st.r_aux(k) = val(M.raux[k]) * 1e6;
    st.f(k) = val(M.f[k]) * 1e9;
    st.z_direct(k) = val(M.zd[k]);
    st.z_relay(k) = val(M.zr[k]);
    st.gamma_s(k) = val(M.gs[k]);
    st.gamma_w_direct(k) = val(M.gwd[k]);
    st.gamma_w_relay(k) = val(M.gwr[k]);
    st.gamma_w_hop2(k) = val(M.gw2[k]);
    for (int b = 0; b < M.zbs.rows(); ++b)
      if (M.zbs(b, k) >= 0) st.z_bs(b, k) = sol.x(M.zbs(b, k));
  }
  (void)sc;
  return st;
}

}  // namespace conoma
