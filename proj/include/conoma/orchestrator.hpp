#pragma once

// Outer algorithms: the centralized and distributed resource-management loops
// (two phases: relaxed link selection, then hard selection re-optimization),
// the time-split grid search, and the SDMA/NOMA baseline drivers.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "conoma/fp.hpp"
#include "conoma/metrics.hpp"
#include "conoma/phy.hpp"
#include "conoma/solver.hpp"
#include "conoma/sparsity.hpp"
#include "conoma/subproblem.hpp"
#include "conoma/transport.hpp"

namespace conoma {

enum class RunMode { Crm, Drm };

inline const char* to_string(RunMode m) { return m == RunMode::Crm ? "crm" : "drm"; }

struct RunOptions {
  Scheme scheme = Scheme::CoNoma;
  // Subproblem accuracy: SCA tolerates loose inner solves, and the final
  // state is polished onto the exact constraint set afterwards.
  SolverSettings solver = [] {
    SolverSettings st;
    st.eps = 1e-4;
    st.relax_alpha = 1.9;
    st.max_iters = 200000;
    return st;
  }();
  int max_relaxed_iters = 30;
  int max_fixed_iters = 30;
  double omega = 0.0;  // <= 0: use params.conv_threshold
  bool use_socket_transport = false;
  double transport_timeout_sec = 60.0;
};

struct IterationRecord {
  int iteration = 0;  // strictly increasing across both phases
  Phase phase = Phase::Relaxed;
  double objective = 0.0;    // sum log-rate over the runner's devices
  double improvement = 0.0;  // vs previous accepted iterate (0 on revert)
  bool used_slack = false;
  bool reverted = false;
  double wall_sec = 0.0;
};

struct RunTrace {
  std::vector<IterationRecord> iterations;
  int relaxed_iters = 0;
  int fixed_iters = 0;
  bool used_slack = false;
  double deadline_violation = 0.0;  // worst post-polish deadline overshoot (s)
  double wall_sec = 0.0;
  HardSelection selection;
  std::vector<char> decode_flags;
  double final_objective = 0.0;
};

struct RunResult {
  ResourceState state;
  RunTrace trace;
};

inline std::vector<char> initial_decode_flags(const Scenario& sc, Scheme scheme) {
  return std::vector<char>(sc.num_devices(), scheme == Scheme::Sdma ? 0 : 1);
}

// Random beamformers scaled so every transmitter meets its power budget with
// an equal split across its served beams; device power at the maximum; equal
// computation split; rates/SINRs evaluated at those beams.
inline ResourceState initial_state(const Scenario& sc, double nu, Scheme scheme,
                                   std::uint64_t seed) {
  const auto& topo = sc.topology;
  const auto& par = sc.params;
  const int K = topo.num_devices();
  ResourceState st = ResourceState::zeros(sc.dim(), par.num_bs, K);
  st.nu = nu;
  std::mt19937_64 rng(seed ^ 0xd1b54a32d192ed03ull);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto fill = [&](Eigen::MatrixXcd& q, int k, const AntennaBlock& blk) {
    for (int c = 0; c < blk.length; ++c)
      q(blk.offset + c, k) = cplx(gauss(rng), gauss(rng)) / std::sqrt(2.0);
  };
  for (int k = 0; k < K; ++k) {
    const auto blk = platform_block(sc, k);
    const bool weak = !topo.is_strong[k];
    if (!weak || scheme != Scheme::Noma) fill(st.q_direct, k, blk);
    if (weak && scheme != Scheme::Sdma) fill(st.q_relay, k, blk);
  }
  // Computation: equal split of the platform capacity.
  for (int k : topo.cc_set) st.f(k) = par.f_cc_max / std::max<std::size_t>(1, topo.cc_set.size());
  for (int e = 0; e < par.num_ec; ++e)
    for (int k : topo.ec_sets[e])
      st.f(k) = par.f_ec_max / std::max<std::size_t>(1, topo.ec_sets[e].size());
  // Per-(transmitter, device) segment normalization. A weak device's two beams
  // split the device share evenly.
  auto set_segment = [&](Eigen::MatrixXcd& q, int k, const AntennaBlock& blk, double power) {
    auto seg = q.col(k).segment(blk.offset, blk.length);
    const double n = seg.norm();
    if (n > 0.0) seg *= std::sqrt(power) / n;
  };
  for (int b = 0; b < par.num_bs; ++b) {
    const auto blk = bs_block(sc, b);
    const double share = dbm_to_watt(par.p_bs_max) / std::max<std::size_t>(1, topo.cc_set.size());
    for (int k : topo.cc_set) {
      const bool two = !topo.is_strong[k] && scheme == Scheme::CoNoma;
      set_segment(st.q_direct, k, blk, two ? share / 2.0 : share);
      if (!topo.is_strong[k] && scheme != Scheme::Sdma)
        set_segment(st.q_relay, k, blk, two ? share / 2.0 : share);
    }
  }
  for (int e = 0; e < par.num_ec; ++e) {
    double fsum = 0.0;
    for (int k : topo.ec_sets[e]) fsum += st.f(k);
    const double cpu = par.cpu_coeff * std::pow(fsum, par.cpu_exp);
    const double tx = std::max(dbm_to_watt(par.p_ec_max) - cpu, 0.0);
    if (tx <= 0.0) throw std::runtime_error("initial_state: no residual transmit power at the EC");
    const double share = tx / std::max<std::size_t>(1, topo.ec_sets[e].size());
    for (int k : topo.ec_sets[e]) {
      const auto blk = platform_block(sc, k);
      const bool two = !topo.is_strong[k] && scheme == Scheme::CoNoma;
      set_segment(st.q_direct, k, blk, two ? share / 2.0 : share);
      if (!topo.is_strong[k] && scheme != Scheme::Sdma)
        set_segment(st.q_relay, k, blk, two ? share / 2.0 : share);
    }
  }
  if (scheme == Scheme::CoNoma && nu < 1.0)
    for (int s : topo.strong_set) st.p(s) = dbm_to_watt(par.p_dev_max);

  const auto decode = initial_decode_flags(sc, scheme);
  const SinrBundle sinr = sinr_all(st, sc, decode);
  const RateBounds rb = rates(sinr, nu, par.bandwidth);
  for (int k = 0; k < K; ++k) {
    st.gamma_s(k) = sinr.strong(k);
    st.gamma_w_direct(k) = sinr.weak_direct(k);
    st.gamma_w_relay(k) = sinr.weak_relay(k);
    st.gamma_w_hop2(k) = sinr.weak_hop2(k);
  }
  if (scheme == Scheme::Noma) {
    // The weak device decodes its own message from the superposed relay beam.
    for (int w : topo.weak_set) {
      const auto Yw = conoma::detail::without(topo.weak_set, w);
      st.gamma_w_direct(w) = std::norm(sc.channels.aggregate[w].dot(st.q_relay.col(w))) /
                             interference(w, topo.strong_set, Yw, st, sc.channels, sc.sigma2);
    }
  }
  for (int b = 0; b < par.num_bs; ++b)
    for (int k : topo.cc_set) st.z_bs(b, k) = 1.0;
  for (int s : topo.strong_set) st.r(s) = rb.strong(s);
  for (int w : topo.weak_set) {
    st.r_direct(w) = rb.weak_direct(w);
    st.r_relay_hop1(w) = rb.weak_relay(w);
    st.r_relay_hop2(w) = rb.weak_hop2(w);
    st.r_aux(w) = std::min(rb.weak_relay(w), rb.weak_hop2(w));
    if (scheme == Scheme::Noma)
      st.r_direct(w) = nu * par.bandwidth * std::log2(1.0 + st.gamma_w_direct(w));
    if (scheme == Scheme::CoNoma) {
      // All-ones selection start; rate from the tight selection-combining bound.
      st.z_direct(w) = 1.0;
      st.z_relay(w) = 1.0;
      st.r(w) = selection_combining_bound(st.r_direct(w), st.r_relay_hop1(w), st.r_relay_hop2(w));
    } else if (scheme == Scheme::Noma) {
      st.r(w) = std::min(st.r_direct(w), rb.weak_relay(w));
    } else {
      st.r(w) = rb.weak_direct(w);
    }
  }
  // Keep the initial rates inside the soft fronthaul budget (all links on).
  double core_sum = 0.0;
  for (int k : topo.cc_set) core_sum += st.r(k);
  if (core_sum > 0.9 * par.fronthaul_cap)
    for (int k : topo.cc_set) st.r(k) *= 0.9 * par.fronthaul_cap / core_sum;
  st.r = st.r.cwiseMax(1.0);

  update_aux(st, sc, decode, scheme);
  update_link_weights(st, topo, par.l1_delta, st.beta_direct, st.beta_relay);
  st.beta_bs = update_bs_weights(st, sc, par.l1_delta);
  return st;
}

// Hard link selection and clustering from a relaxed iterate. A core device
// with every beam below the activity threshold keeps its strongest-channel BS.
inline HardSelection harden_selection(const ResourceState& st, const Scenario& sc, double nu,
                                      Scheme scheme) {
  const auto& topo = sc.topology;
  HardSelection sel;
  sel.relay.assign(sc.num_devices(), 0);
  if (scheme == Scheme::CoNoma && nu < 1.0)
    for (int w : topo.weak_set)
      if (st.z_relay(w) > st.z_direct(w)) sel.relay[w] = 1;
  sel.bs_links = active_bs_links(st, sc);
  for (int k : topo.cc_set) {
    bool served = false;
    for (int b = 0; b < sel.bs_links.rows(); ++b) served |= sel.bs_links(b, k) != 0;
    if (!served) {
      int best = 0;
      double best_norm = -1.0;
      for (int b = 0; b < sc.params.num_bs; ++b) {
        const double n = sc.channels.h_bs[b][k].norm();
        if (n > best_norm) {
          best_norm = n;
          best = b;
        }
      }
      sel.bs_links(best, k) = 1;
    }
  }
  return sel;
}

inline std::vector<char> fixed_decode_flags(const Scenario& sc, Scheme scheme,
                                            const HardSelection& sel) {
  std::vector<char> decode(sc.num_devices(), 0);
  for (int s : sc.topology.strong_set) {
    if (scheme == Scheme::Noma) decode[s] = 1;
    else if (scheme == Scheme::CoNoma) decode[s] = sel.relay[sc.topology.pairing[s]];
  }
  return decode;
}

// Achievable rate cap per device (bit/s) under the true SINRs, the scheme's
// decoding chain, and the hard relay selection. Under NOMA the weak device
// decodes its own message from the superposed relay beam.
inline Eigen::VectorXd rate_caps(const ResourceState& st, const Scenario& sc, Scheme scheme,
                                 const HardSelection& sel, const std::vector<char>& decode) {
  const auto& topo = sc.topology;
  const SinrBundle sinr = sinr_all(st, sc, decode);
  const RateBounds rb = rates(sinr, st.nu, sc.params.bandwidth);
  Eigen::VectorXd cap = Eigen::VectorXd::Zero(sc.num_devices());
  for (int s : topo.strong_set) cap(s) = rb.strong(s);
  for (int w : topo.weak_set) {
    if (scheme == Scheme::Noma) {
      const int s = topo.pairing[w];
      const auto Yw = detail::without(topo.weak_set, w);
      const double own = std::norm(sc.channels.aggregate[w].dot(st.q_relay.col(w))) /
                         interference(w, topo.strong_set, Yw, st, sc.channels, sc.sigma2);
      cap(w) = std::min(st.nu * sc.params.bandwidth * std::log2(1.0 + own), rb.weak_relay(w));
    } else if (scheme == Scheme::CoNoma && sel.relay[w]) {
      cap(w) = std::min(rb.weak_relay(w), rb.weak_hop2(w));
    } else {
      cap(w) = rb.weak_direct(w);
    }
  }
  return cap;
}

// Exact feasibility restoration of a hard-selected state. The solver leaves
// residuals around its tolerance on every budget; this projects the state onto
// the true constraint set: scale computation and beam powers into their
// budgets, cap rates by true achievability and the fronthaul, and lift rates
// onto the delay floor. Adjustments are O(solver tolerance).
//
// A run that needed the penalized delay slack can end with a device whose
// deadline is unreachable at any rate; with `allow_deadline_slack` such a
// device keeps its full achievable rate and the worst overshoot (seconds) is
// reported through `deadline_violation` instead of throwing.
inline void polish_state(ResourceState& st, const Scenario& sc, Scheme scheme,
                         const HardSelection& sel, const std::vector<char>& decode,
                         bool allow_deadline_slack = false,
                         double* deadline_violation = nullptr) {
  const auto& topo = sc.topology;
  const auto& par = sc.params;
  constexpr double kShrink = 1.0 - 1e-12;

  auto scale_f = [&](const std::vector<int>& set, double budget) {
    double sum = 0.0;
    for (int k : set) sum += st.f(k);
    if (sum > budget)
      for (int k : set) st.f(k) *= budget / sum * kShrink;
  };
  auto scale_beams = [&](const std::vector<int>& set, const AntennaBlock& blk, double budget) {
    double sum = 0.0;
    for (int k : set)
      sum += st.q_direct.col(k).segment(blk.offset, blk.length).squaredNorm() +
             st.q_relay.col(k).segment(blk.offset, blk.length).squaredNorm();
    if (sum <= budget) return;
    const double fac = std::sqrt(budget / sum) * kShrink;
    for (int k : set) {
      st.q_direct.col(k).segment(blk.offset, blk.length) *= fac;
      st.q_relay.col(k).segment(blk.offset, blk.length) *= fac;
    }
  };

  // The deadline is usually active at the optimum, so residuals can flip it
  // either way; fix it with both knobs (raise f, lift r) and re-run the power
  // scalings until a pass changes no computation share.
  const Eigen::VectorXd lambda = fronthaul_delay(sc, sel.bs_links);
  Eigen::VectorXd cap, rmin(sc.num_devices());
  std::vector<char> slacked(sc.num_devices(), 0);
  bool settled = false;
  for (int pass = 0; pass < 50 && !settled; ++pass) {
    settled = true;
    scale_f(topo.cc_set, par.f_cc_max);
    for (int e = 0; e < par.num_ec; ++e) scale_f(topo.ec_sets[e], par.f_ec_max);
    for (int b = 0; b < par.num_bs; ++b)
      scale_beams(topo.cc_set, bs_block(sc, b), dbm_to_watt(par.p_bs_max));
    for (int e = 0; e < par.num_ec; ++e) {
      double fsum = 0.0;
      for (int k : topo.ec_sets[e]) fsum += st.f(k);
      const double tx = dbm_to_watt(par.p_ec_max) - par.cpu_coeff * std::pow(fsum, par.cpu_exp);
      if (tx <= 0.0) throw std::runtime_error("polish_state: no residual transmit power at the EC");
      scale_beams(topo.ec_sets[e], platform_block(sc, topo.ec_sets[e].front()), tx);
    }
    st.p = st.p.cwiseMin(dbm_to_watt(par.p_dev_max));

    cap = rate_caps(st, sc, scheme, sel, decode);
    st.r = st.r.cwiseMin(cap * kShrink).cwiseMax(1.0);
    for (int k = 0; k < sc.num_devices(); ++k) {
      const double rem = par.delay_budget - par.task_cycles / st.f(k) - lambda(k);
      rmin(k) = rem > 0.0 ? par.data_bits / rem / kShrink
                          : std::numeric_limits<double>::infinity();
      if (rmin(k) > cap(k)) {
        // Even the full achievable rate misses the deadline: speed up the CPU.
        const double room = par.delay_budget - lambda(k) - par.data_bits / (cap(k) * kShrink);
        // Restoration path: an unreachable deadline (or an f/power scaling
        // ping-pong that refuses to settle) serves the device at its full
        // achievable rate and reports the overshoot instead of failing.
        if (allow_deadline_slack && (room <= 0.0 || pass >= 40)) {
          slacked[k] = 1;
          st.r(k) = std::max(cap(k) * kShrink, 1.0);  // program-level rate floor
          rmin(k) = 0.0;
          continue;
        }
        if (room <= 0.0) throw std::runtime_error("polish_state: deadline unreachable");
        st.f(k) = par.task_cycles / room * (1.0 + 1e-9);
        settled = false;  // power budgets depend on f; redo the scalings
        continue;
      }
      st.r(k) = std::max(st.r(k), rmin(k));
    }
  }
  if (!settled) throw std::runtime_error("polish_state: did not settle");
  for (int b = 0; b < par.num_bs; ++b) {
    double sum = 0.0, slack = 0.0;
    for (int k : topo.cc_set)
      if (sel.bs_links(b, k)) {
        sum += st.r(k);
        slack += st.r(k) - rmin(k);
      }
    const double budget = par.fronthaul_cap * kShrink;
    if (sum <= budget) continue;
    const double need = sum - budget;
    if (need > slack) {
      // Even the delay floors overflow the cap: the fronthaul is a hard
      // physical limit, so scale the rates into it and report the deadline
      // overshoot on the devices pushed below their floor.
      if (!allow_deadline_slack)
        throw std::runtime_error("polish_state: fronthaul cap unreachable");
      for (int k : topo.cc_set)
        if (sel.bs_links(b, k)) {
          st.r(k) = std::max(st.r(k) * budget / sum, 1.0);
          if (st.r(k) < rmin(k)) slacked[k] = 1;
        }
      continue;
    }
    for (int k : topo.cc_set)
      if (sel.bs_links(b, k)) st.r(k) -= need * (st.r(k) - rmin(k)) / slack;
  }

  if (deadline_violation) {
    double worst = 0.0;
    for (int k = 0; k < sc.num_devices(); ++k)
      if (slacked[k]) {
        const double total = lambda(k) + par.task_cycles / st.f(k) + par.data_bits / st.r(k);
        worst = std::max(worst, total - par.delay_budget);
      }
    *deadline_violation = worst;
  }

  // Bookkeeping: binary selection variables for reporting.
  for (int w : topo.weak_set) {
    st.z_relay(w) = sel.relay[w] ? 1.0 : 0.0;
    st.z_direct(w) = 1.0 - st.z_relay(w);
  }
  st.z_bs = sel.bs_links.cast<double>();
}

namespace detail {

// FP auxiliary update from a platform's local knowledge: own-platform beams
// plus the exchanged cross-platform interference constants. With the full
// platform set this reduces to the global update.
inline void update_aux_local(ResourceState& st, const Scenario& sc,
                             const std::vector<char>& decode, Scheme scheme, int platform,
                             const FrozenInterference& fr) {
  if (platform == kAllPlatforms) {
    update_aux(st, sc, decode, scheme);
    return;
  }
  const auto& topo = sc.topology;
  const auto& ch = sc.channels;
  auto own = [&](int k) { return topo.platform_of[k] == platform; };
  auto restrict = [&](const std::vector<int>& set) {
    std::vector<int> out;
    for (int k : set)
      if (own(k)) out.push_back(k);
    return out;
  };
  const auto Xown = restrict(topo.strong_set);
  auto local_I = [&](int i, const std::vector<int>& X, const std::vector<int>& Y) {
    return interference(i, X, Y, st, ch, sc.sigma2) + fr.slot1(i);
  };
  for (int w : topo.weak_set) {
    if (!own(w)) continue;
    const int s = topo.pairing[w];
    const auto Yw = restrict(conoma::detail::without(topo.weak_set, w));
    st.a_w_relay(w) = ch.aggregate[s].dot(st.q_relay.col(w)) / local_I(s, Xown, Yw);
    st.a_w_direct(w) =
        ch.aggregate[w].dot(conoma::detail::weak_beam(st, scheme).col(w)) / local_I(w, Xown, Yw);
    double denom = sc.sigma2 + fr.slot2(w);
    for (int w2 : Yw) denom += std::norm(ch.g_d2d(topo.pairing[w2], w)) * st.p(topo.pairing[w2]);
    st.a_w_hop2(w) = std::sqrt(std::norm(ch.g_d2d(s, w)) * st.p(s)) / denom;
  }
  for (int s : topo.strong_set) {
    if (!own(s)) continue;
    const int w = topo.pairing[s];
    const auto X = restrict(conoma::detail::without(topo.strong_set, s));
    const auto Y =
        restrict(decode[s] ? conoma::detail::without(topo.weak_set, w) : topo.weak_set);
    st.a_s(s) = ch.aggregate[s].dot(st.q_direct.col(s)) / local_I(s, X, Y);
  }
}

inline double local_objective(const ResourceState& st, const Scenario& sc, int platform) {
  double acc = 0.0;
  for (int k = 0; k < sc.num_devices(); ++k) {
    if (platform != kAllPlatforms && sc.topology.platform_of[k] != platform) continue;
    if (st.r(k) <= 0.0) throw std::runtime_error("local_objective: nonpositive rate");
    acc += std::log(st.r(k) / 1e6);
  }
  return acc;
}

// One platform's view of the two-phase SCA loop. With platform ==
// kAllPlatforms and no transport this is the centralized algorithm.
class PlatformRunner {
 public:
  PlatformRunner(const Scenario& sc, double nu, const RunOptions& opts, int platform,
                 Transport* transport)
      : sc_(sc), nu_(nu), opts_(opts), platform_(platform), transport_(transport),
        omega_(opts.omega > 0.0 ? opts.omega : sc.params.conv_threshold) {}

  RunResult run(ResourceState state) {
    const auto t0 = std::chrono::steady_clock::now();
    RunTrace trace;
    decode_ = initial_decode_flags(sc_, opts_.scheme);
    if (transport_) exchange_state(state);  // round 0: establish cross-platform constants

    lambda_ = relaxed_lambda();
    run_phase(state, trace, Phase::Relaxed, opts_.max_relaxed_iters, true);
    trace.relaxed_iters = static_cast<int>(trace.iterations.size());

    sel_ = harden_selection(state, sc_, nu_, opts_.scheme);
    decode_ = fixed_decode_flags(sc_, opts_.scheme, sel_);
    lambda_ = fixed_lambda();
    run_phase(state, trace, Phase::FixedSelection, opts_.max_fixed_iters, false);
    trace.fixed_iters = static_cast<int>(trace.iterations.size()) - trace.relaxed_iters;

    trace.selection = sel_;
    trace.decode_flags = decode_;
    trace.final_objective = local_objective(state, sc_, platform_);
    trace.wall_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& it : trace.iterations) trace.used_slack |= it.used_slack;
    return {std::move(state), std::move(trace)};
  }

 private:
  bool cc_side() const { return platform_ == kAllPlatforms || platform_ == -1; }

  Eigen::VectorXd relaxed_lambda() const {
    if (cc_side()) return worst_case_fronthaul_delay(sc_, full_bs_links(sc_));
    return Eigen::VectorXd::Zero(sc_.num_devices());
  }

  Eigen::VectorXd fixed_lambda() const {
    if (cc_side()) return worst_case_fronthaul_delay(sc_, sel_.bs_links);
    return Eigen::VectorXd::Zero(sc_.num_devices());
  }

  bool has_devices() const {
    if (platform_ == kAllPlatforms) return sc_.num_devices() > 0;
    for (int k = 0; k < sc_.num_devices(); ++k)
      if (sc_.topology.platform_of[k] == platform_) return true;
    return false;
  }

  void run_phase(ResourceState& state, RunTrace& trace, Phase phase, int max_iters,
                 bool relaxed) {
    double obj = local_objective(state, sc_, platform_);
    for (int it = 0; it < max_iters; ++it) {
      const auto it0 = std::chrono::steady_clock::now();
      IterationRecord rec;
      rec.iteration = static_cast<int>(trace.iterations.size()) + 1;
      rec.phase = phase;

      if (has_devices()) {
        if (relaxed) {
          update_link_weights(state, sc_.topology, sc_.params.l1_delta, state.beta_direct,
                              state.beta_relay);
          state.beta_bs = update_bs_weights(state, sc_, sc_.params.l1_delta);
        }
        update_aux_local(state, sc_, decode_, opts_.scheme, platform_, frozen_);
        std::optional<ResourceState> candidate = solve_once(state, phase, rec);
        if (candidate) {
          const double cobj = local_objective(*candidate, sc_, platform_);
          rec.improvement = cobj - obj;
          // Safeguard: an approximate subproblem solve can dip below the
          // incumbent; keep the incumbent and treat the step as converged.
          const bool accept = rec.improvement >= 0.0 || (it == 0 && !relaxed);
          if (accept) {
            state = std::move(*candidate);
            obj = local_objective(state, sc_, platform_);
            if (!state.q_direct.allFinite() || !state.q_relay.allFinite() ||
                !state.p.allFinite() || !state.r.allFinite())
              std::fprintf(stderr, "DBG plat %d it %d qd %d qr %d p %d r %d slack %d imp %g\n",
                           platform_, rec.iteration, (int)state.q_direct.allFinite(),
                           (int)state.q_relay.allFinite(), (int)state.p.allFinite(),
                           (int)state.r.allFinite(), (int)rec.used_slack, rec.improvement);
          } else {
            rec.improvement = 0.0;
            rec.reverted = true;
          }
        } else {
          // Solver failure even with the restoration slack: keep the
          // incumbent and let the phase wind down.
          rec.improvement = 0.0;
          rec.reverted = true;
        }
      }
      rec.objective = obj;
      rec.wall_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - it0).count();
      trace.iterations.push_back(rec);

      bool stop = std::abs(rec.improvement) < omega_;
      if (transport_) {
        exchange_state(state);
        stop = exchange_stop(rec.improvement) && stop;
      }
      if (stop) return;
    }
  }

  std::optional<ResourceState> solve_once(const ResourceState& state, Phase phase,
                                          IterationRecord& rec) {
    AssemblyInput in;
    in.scheme = opts_.scheme;
    in.phase = phase;
    in.nu = nu_;
    in.platform = platform_;
    in.lambda = lambda_;
    in.decode_flags = decode_;
    in.selection = sel_;
    in.frozen = frozen_;

    AssembledProblem ap = assemble(sc_, state, in);
    Solution sol = solver_.solve(ap.prog, opts_.solver, warm_ ? &sol_ : nullptr);
    if (!usable(sol)) {
      in.delay_slack = true;  // restoration: penalized delay slack
      AssembledProblem rap = assemble(sc_, state, in);
      sol = solver_.solve(rap.prog, opts_.solver);
      if (!usable(sol)) {
        warm_ = false;
        return std::nullopt;
      }
      rec.used_slack = true;
      sol_ = sol;
      warm_ = false;  // slack program has a different pattern
      return extract(sol, rap, state, sc_, in);
    }
    sol_ = sol;
    warm_ = true;
    return extract(sol, ap, state, sc_, in);
  }

  bool usable(const Solution& sol) const {
    if (sol.status == SolveStatus::Optimal) return true;
    if (sol.status == SolveStatus::MaxIters)
      return sol.primal_res < 50.0 * opts_.solver.eps && sol.dual_res < 50.0 * opts_.solver.eps;
    return false;
  }

  void exchange_state(const ResourceState& state) {
    ExchangeMessage msg = build_exchange_message(state, sc_, platform_, round_);
    transport_->broadcast(platform_, msg);
    auto msgs = transport_->gather(platform_);
    for (const auto& m : msgs)
      if (m.sequence != msg.sequence)
        throw std::runtime_error("exchange out of sync at round " + std::to_string(round_));
    frozen_ = frozen_from_messages(msgs, sc_, platform_);
  }

  // Control sub-round: everyone publishes its local improvement; the stop
  // predicate (all improvements below omega) is evaluated identically on
  // every platform from the same gathered set.
  bool exchange_stop(double improvement) {
    ExchangeMessage msg;
    msg.platform = platform_;
    msg.sequence = 2u * static_cast<std::uint32_t>(round_) + 1u;
    msg.scalars = {improvement};
    transport_->broadcast(platform_, msg);
    auto msgs = transport_->gather(platform_);
    bool stop = true;
    for (const auto& m : msgs) {
      if (m.sequence != msg.sequence)
        throw std::runtime_error("control exchange out of sync at round " + std::to_string(round_));
      stop = stop && std::abs(m.scalars.at(0)) < omega_;
    }
    ++round_;
    return stop;
  }

  const Scenario& sc_;
  double nu_;
  RunOptions opts_;
  int platform_;
  Transport* transport_;
  double omega_;
  std::vector<char> decode_;
  Eigen::VectorXd lambda_;
  HardSelection sel_;
  FrozenInterference frozen_;
  ConicSolver solver_;
  Solution sol_;
  bool warm_ = false;
  int round_ = 0;
};

}  // namespace detail

inline RunResult crm_run(const Scenario& sc, double nu, const RunOptions& opts = {}) {
  detail::PlatformRunner runner(sc, nu, opts, kAllPlatforms, nullptr);
  RunResult res = runner.run(initial_state(sc, nu, opts.scheme, sc.params.seed));
  polish_state(res.state, sc, opts.scheme, res.trace.selection, res.trace.decode_flags,
               true, &res.trace.deadline_violation);
  res.trace.final_objective = log_rate(res.state);
  return res;
}

// Distributed run: one worker per platform, synchronized by the transport's
// per-round barrier. Platform results are merged into one global state.
inline RunResult drm_run(const Scenario& sc, double nu, const RunOptions& opts,
                         Transport& transport) {
  const int E = sc.params.num_ec;
  const ResourceState init = initial_state(sc, nu, opts.scheme, sc.params.seed);
  if (E == 0) {  // single platform: the distributed loop degenerates to CRM
    detail::PlatformRunner runner(sc, nu, opts, -1, &transport);
    RunResult res = runner.run(init);
    polish_state(res.state, sc, opts.scheme, res.trace.selection, res.trace.decode_flags,
                 true, &res.trace.deadline_violation);
    res.trace.final_objective = log_rate(res.state);
    return res;
  }
  std::vector<RunResult> results(E + 1);
  std::vector<std::string> errors(E + 1);
  std::vector<std::thread> workers;
  for (int p = -1; p < E; ++p) {
    workers.emplace_back([&, p] {
      try {
        detail::PlatformRunner runner(sc, nu, opts, p, &transport);
        results[p + 1] = runner.run(init);
      } catch (const std::exception& ex) {
        errors[p + 1] = ex.what();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (int i = 0; i <= E; ++i)
    if (!errors[i].empty())
      throw std::runtime_error("drm platform " + std::to_string(i - 1) + ": " + errors[i]);

  // Merge: each platform owns its devices' slots; CC owns the clustering.
  RunResult merged = std::move(results[0]);  // CC
  for (int k = 0; k < sc.num_devices(); ++k) {
    const int p = sc.topology.platform_of[k];
    if (p < 0) continue;
    const RunResult& r = results[p + 1];
    merged.state.q_direct.col(k) = r.state.q_direct.col(k);
    merged.state.q_relay.col(k) = r.state.q_relay.col(k);
    merged.state.p(k) = r.state.p(k);
    merged.state.r(k) = r.state.r(k);
    merged.state.r_direct(k) = r.state.r_direct(k);
    merged.state.r_relay_hop1(k) = r.state.r_relay_hop1(k);
    merged.state.r_relay_hop2(k) = r.state.r_relay_hop2(k);
    merged.state.r_aux(k) = r.state.r_aux(k);
    merged.state.f(k) = r.state.f(k);
    merged.state.z_direct(k) = r.state.z_direct(k);
    merged.state.z_relay(k) = r.state.z_relay(k);
    merged.state.gamma_s(k) = r.state.gamma_s(k);
    merged.state.gamma_w_direct(k) = r.state.gamma_w_direct(k);
    merged.state.gamma_w_relay(k) = r.state.gamma_w_relay(k);
    merged.state.gamma_w_hop2(k) = r.state.gamma_w_hop2(k);
    merged.trace.selection.relay[k] = r.trace.selection.relay[k];
    merged.trace.decode_flags[sc.topology.pairing[k]] =
        r.trace.decode_flags[sc.topology.pairing[k]];
    merged.trace.used_slack |= r.trace.used_slack;
    merged.trace.wall_sec = std::max(merged.trace.wall_sec, r.trace.wall_sec);
  }
  polish_state(merged.state, sc, opts.scheme, merged.trace.selection, merged.trace.decode_flags,
               true, &merged.trace.deadline_violation);
  merged.trace.final_objective = log_rate(merged.state);
  return merged;
}

inline RunResult drm_run(const Scenario& sc, double nu, const RunOptions& opts = {}) {
  if (opts.use_socket_transport) {
    SocketTransport tr(sc.params.num_ec);
    return drm_run(sc, nu, opts, tr);
  }
  BusTransport tr(sc.params.num_ec, opts.transport_timeout_sec);
  return drm_run(sc, nu, opts, tr);
}

inline RunResult run_once(const Scenario& sc, double nu, RunMode mode,
                          const RunOptions& opts = {}) {
  return mode == RunMode::Crm ? crm_run(sc, nu, opts) : drm_run(sc, nu, opts);
}

struct NuPoint {
  double nu = 0.0;
  bool ok = false;
  double objective = 0.0;
  std::string error;
};

struct NuSearchResult {
  double nu = 0.0;
  RunResult run;
  std::vector<NuPoint> points;
};

// Linear search over the time-split grid; argmax of the final log-rate, ties
// to the larger nu. Baselines are pinned to nu = 1.
inline NuSearchResult nu_search(const Scenario& sc, Scheme scheme, RunMode mode,
                                RunOptions opts = {}, std::vector<double> grid = {}) {
  opts.scheme = scheme;
  if (scheme != Scheme::CoNoma) grid = {1.0};
  else if (grid.empty()) grid = sc.params.nu_grid;
  NuSearchResult best;
  bool have = false;
  for (double nu : grid) {
    NuPoint pt;
    pt.nu = nu;
    try {
      RunResult r = run_once(sc, nu, mode, opts);
      pt.ok = true;
      pt.objective = r.trace.final_objective;
      if (!have || pt.objective >= best.run.trace.final_objective) {
        best.nu = nu;
        best.run = std::move(r);
        have = true;
      }
    } catch (const std::exception& ex) {
      pt.error = ex.what();
    }
    best.points.push_back(pt);
  }
  if (!have) {
    std::string what = "nu_search: every grid point failed:";
    for (const auto& pt : best.points) what += " nu=" + std::to_string(pt.nu) + " (" + pt.error + ")";
    throw std::runtime_error(what);
  }
  return best;
}

inline RunResult baseline_run(const Scenario& sc, Scheme scheme, RunMode mode,
                              RunOptions opts = {}) {
  if (scheme == Scheme::CoNoma)
    throw std::invalid_argument("baseline_run: scheme must be Sdma or Noma");
  opts.scheme = scheme;
  return run_once(sc, 1.0, mode, opts);
}

}  // namespace conoma
