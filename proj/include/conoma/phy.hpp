#pragma once

// Physical-layer and computation quantities for a given resource iterate:
// interference, SINRs, achievable rates, power consumption, delays and
// fronthaul load. All functions here are pure in (state, scenario).

#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "conoma/scenario.hpp"

namespace conoma {

// One iterate of all decision variables. Beamformers are stored as aggregate
// vectors (length B*L_b + E*L_e); blocks outside a device's platform stay
// exactly zero.
struct ResourceState {
  Eigen::MatrixXcd q_direct;  // dim x K
  Eigen::MatrixXcd q_relay;   // dim x K, nonzero only for weak devices
  Eigen::VectorXd p;          // W, nonzero only for strong devices
  Eigen::VectorXd r;          // bit/s, per device
  Eigen::VectorXd r_direct;       // r_w^(d), weak only
  Eigen::VectorXd r_relay_hop1;   // r_w^(r)
  Eigen::VectorXd r_relay_hop2;   // r_w^(2)
  Eigen::VectorXd r_aux;          // r_w^aux
  Eigen::VectorXd f;          // cycles/s
  Eigen::VectorXd z_direct, z_relay;  // selection scalars, weak only
  Eigen::MatrixXd z_bs;       // B x K clustering scalars (core devices)
  Eigen::VectorXd gamma_s, gamma_w_direct, gamma_w_relay, gamma_w_hop2;
  Eigen::VectorXcd a_s, a_w_direct, a_w_relay;  // FP auxiliaries
  Eigen::VectorXd a_w_hop2;
  Eigen::VectorXd beta_direct, beta_relay;  // l1 weights, weak only
  Eigen::MatrixXd beta_bs;                  // B x K
  double nu = 1.0;

  static ResourceState zeros(int dim, int B, int K) {
    ResourceState s;
    s.q_direct = Eigen::MatrixXcd::Zero(dim, K);
    s.q_relay = Eigen::MatrixXcd::Zero(dim, K);
    s.p = Eigen::VectorXd::Zero(K);
    s.r = Eigen::VectorXd::Zero(K);
    s.r_direct = Eigen::VectorXd::Zero(K);
    s.r_relay_hop1 = Eigen::VectorXd::Zero(K);
    s.r_relay_hop2 = Eigen::VectorXd::Zero(K);
    s.r_aux = Eigen::VectorXd::Zero(K);
    s.f = Eigen::VectorXd::Zero(K);
    s.z_direct = Eigen::VectorXd::Zero(K);
    s.z_relay = Eigen::VectorXd::Zero(K);
    s.z_bs = Eigen::MatrixXd::Zero(B, K);
    s.gamma_s = Eigen::VectorXd::Zero(K);
    s.gamma_w_direct = Eigen::VectorXd::Zero(K);
    s.gamma_w_relay = Eigen::VectorXd::Zero(K);
    s.gamma_w_hop2 = Eigen::VectorXd::Zero(K);
    s.a_s = Eigen::VectorXcd::Zero(K);
    s.a_w_direct = Eigen::VectorXcd::Zero(K);
    s.a_w_relay = Eigen::VectorXcd::Zero(K);
    s.a_w_hop2 = Eigen::VectorXd::Zero(K);
    s.beta_direct = Eigen::VectorXd::Zero(K);
    s.beta_relay = Eigen::VectorXd::Zero(K);
    s.beta_bs = Eigen::MatrixXd::Zero(B, K);
    return s;
  }
};

struct DelayBreakdown {
  double computation = 0.0;
  double fronthaul = 0.0;
  double transmission = 0.0;
  double total = 0.0;
  bool finite = true;
};

// Antenna support of device k's beamformers within the aggregate vector.
struct AntennaBlock {
  int offset = 0;
  int length = 0;
};

inline AntennaBlock platform_block(const Scenario& sc, int k) {
  const int e = sc.topology.platform_of[k];
  if (e < 0) return {0, sc.params.num_bs * sc.params.antennas_bs};
  return {sc.params.num_bs * sc.params.antennas_bs + e * sc.params.antennas_ec,
          sc.params.antennas_ec};
}

inline AntennaBlock bs_block(const Scenario& sc, int b) {
  return {b * sc.params.antennas_bs, sc.params.antennas_bs};
}

// Interference plus noise at device i from the strong set X (direct
// beamformers) and the weak set Y (direct + relay beamformers).
inline double interference(int i, const std::vector<int>& X, const std::vector<int>& Y,
                           const ResourceState& state, const ChannelSet& ch, double sigma2) {
  const cvec& h = ch.aggregate[i];
  if (h.size() != state.q_direct.rows())
    throw std::invalid_argument("interference: channel/beamformer dimension mismatch");
  double acc = sigma2;
  for (int s : X) acc += std::norm(h.dot(state.q_direct.col(s)));
  for (int w : Y) acc += std::norm(h.dot(cvec(state.q_direct.col(w) + state.q_relay.col(w))));
  return acc;
}

namespace detail {

inline std::vector<int> without(const std::vector<int>& set, int excluded) {
  std::vector<int> out;
  out.reserve(set.size());
  for (int v : set)
    if (v != excluded) out.push_back(v);
  return out;
}

}  // namespace detail

struct SinrBundle {
  Eigen::VectorXd strong;      // Gamma_s
  Eigen::VectorXd weak_direct; // Gamma_w^(d)
  Eigen::VectorXd weak_relay;  // Gamma_w^(r), decoded at d_w
  Eigen::VectorXd weak_hop2;   // Gamma_w^(2)
};

// decode_flags[s] says whether strong device s decodes its partner's message.
inline SinrBundle sinr_all(const ResourceState& state, const Scenario& sc,
                           const std::vector<char>& decode_flags) {
  const auto& topo = sc.topology;
  const auto& ch = sc.channels;
  const int K = topo.num_devices();
  SinrBundle out;
  out.strong = Eigen::VectorXd::Zero(K);
  out.weak_direct = Eigen::VectorXd::Zero(K);
  out.weak_relay = Eigen::VectorXd::Zero(K);
  out.weak_hop2 = Eigen::VectorXd::Zero(K);

  for (int s : topo.strong_set) {
    const int w = topo.pairing[s];
    const auto X = detail::without(topo.strong_set, s);
    const auto Y = decode_flags[s] ? detail::without(topo.weak_set, w) : topo.weak_set;
    const double num = std::norm(ch.aggregate[s].dot(state.q_direct.col(s)));
    out.strong(s) = num / interference(s, X, Y, state, ch, sc.sigma2);
  }
  for (int w : topo.weak_set) {
    const int s = topo.pairing[w];  // d_w
    const auto Yw = detail::without(topo.weak_set, w);
    out.weak_direct(w) = std::norm(ch.aggregate[w].dot(state.q_direct.col(w))) /
                         interference(w, topo.strong_set, Yw, state, ch, sc.sigma2);
    out.weak_relay(w) = std::norm(ch.aggregate[s].dot(state.q_relay.col(w))) /
                        interference(s, topo.strong_set, Yw, state, ch, sc.sigma2);
    double denom = sc.sigma2;
    for (int w2 : Yw) denom += std::norm(ch.g_d2d(topo.pairing[w2], w)) * state.p(topo.pairing[w2]);
    out.weak_hop2(w) = std::norm(ch.g_d2d(s, w)) * state.p(s) / denom;
  }
  return out;
}

struct RateBounds {
  Eigen::VectorXd strong;       // nu W log2(1+Gamma_s)
  Eigen::VectorXd weak_direct;  // nu W log2(1+Gamma_w^(d))
  Eigen::VectorXd weak_relay;   // nu W log2(1+Gamma_w^(r))
  Eigen::VectorXd weak_hop2;    // (1-nu) W log2(1+Gamma_w^(2))
};

inline RateBounds rates(const SinrBundle& sinr, double nu, double bandwidth) {
  if (nu <= 0.0 || nu > 1.0) throw std::invalid_argument("rates: nu must be in (0,1]");
  auto shannon = [](const Eigen::VectorXd& g, double eff_bw) {
    return (eff_bw * (g.array() + 1.0).log() / std::log(2.0)).matrix().eval();
  };
  RateBounds out;
  out.strong = shannon(sinr.strong, nu * bandwidth);
  out.weak_direct = shannon(sinr.weak_direct, nu * bandwidth);
  out.weak_relay = shannon(sinr.weak_relay, nu * bandwidth);
  out.weak_hop2 = shannon(sinr.weak_hop2, (1.0 - nu) * bandwidth);
  return out;
}

// Selection combining: max of the direct link and the two-hop relay link.
inline double selection_combining_bound(double r_direct, double r_relay_hop1,
                                        double r_relay_hop2) {
  return std::max(r_direct, std::min(r_relay_hop1, r_relay_hop2));
}

inline Eigen::VectorXd power_cc(const ResourceState& state, const Scenario& sc) {
  const int B = sc.params.num_bs;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(B);
  for (int b = 0; b < B; ++b) {
    const auto blk = bs_block(sc, b);
    for (int k : sc.topology.cc_set)
      out(b) += state.q_direct.col(k).segment(blk.offset, blk.length).squaredNorm() +
                state.q_relay.col(k).segment(blk.offset, blk.length).squaredNorm();
  }
  return out;
}

inline Eigen::VectorXd power_ec(const ResourceState& state, const Scenario& sc) {
  const int E = sc.params.num_ec;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(E);
  for (int e = 0; e < E; ++e) {
    double tx = 0.0, fsum = 0.0;
    for (int k : sc.topology.ec_sets[e]) {
      const auto blk = platform_block(sc, k);
      tx += state.q_direct.col(k).segment(blk.offset, blk.length).squaredNorm() +
            state.q_relay.col(k).segment(blk.offset, blk.length).squaredNorm();
      fsum += state.f(k);
    }
    out(e) = tx + sc.params.cpu_coeff * std::pow(fsum, sc.params.cpu_exp) + sc.params.op_power;
  }
  return out;
}

// A link counts as active when its beamformer power exceeds this fraction of
// the transmitter's budget.
inline constexpr double kActiveLinkFraction = 1e-6;

// Hard BS-device link activity from beamformer powers, B x K, core devices only.
inline Eigen::MatrixXi active_bs_links(const ResourceState& state, const Scenario& sc) {
  const int B = sc.params.num_bs;
  Eigen::MatrixXi out = Eigen::MatrixXi::Zero(B, sc.num_devices());
  const double thresh = kActiveLinkFraction * dbm_to_watt(sc.params.p_bs_max);
  for (int b = 0; b < B; ++b) {
    const auto blk = bs_block(sc, b);
    for (int k : sc.topology.cc_set) {
      const double pw = state.q_direct.col(k).segment(blk.offset, blk.length).squaredNorm() +
                        state.q_relay.col(k).segment(blk.offset, blk.length).squaredNorm();
      if (pw > thresh) out(b, k) = 1;
    }
  }
  return out;
}

// Fronthaul delay per core device given hard link activity; zero for edge devices.
inline Eigen::VectorXd fronthaul_delay(const Scenario& sc, const Eigen::MatrixXi& links) {
  const int K = sc.num_devices();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(K);
  const int B = sc.params.num_bs;
  Eigen::VectorXd bs_load(B);
  for (int b = 0; b < B; ++b) {
    double bits = 0.0;
    for (int i : sc.topology.cc_set)
      if (links(b, i)) bits += sc.params.data_bits;
    bs_load(b) = bits / sc.params.fronthaul_cap;
  }
  for (int k : sc.topology.cc_set) {
    double worst = 0.0;
    for (int b = 0; b < B; ++b)
      if (links(b, k)) worst = std::max(worst, bs_load(b));
    out(k) = worst;
  }
  return out;
}

inline std::vector<DelayBreakdown> delay(const ResourceState& state, const Scenario& sc,
                                         const Eigen::MatrixXi& links) {
  const int K = sc.num_devices();
  const Eigen::VectorXd lambda = fronthaul_delay(sc, links);
  std::vector<DelayBreakdown> out(K);
  for (int k = 0; k < K; ++k) {
    DelayBreakdown& d = out[k];
    d.fronthaul = lambda(k);
    if (state.f(k) <= 0.0 || state.r(k) <= 0.0) {
      d.computation = d.transmission = d.total = std::numeric_limits<double>::infinity();
      d.finite = false;
      continue;
    }
    d.computation = sc.params.task_cycles / state.f(k);
    d.transmission = sc.params.data_bits / state.r(k);
    d.total = d.computation + d.fronthaul + d.transmission;
  }
  return out;
}

inline Eigen::VectorXd fronthaul_load(const ResourceState& state, const Scenario& sc,
                                      const Eigen::MatrixXi& hard_links) {
  const int B = sc.params.num_bs;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(B);
  for (int b = 0; b < B; ++b)
    for (int k : sc.topology.cc_set)
      if (hard_links(b, k)) out(b) += state.r(k);
  return out;
}

}  // namespace conoma
