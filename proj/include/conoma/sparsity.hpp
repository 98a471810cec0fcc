#pragma once

// l0 -> weighted-l1 machinery and SCA surrogates: link-selection weights,
// bilinear convexification of the weak-device rate constraint, fronthaul
// capacity SCA, and the worst-case fronthaul delay bound. All evaluators are
// stateless over iterate snapshots.

#include <stdexcept>

#include <Eigen/Dense>

#include "conoma/phy.hpp"

namespace conoma {

// beta_w^(Y) = (delta + ||q~_w^(Y)||^2)^-1 for Y in {direct, relay}.
inline void update_link_weights(const ResourceState& prev, const Topology& topo, double delta,
                                Eigen::VectorXd& beta_direct, Eigen::VectorXd& beta_relay) {
  if (delta <= 1.0) throw std::invalid_argument("update_link_weights: delta must be > 1");
  const int K = topo.num_devices();
  beta_direct = Eigen::VectorXd::Zero(K);
  beta_relay = Eigen::VectorXd::Zero(K);
  for (int w : topo.weak_set) {
    beta_direct(w) = 1.0 / (delta + prev.q_direct.col(w).squaredNorm());
    beta_relay(w) = 1.0 / (delta + prev.q_relay.col(w).squaredNorm());
  }
}

// beta_{b,k} = (delta + ||u~_{b,k}^(d)||^2 + ||u~_{b,k}^(r)||^2)^-1, core devices.
inline Eigen::MatrixXd update_bs_weights(const ResourceState& prev, const Scenario& sc,
                                         double delta) {
  if (delta <= 1.0) throw std::invalid_argument("update_bs_weights: delta must be > 1");
  const int B = sc.params.num_bs;
  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(B, sc.num_devices());
  for (int b = 0; b < B; ++b) {
    const auto blk = bs_block(sc, b);
    for (int k : sc.topology.cc_set) {
      const double pw = prev.q_direct.col(k).segment(blk.offset, blk.length).squaredNorm() +
                        prev.q_relay.col(k).segment(blk.offset, blk.length).squaredNorm();
      beta(b, k) = 1.0 / (delta + pw);
    }
  }
  return beta;
}

// Left side of the SCA-convexified weak-device rate constraint. The constraint
// is residual <= 0; at the operating point the residual equals
// 4*(r_w - z~_d r~_d - z~_r r~_aux).
inline double lemma1_surrogate(double z_d, double r_d, double z_r, double r_aux, double r_w,
                               double zt_d, double rt_d, double zt_r, double rt_aux) {
  const double sd = zt_d + rt_d;
  const double sr = zt_r + rt_aux;
  return 4.0 * r_w + (z_d - r_d) * (z_d - r_d) + (z_r - r_aux) * (z_r - r_aux) - sd * sd -
         sr * sr - 2.0 * sd * ((z_d - zt_d) + (r_d - rt_d)) -
         2.0 * sr * ((z_r - zt_r) + (r_aux - rt_aux));
}

// Per-BS fronthaul capacity surrogate residual; constraint is residual <= 0.
// The sums run over the core devices (only those have BS links).
inline double fronthaul_sca_residual(const Eigen::VectorXd& z_bs, const Eigen::VectorXd& r,
                                     const Eigen::VectorXd& zt_bs, const Eigen::VectorXd& rt,
                                     const std::vector<int>& cc_set, double fronthaul_cap) {
  double acc = 0.0;
  for (int k : cc_set) {
    const double sum = z_bs(k) + r(k);
    const double dt = zt_bs(k) - rt(k);
    acc += sum * sum - 2.0 * dt * (z_bs(k) - r(k)) + dt * dt;
  }
  return acc - 4.0 * fronthaul_cap;
}

// Worst-case fronthaul delay per device from the previous iterate's hard
// clustering. Links can only be deactivated between iterations, so this upper
// bounds the realized fronthaul delay. A core device with no serving BS in the
// previous iterate falls back to the full candidate BS set (first iteration).
inline Eigen::VectorXd worst_case_fronthaul_delay(const Scenario& sc,
                                                  const Eigen::MatrixXi& prev_links) {
  const int K = sc.num_devices();
  const int B = sc.params.num_bs;
  Eigen::VectorXd load(B);
  for (int b = 0; b < B; ++b) {
    double bits = 0.0;
    for (int i : sc.topology.cc_set)
      if (prev_links(b, i)) bits += sc.params.data_bits;
    load(b) = bits / sc.params.fronthaul_cap;
  }
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(K);
  for (int k : sc.topology.cc_set) {
    bool served = false;
    double worst = 0.0;
    for (int b = 0; b < B; ++b)
      if (prev_links(b, k)) {
        served = true;
        worst = std::max(worst, load(b));
      }
    if (!served)
      for (int b = 0; b < B; ++b) worst = std::max(worst, load(b));
    lambda(k) = worst;
  }
  return lambda;
}

// All-BS clustering, the first-iteration default for the worst-case bound.
inline Eigen::MatrixXi full_bs_links(const Scenario& sc) {
  Eigen::MatrixXi links = Eigen::MatrixXi::Zero(sc.params.num_bs, sc.num_devices());
  for (int b = 0; b < sc.params.num_bs; ++b)
    for (int k : sc.topology.cc_set) links(b, k) = 1;
  return links;
}

}  // namespace conoma
