#pragma once

// Fractional-programming layer (quadratic transform): convex g-functions that
// replace the SINR constraints, and the closed-form auxiliary updates. The
// auxiliaries are the complex quotients a* = h^H q~ / I~, which make the
// transform tight at the operating point: max{gamma : g(q~, a*, gamma) <= 0}
// equals the direct SINR.

#include <vector>

#include <Eigen/Dense>

#include "conoma/modes.hpp"
#include "conoma/phy.hpp"

namespace conoma {

struct GResiduals {
  Eigen::VectorXd weak_relay;   // g_w^(r), indexed by weak device
  Eigen::VectorXd weak_direct;  // g_w^(d)
  Eigen::VectorXd weak_hop2;    // g_w^(2)
  Eigen::VectorXd strong;       // g_s, indexed by strong device
};

namespace detail {

// The weak device's first-slot serving beam: q^(d) normally, q^(r) under NOMA
// (one superposed beam decoded at both the strong and the weak device).
inline const Eigen::MatrixXcd& weak_beam(const ResourceState& st, Scheme scheme) {
  return scheme == Scheme::Noma ? st.q_relay : st.q_direct;
}

}  // namespace detail

inline GResiduals g_functions(const ResourceState& state, const Scenario& sc,
                              const std::vector<char>& decode_flags,
                              Scheme scheme = Scheme::CoNoma) {
  const auto& topo = sc.topology;
  const auto& ch = sc.channels;
  const int K = topo.num_devices();
  GResiduals out;
  out.weak_relay = Eigen::VectorXd::Zero(K);
  out.weak_direct = Eigen::VectorXd::Zero(K);
  out.weak_hop2 = Eigen::VectorXd::Zero(K);
  out.strong = Eigen::VectorXd::Zero(K);

  for (int w : topo.weak_set) {
    const int s = topo.pairing[w];  // d_w
    const auto Yw = detail::without(topo.weak_set, w);
    {
      const cplx a = state.a_w_relay(w);
      const cplx sig = ch.aggregate[s].dot(state.q_relay.col(w));
      out.weak_relay(w) = state.gamma_w_relay(w) - 2.0 * std::real(std::conj(a) * sig) +
                          std::norm(a) * interference(s, topo.strong_set, Yw, state, ch, sc.sigma2);
    }
    {
      const cplx a = state.a_w_direct(w);
      const cplx sig = ch.aggregate[w].dot(detail::weak_beam(state, scheme).col(w));
      out.weak_direct(w) = state.gamma_w_direct(w) - 2.0 * std::real(std::conj(a) * sig) +
                           std::norm(a) * interference(w, topo.strong_set, Yw, state, ch, sc.sigma2);
    }
    {
      const double a = state.a_w_hop2(w);
      double denom = sc.sigma2;
      for (int w2 : Yw) denom += std::norm(ch.g_d2d(topo.pairing[w2], w)) * state.p(topo.pairing[w2]);
      out.weak_hop2(w) = state.gamma_w_hop2(w) -
                         2.0 * a * std::sqrt(std::norm(ch.g_d2d(s, w)) * state.p(s)) +
                         a * a * denom;
    }
  }
  for (int s : topo.strong_set) {
    const int w = topo.pairing[s];
    const auto X = detail::without(topo.strong_set, s);
    const auto Y = decode_flags[s] ? detail::without(topo.weak_set, w) : topo.weak_set;
    const cplx a = state.a_s(s);
    const cplx sig = ch.aggregate[s].dot(state.q_direct.col(s));
    out.strong(s) = state.gamma_s(s) - 2.0 * std::real(std::conj(a) * sig) +
                    std::norm(a) * interference(s, X, Y, state, ch, sc.sigma2);
  }
  return out;
}

// Closed-form auxiliary updates at the previous iterate. With sigma2 > 0 every
// denominator is strictly positive.
inline void update_aux(ResourceState& state, const Scenario& sc,
                       const std::vector<char>& decode_flags, Scheme scheme = Scheme::CoNoma) {
  const auto& topo = sc.topology;
  const auto& ch = sc.channels;
  for (int w : topo.weak_set) {
    const int s = topo.pairing[w];
    const auto Yw = detail::without(topo.weak_set, w);
    state.a_w_relay(w) = ch.aggregate[s].dot(state.q_relay.col(w)) /
                         interference(s, topo.strong_set, Yw, state, ch, sc.sigma2);
    state.a_w_direct(w) = ch.aggregate[w].dot(detail::weak_beam(state, scheme).col(w)) /
                          interference(w, topo.strong_set, Yw, state, ch, sc.sigma2);
    double denom = sc.sigma2;
    for (int w2 : Yw) denom += std::norm(ch.g_d2d(topo.pairing[w2], w)) * state.p(topo.pairing[w2]);
    state.a_w_hop2(w) = std::sqrt(std::norm(ch.g_d2d(s, w)) * state.p(s)) / denom;
  }
  for (int s : topo.strong_set) {
    const int w = topo.pairing[s];
    const auto X = detail::without(topo.strong_set, s);
    const auto Y = decode_flags[s] ? detail::without(topo.weak_set, w) : topo.weak_set;
    state.a_s(s) =
        ch.aggregate[s].dot(state.q_direct.col(s)) / interference(s, X, Y, state, ch, sc.sigma2);
  }
}

}  // namespace conoma
