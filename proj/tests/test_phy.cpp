#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <random>

#include "conoma/phy.hpp"
#include "conoma/units.hpp"

using namespace conoma;

namespace {

Scenario desk(std::uint64_t seed, int K = 4, int E = 1, int B = 2) {
  NetworkParams p;
  p.num_devices = K;
  p.num_ec = E;
  p.num_bs = B;
  return make_scenario(p, seed);
}

ResourceState random_state(const Scenario& sc, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const int K = sc.num_devices();
  ResourceState st = ResourceState::zeros(sc.dim(), sc.params.num_bs, K);
  for (int k = 0; k < K; ++k) {
    for (int d = 0; d < sc.dim(); ++d) {
      st.q_direct(d, k) = std::complex<double>(n(rng), n(rng)) * 1e-3;
      if (!sc.topology.is_strong[k]) st.q_relay(d, k) = std::complex<double>(n(rng), n(rng)) * 1e-3;
    }
    if (sc.topology.is_strong[k]) st.p(k) = std::abs(n(rng)) * 0.05;
  }
  return st;
}

// SINR oracle written directly from the signal model: every interfering
// transmission is enumerated one by one instead of through set helpers.
double oracle_received_power(const Scenario& sc, const ResourceState& st, int rx, int tx_dev,
                             bool relay_beam) {
  const cvec& h = sc.channels.aggregate[rx];
  const cvec q = relay_beam ? cvec(st.q_relay.col(tx_dev)) : cvec(st.q_direct.col(tx_dev));
  return std::norm(h.dot(q));
}

// Slot-1 interference at receiver rx when the intended message is `wanted`
// (a device index) and, if the receiver's strong partner pre-decodes the weak
// message of `removed_weak`, that superposition is cancelled too.
double oracle_slot1_interference(const Scenario& sc, const ResourceState& st, int rx, int wanted,
                                 int removed_weak) {
  double acc = sc.sigma2;
  for (int k = 0; k < sc.num_devices(); ++k) {
    if (sc.topology.is_strong[k]) {
      if (k == wanted) continue;
      acc += oracle_received_power(sc, st, rx, k, false);
    } else {
      if (k == wanted || k == removed_weak) continue;
      const cvec sum = st.q_direct.col(k) + st.q_relay.col(k);
      acc += std::norm(sc.channels.aggregate[rx].dot(sum));
    }
  }
  return acc;
}

}  // namespace

TEST_CASE("sinr_all matches a from-scratch oracle on random states") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const Scenario sc = desk(seed);
    const ResourceState st = random_state(sc, seed * 31 + 7);
    std::vector<char> decode(sc.num_devices(), 0);
    for (int s : sc.topology.strong_set) decode[s] = (seed + s) % 2;  // mixed flags
    const SinrBundle got = sinr_all(st, sc, decode);
    for (int s : sc.topology.strong_set) {
      const int w = sc.topology.pairing[s];
      const double num = oracle_received_power(sc, st, s, s, false);
      const double den = oracle_slot1_interference(sc, st, s, s, decode[s] ? w : -1);
      CHECK(got.strong(s) == doctest::Approx(num / den).epsilon(1e-12));
    }
    for (int w : sc.topology.weak_set) {
      const int s = sc.topology.pairing[w];
      // Own direct decode: the weak device removes only its own superposition.
      const double dnum = oracle_received_power(sc, st, w, w, false);
      const double dden = oracle_slot1_interference(sc, st, w, w, w);
      CHECK(got.weak_direct(w) == doctest::Approx(dnum / dden).epsilon(1e-12));
      // Relay decode happens at the strong partner, message carried by q_relay.
      const double rnum = oracle_received_power(sc, st, s, w, true);
      const double rden = oracle_slot1_interference(sc, st, s, w, w);
      CHECK(got.weak_relay(w) == doctest::Approx(rnum / rden).epsilon(1e-12));
      // Second slot: D2D links only, interference from the other relaying pairs.
      double hden = sc.sigma2;
      for (int w2 : sc.topology.weak_set) {
        if (w2 == w) continue;
        const int s2 = sc.topology.pairing[w2];
        hden += std::norm(sc.channels.g_d2d(s2, w)) * st.p(s2);
      }
      const double hnum = std::norm(sc.channels.g_d2d(s, w)) * st.p(s);
      CHECK(got.weak_hop2(w) == doctest::Approx(hnum / hden).epsilon(1e-12));
    }
  }
}

TEST_CASE("interference building blocks") {
  const Scenario sc = desk(5);
  const ResourceState st = random_state(sc, 11);
  const int i = sc.topology.strong_set[0];
  CHECK(interference(i, {}, {}, st, sc.channels, sc.sigma2) == sc.sigma2);
  const int s2 = sc.topology.strong_set[1];
  const double one = interference(i, {s2}, {}, st, sc.channels, sc.sigma2);
  CHECK(one == doctest::Approx(sc.sigma2 + oracle_received_power(sc, st, i, s2, false))
                   .epsilon(1e-14));
  const int w = sc.topology.weak_set[0];
  const cvec sup = st.q_direct.col(w) + st.q_relay.col(w);
  CHECK(interference(i, {}, {w}, st, sc.channels, sc.sigma2) ==
        doctest::Approx(sc.sigma2 + std::norm(sc.channels.aggregate[i].dot(sup))).epsilon(1e-14));
  ResourceState bad = st;
  bad.q_direct = Eigen::MatrixXcd::Zero(sc.dim() + 1, sc.num_devices());
  CHECK_THROWS(interference(i, {s2}, {}, bad, sc.channels, sc.sigma2));
}

TEST_CASE("rate map at hand-computed points") {
  SinrBundle g;
  g.strong = Eigen::VectorXd::Constant(1, 1.0);
  g.weak_direct = Eigen::VectorXd::Constant(1, 3.0);
  g.weak_relay = Eigen::VectorXd::Constant(1, 0.0);
  g.weak_hop2 = Eigen::VectorXd::Constant(1, 7.0);
  const RateBounds half = rates(g, 0.5, 10e6);
  CHECK(half.strong(0) == doctest::Approx(5e6).epsilon(1e-12));       // 0.5 * W * log2(2)
  CHECK(half.weak_direct(0) == doctest::Approx(1e7).epsilon(1e-12));  // 0.5 * W * log2(4)
  CHECK(half.weak_relay(0) == 0.0);
  CHECK(half.weak_hop2(0) == doctest::Approx(1.5e7).epsilon(1e-12));  // 0.5 * W * log2(8)
  const RateBounds full = rates(g, 1.0, 10e6);
  CHECK(full.weak_direct(0) == doctest::Approx(2e7).epsilon(1e-12));
  CHECK(full.weak_hop2(0) == 0.0);  // no second slot at nu = 1
  CHECK_THROWS(rates(g, 0.0, 10e6));
  CHECK_THROWS(rates(g, 1.5, 10e6));
  // Monotone in the SINR and in nu for the slot-1 families.
  SinrBundle g2 = g;
  g2.strong(0) = 2.0;
  CHECK(rates(g2, 0.5, 10e6).strong(0) > half.strong(0));
  CHECK(rates(g, 0.7, 10e6).strong(0) > half.strong(0));
  CHECK(rates(g, 0.7, 10e6).weak_hop2(0) < half.weak_hop2(0));
}

TEST_CASE("selection combining") {
  CHECK(selection_combining_bound(3.0, 5.0, 4.0) == 4.0);  // relay path wins, hop2 limits
  CHECK(selection_combining_bound(3.0, 2.0, 9.0) == 3.0);  // direct wins
  CHECK(selection_combining_bound(0.0, 0.0, 0.0) == 0.0);
  CHECK(selection_combining_bound(1.0, 5.0, 5.0) == 5.0);
}

TEST_CASE("platform power draw") {
  const Scenario sc = desk(9);
  const int K = sc.num_devices();
  ResourceState st = ResourceState::zeros(sc.dim(), sc.params.num_bs, K);
  // Zero beams: the EC draw is computation plus operational power only.
  const int k_edge = sc.topology.ec_sets[0][0];
  st.f(k_edge) = 1e9;
  Eigen::VectorXd pec = power_ec(st, sc);
  // 100 W + 1e-28 * (1e9)^3 = 100.1 W.
  CHECK(pec(0) == doctest::Approx(100.1).epsilon(1e-12));
  CHECK(power_cc(st, sc).norm() == 0.0);

  // Transmit term is quadratic: doubling the beams quadruples it.
  ResourceState tx = random_state(sc, 21);
  tx.f.setZero();
  const Eigen::VectorXd p1 = power_cc(tx, sc);
  const Eigen::VectorXd e1 = (power_ec(tx, sc).array() - sc.params.op_power).matrix();
  tx.q_direct *= 2.0;
  tx.q_relay *= 2.0;
  const Eigen::VectorXd p2 = power_cc(tx, sc);
  const Eigen::VectorXd e2 = (power_ec(tx, sc).array() - sc.params.op_power).matrix();
  for (int b = 0; b < sc.params.num_bs; ++b) CHECK(p2(b) == doctest::Approx(4.0 * p1(b)).epsilon(1e-12));
  for (int e = 0; e < sc.params.num_ec; ++e) CHECK(e2(e) == doctest::Approx(4.0 * e1(e)).epsilon(1e-12));
}

TEST_CASE("delay model") {
  const Scenario sc = desk(13, 4, 1, 1);
  const int K = sc.num_devices();
  ResourceState st = ResourceState::zeros(sc.dim(), sc.params.num_bs, K);
  st.f.setConstant(1e9);
  st.r.setConstant(1e6);
  Eigen::MatrixXi links = Eigen::MatrixXi::Zero(sc.params.num_bs, K);
  // Two core devices on the single BS: its fronthaul carries 2 * D bits.
  REQUIRE(sc.topology.cc_set.size() == 2);
  for (int k : sc.topology.cc_set) links(0, k) = 1;
  const Eigen::VectorXd lam = fronthaul_delay(sc, links);
  for (int k : sc.topology.cc_set)
    CHECK(lam(k) == doctest::Approx(2.0 * 1e4 / 100e6).epsilon(1e-12));  // 0.2 ms
  for (int k : sc.topology.ec_sets[0]) CHECK(lam(k) == 0.0);

  const auto d = delay(st, sc, links);
  for (int k : sc.topology.cc_set) {
    CHECK(d[k].computation == doctest::Approx(0.01).epsilon(1e-12));   // 1e7 / 1e9
    CHECK(d[k].transmission == doctest::Approx(0.01).epsilon(1e-12));  // 1e4 / 1e6
    CHECK(d[k].total == doctest::Approx(0.02 + lam(k)).epsilon(1e-12));
    CHECK(d[k].finite);
  }
  for (int k : sc.topology.ec_sets[0])
    CHECK(d[k].total == doctest::Approx(0.02).epsilon(1e-12));  // no fronthaul hop

  // Degenerate allocations yield infinite delay, not a crash.
  st.f(sc.topology.cc_set[0]) = 0.0;
  st.r(sc.topology.cc_set[1]) = 0.0;
  const auto dd = delay(st, sc, links);
  CHECK(!dd[sc.topology.cc_set[0]].finite);
  CHECK(!dd[sc.topology.cc_set[1]].finite);
  CHECK(std::isinf(dd[sc.topology.cc_set[0]].total));

  // Fronthaul load sums the linked core devices' rates per BS.
  st.r.setConstant(3e6);
  const Eigen::VectorXd load = fronthaul_load(st, sc, links);
  CHECK(load(0) == doctest::Approx(6e6).epsilon(1e-12));
}

TEST_CASE("noise-free SINRs are invariant to a common power rescaling") {
  Scenario sc = desk(17);
  sc.sigma2 = 0.0;
  const ResourceState st = random_state(sc, 23);
  ResourceState scaled = st;
  scaled.q_direct *= std::sqrt(3.0);
  scaled.q_relay *= std::sqrt(3.0);
  scaled.p *= 3.0;
  const std::vector<char> decode(sc.num_devices(), 1);
  const SinrBundle a = sinr_all(st, sc, decode);
  const SinrBundle b = sinr_all(scaled, sc, decode);
  for (int k = 0; k < sc.num_devices(); ++k) {
    CHECK(a.strong(k) == doctest::Approx(b.strong(k)).epsilon(1e-12));
    CHECK(a.weak_direct(k) == doctest::Approx(b.weak_direct(k)).epsilon(1e-12));
    CHECK(a.weak_relay(k) == doctest::Approx(b.weak_relay(k)).epsilon(1e-12));
    CHECK(a.weak_hop2(k) == doctest::Approx(b.weak_hop2(k)).epsilon(1e-12));
  }
}

TEST_CASE("pre-decoding at the strong device can only raise its SINR") {
  const Scenario sc = desk(19);
  const ResourceState st = random_state(sc, 29);
  const std::vector<char> on(sc.num_devices(), 1), off(sc.num_devices(), 0);
  const SinrBundle with = sinr_all(st, sc, on);
  const SinrBundle without = sinr_all(st, sc, off);
  for (int s : sc.topology.strong_set) CHECK(with.strong(s) >= without.strong(s));
  // The weak families do not depend on the partner's decode flag.
  for (int w : sc.topology.weak_set) {
    CHECK(with.weak_direct(w) == without.weak_direct(w));
    CHECK(with.weak_relay(w) == without.weak_relay(w));
    CHECK(with.weak_hop2(w) == without.weak_hop2(w));
  }
}
