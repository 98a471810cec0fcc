#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "conoma/scenario.hpp"
#include "conoma/units.hpp"

using namespace conoma;

TEST_CASE("parameter validation") {
  NetworkParams p;
  CHECK_NOTHROW(p.validate());
  p.num_devices = 7;
  CHECK_THROWS(p.validate());
  p = NetworkParams{};
  p.l1_delta = 1.0;
  CHECK_THROWS(p.validate());
  p = NetworkParams{};
  p.nu_grid = {0.0};
  CHECK_THROWS(p.validate());
  p = NetworkParams{};
  p.cpu_exp = 0.5;
  CHECK_THROWS(p.validate());
}

TEST_CASE("pathloss formulas against precomputed values") {
  CHECK(pathloss_bs(1.0) == doctest::Approx(128.1).epsilon(1e-12));
  CHECK(pathloss_bs(0.1) == doctest::Approx(90.5).epsilon(1e-12));
  // 128.1 + 37.6 log10(0.5), evaluated separately.
  CHECK(pathloss_bs(0.5) == doctest::Approx(116.7812721630343).epsilon(1e-12));
  CHECK_THROWS(pathloss_bs(0.0));

  CHECK(los_probability(9.61) == doctest::Approx(1.0 / 10.61).epsilon(1e-12));
  CHECK(los_probability(90.0) > 1.0 - 1e-4);
  CHECK(pathloss_uav(200.0, 90.0, 2e9) < pathloss_uav(200.0, 10.0, 2e9));
}

TEST_CASE("noise power") {
  NetworkParams p;
  p.noise_psd = -159.0;
  p.bandwidth = 10e6;
  // -159 + 10 log10(1e7) = -89 dBm -> 1.2589e-12 W.
  CHECK(noise_power(p) == doctest::Approx(1.2589254117941663e-12).epsilon(1e-12));
  p.noise_psd = -30.0;
  p.bandwidth = 1.0;
  CHECK(noise_power(p) == doctest::Approx(1e-6).epsilon(1e-12));
  p.bandwidth = 2.0;
  CHECK(noise_power(p) == doctest::Approx(2e-6).epsilon(1e-12));
}

TEST_CASE("topology invariants") {
  NetworkParams p;
  p.num_bs = 4;
  p.num_ec = 6;
  p.num_devices = 30;
  const Scenario sc = make_scenario(p, 42);
  const Topology& t = sc.topology;
  CHECK(t.strong_set.size() == 15);
  CHECK(t.weak_set.size() == 15);
  std::vector<int> seen(30, 0);
  for (int k = 0; k < 30; ++k) {
    CHECK(t.pairing[t.pairing[k]] == k);               // involution
    CHECK(t.is_strong[k] != t.is_strong[t.pairing[k]]);  // strong <-> weak
    CHECK(t.platform_of[k] == t.platform_of[t.pairing[k]]);
    ++seen[k];
  }
  // Platform partition: CC set plus EC sets cover every device exactly once.
  std::vector<int> covered(30, 0);
  for (int k : t.cc_set) ++covered[k];
  for (const auto& set : t.ec_sets)
    for (int k : set) ++covered[k];
  for (int k = 0; k < 30; ++k) CHECK(covered[k] == 1);
  // Pairs within 100 m; UAV directly above its strong device.
  for (int s : t.strong_set)
    CHECK((t.device_positions[s] - t.device_positions[t.pairing[s]]).norm() <= 100.0 + 1e-9);
  for (int e = 0; e < p.num_ec; ++e) {
    REQUIRE(t.ec_sets[e].size() == 2);
    CHECK(t.pairing[t.ec_sets[e][0]] == t.ec_sets[e][1]);
    // The UAV hovers directly above one of its two devices.
    const double d0 = (t.uav_positions[e].head<2>() - t.device_positions[t.ec_sets[e][0]]).norm();
    const double d1 = (t.uav_positions[e].head<2>() - t.device_positions[t.ec_sets[e][1]]).norm();
    CHECK(std::min(d0, d1) == 0.0);
    CHECK(t.uav_positions[e].z() == p.uav_altitude);
  }
  CHECK(sc.dim() == p.num_bs * p.antennas_bs + p.num_ec * p.antennas_ec);
}

TEST_CASE("degenerate edge-free network") {
  NetworkParams p;
  p.num_bs = 1;
  p.num_ec = 0;
  p.num_devices = 2;
  const Scenario sc = make_scenario(p, 1);
  CHECK(sc.topology.cc_set.size() == 2);
  CHECK(sc.topology.ec_sets.empty());
  CHECK(int(sc.topology.is_strong[0]) + int(sc.topology.is_strong[1]) == 1);
}

TEST_CASE("determinism: same seed reproduces the instance bit for bit") {
  NetworkParams p;
  const Scenario a = make_scenario(p, 7);
  const Scenario b = make_scenario(p, 7);
  const Scenario c = make_scenario(p, 8);
  for (int k = 0; k < a.num_devices(); ++k) {
    CHECK(a.topology.device_positions[k] == b.topology.device_positions[k]);
    CHECK((a.channels.aggregate[k] - b.channels.aggregate[k]).norm() == 0.0);
  }
  CHECK((a.channels.g_d2d - b.channels.g_d2d).norm() == 0.0);
  bool any_diff = false;
  for (int k = 0; k < a.num_devices(); ++k)
    any_diff |= (a.channels.aggregate[k] - c.channels.aggregate[k]).norm() > 0.0;
  CHECK(any_diff);
}

TEST_CASE("channel structure and finiteness") {
  NetworkParams p;
  const Scenario sc = make_scenario(p, 3);
  for (int k = 0; k < sc.num_devices(); ++k) {
    CHECK(sc.channels.aggregate[k].size() == sc.dim());
    CHECK(sc.channels.aggregate[k].allFinite());
  }
  // D2D channels defined for every strong->weak pair.
  for (int s : sc.topology.strong_set)
    for (int w : sc.topology.weak_set) CHECK(std::isfinite(std::abs(sc.channels.g_d2d(s, w))));
  // Strong devices carry the larger aggregate channel norm of their pair.
  for (int s : sc.topology.strong_set)
    CHECK(sc.channels.aggregate[s].norm() >=
          sc.channels.aggregate[sc.topology.pairing[s]].norm());
}

TEST_CASE("additional fading attenuates only the weak devices' network links") {
  NetworkParams p;
  p.num_bs = 1;
  p.num_ec = 1;
  p.num_devices = 4;
  // Fix the topology; compare faded vs unfaded channel draws statistically.
  const Topology topo = build_topology(p, 99);
  double sum0 = 0.0, sum12 = 0.0, strong0 = 0.0, strong12 = 0.0;
  int n = 0;
  NetworkParams p12 = p;
  p12.additional_fading = 12.0;
  for (std::uint64_t s = 0; s < 400; ++s) {
    const ChannelSet c0 = draw_channels(topo, p, s);
    const ChannelSet c12 = draw_channels(topo, p12, s);
    for (int w : topo.weak_set) {
      sum0 += c0.aggregate[w].squaredNorm();
      sum12 += c12.aggregate[w].squaredNorm();
      const int sdev = topo.pairing[w];
      strong0 += c0.aggregate[sdev].squaredNorm();
      strong12 += c12.aggregate[sdev].squaredNorm();
      // D2D untouched by the additional fading.
      CHECK(c0.g_d2d(sdev, w) == c12.g_d2d(sdev, w));
      ++n;
    }
  }
  CHECK(n >= 400);
  CHECK(sum12 / sum0 == doctest::Approx(std::pow(10.0, -1.2)).epsilon(1e-9));
  CHECK(strong12 / strong0 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("json round trip reproduces the scenario") {
  NetworkParams p;
  p.num_devices = 4;
  p.num_ec = 1;
  const Scenario sc = make_scenario(p, 5);
  const nlohmann::json j = scenario_to_json(sc);
  const Scenario back = scenario_from_json(j);
  CHECK(back.num_devices() == sc.num_devices());
  CHECK(back.sigma2 == sc.sigma2);
  for (int k = 0; k < sc.num_devices(); ++k) {
    CHECK((back.channels.aggregate[k] - sc.channels.aggregate[k]).norm() == 0.0);
    CHECK(back.topology.platform_of[k] == sc.topology.platform_of[k]);
  }
  CHECK((back.channels.g_d2d - sc.channels.g_d2d).norm() == 0.0);
}

TEST_CASE("config text parsing") {
  std::stringstream ss;
  ss << "# comment line\n"
     << "network.num_bs = 1\n"
     << "network.num_devices = 4\n"
     << "num_ec = 1\n"
     << "nu_grid = 0.5,1.0\n"
     << "seed = 11\n";
  const NetworkParams p = parse_config_text(ss);
  CHECK(p.num_bs == 1);
  CHECK(p.num_devices == 4);
  CHECK(p.num_ec == 1);
  REQUIRE(p.nu_grid.size() == 2);
  CHECK(p.nu_grid[0] == 0.5);
  CHECK(p.seed == 11);

  std::stringstream bad;
  bad << "not_a_key = 3\n";
  CHECK_THROWS(parse_config_text(bad));
  std::stringstream bad2;
  bad2 << "num_bs : 3\n";
  CHECK_THROWS(parse_config_text(bad2));
}
