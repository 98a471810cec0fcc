#pragma once

// Network instance generation: topology, device pairing, channel realizations
// and simulation parameters. Instances are immutable after construction and
// fully determined by (params, seed).

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "conoma/units.hpp"

namespace conoma {

using cvec = Eigen::VectorXcd;
using cplx = std::complex<double>;

struct NetworkParams {
  int num_bs = 2;            // B
  int num_ec = 2;            // E
  int num_devices = 8;       // K
  int antennas_bs = 4;       // L_b
  int antennas_ec = 2;       // L_e
  double inter_bs_distance = 500.0;  // m
  double uav_altitude = 125.0;       // m
  double bandwidth = 10e6;           // W, Hz
  double noise_psd = -159.0;         // dBm/Hz
  double p_bs_max = 32.0;            // dBm
  double p_ec_max = 22.0;            // dBm, residual (transmit + computation) budget
  double p_dev_max = 20.0;           // dBm
  double f_cc_max = 5e10;            // cycles/s
  double f_ec_max = 1e9;             // cycles/s
  double task_cycles = 1e7;          // F_k
  double data_bits = 1e4;            // D_k
  double fronthaul_cap = 100e6;      // R_b^max, bit/s
  double cpu_coeff = 1e-28;          // o_e
  double cpu_exp = 3.0;              // mu_e
  double op_power = 100.0;           // Phi_e, W
  double delay_budget = 50e-3;       // T_k, s
  double carrier_freq = 5e9;         // Hz
  double conv_threshold = 0.1;       // omega
  double l1_delta = 2.0;             // delta > 1
  double additional_fading = 0.0;    // dB, extra attenuation on weak devices
  std::vector<double> nu_grid = {0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::uint64_t seed = 1;
  int num_drops = 20;

  void validate() const {
    auto req = [](bool ok, const char* what) {
      if (!ok) throw std::invalid_argument(std::string("NetworkParams: ") + what);
    };
    req(num_bs >= 1, "num_bs must be >= 1");
    req(num_ec >= 0, "num_ec must be >= 0");
    req(num_devices >= 2, "num_devices must be >= 2");
    req(num_devices % 2 == 0, "num_devices must be even");
    req(antennas_bs >= 1 && antennas_ec >= 1, "antenna counts must be positive");
    req(inter_bs_distance > 0 && uav_altitude > 0, "geometry must be positive");
    req(bandwidth > 0, "bandwidth must be positive");
    req(f_cc_max > 0 && f_ec_max > 0, "computation capacities must be positive");
    req(task_cycles > 0 && data_bits > 0, "task sizes must be positive");
    req(fronthaul_cap > 0, "fronthaul capacity must be positive");
    req(cpu_exp >= 1.0, "cpu_exp must be >= 1");
    req(op_power > 0 && delay_budget > 0 && carrier_freq > 0, "params must be positive");
    req(l1_delta > 1.0, "l1_delta must be > 1");
    req(!nu_grid.empty(), "nu_grid must be nonempty");
    for (double nu : nu_grid) req(nu > 0.0 && nu <= 1.0, "nu grid points must be in (0,1]");
    req(num_drops >= 1, "num_drops must be >= 1");
  }

  // Desk-scale defaults are the struct defaults. Paper-scale values follow
  // the full simulation setup.
  static NetworkParams desk_scale() { return NetworkParams{}; }

  static NetworkParams paper_scale() {
    NetworkParams p;
    p.num_bs = 4;
    p.num_ec = 6;
    p.num_devices = 30;
    p.antennas_bs = 6;
    p.antennas_ec = 2;
    return p;
  }
};

struct Topology {
  std::vector<Eigen::Vector2d> bs_positions;
  std::vector<Eigen::Vector3d> uav_positions;
  std::vector<Eigen::Vector2d> device_positions;
  std::vector<int> pairing;      // d[k]: partner index, involution
  std::vector<int> strong_set;   // K^str
  std::vector<int> weak_set;     // K^weak
  std::vector<char> is_strong;   // per device
  std::vector<int> cc_set;                  // K_c
  std::vector<std::vector<int>> ec_sets;    // K_e per EC
  std::vector<int> platform_of;  // -1 = CC, e >= 0 = EC e

  bool is_core(int k) const { return platform_of[k] < 0; }
  int num_devices() const { return static_cast<int>(device_positions.size()); }
};

struct ChannelSet {
  // h_bs[b][k]: L_b entries; h_uav[e][k]: L_e entries; g_d2d(s, w) by device index.
  std::vector<std::vector<cvec>> h_bs;
  std::vector<std::vector<cvec>> h_uav;
  Eigen::MatrixXcd g_d2d;  // K x K, defined for (strong s, weak w) ordered pairs
  std::vector<cvec> aggregate;  // h_k, length B*L_b + E*L_e

  int dim() const { return aggregate.empty() ? 0 : static_cast<int>(aggregate[0].size()); }
};

// 3GPP macro pathloss, distance in km.
inline double pathloss_bs(double dist_km) {
  if (dist_km <= 0.0) throw std::invalid_argument("pathloss_bs: distance must be positive");
  return 128.1 + 37.6 * std::log10(dist_km);
}

inline double los_probability(double elevation_deg) {
  return 1.0 / (1.0 + 9.61 * std::exp(-0.16 * (elevation_deg - 9.61)));
}

// UAV air-to-ground pathloss with probabilistic LoS excess loss.
inline double pathloss_uav(double dist_m, double elevation_deg, double f_carrier) {
  if (dist_m <= 0.0) throw std::invalid_argument("pathloss_uav: distance must be positive");
  const double p_los = los_probability(elevation_deg);
  return 20.0 * std::log10(dist_m) + 20.0 * std::log10(4.0 * M_PI / kSpeedOfLight) +
         20.0 * std::log10(f_carrier) + p_los * 6.0 + (1.0 - p_los) * 20.0;
}

// ITU-1411 lower-bound LoS formula for the short-range D2D link, minus the
// 2.5 dB antenna gain. Antennas at 1.5 m height, so the 2-D distance is used.
inline double pathloss_d2d(double dist_m, double f_carrier) {
  if (dist_m <= 0.0) throw std::invalid_argument("pathloss_d2d: distance must be positive");
  const double lambda = kSpeedOfLight / f_carrier;
  return 20.0 * std::log10(dist_m) + 20.0 * std::log10(4.0 * M_PI / lambda) - 2.5;
}

inline double noise_power(const NetworkParams& p) {
  if (p.bandwidth <= 0.0) throw std::invalid_argument("noise_power: bandwidth must be positive");
  return std::pow(10.0, (p.noise_psd + 10.0 * std::log10(p.bandwidth) - 30.0) / 10.0);
}

namespace detail {

// Axial hex-grid coordinates in spiral order (center, then rings outward).
inline std::vector<Eigen::Vector2d> hex_sites(int count, double spacing) {
  std::vector<Eigen::Vector2d> out;
  auto push = [&](int q, int r) {
    out.emplace_back(spacing * (q + 0.5 * r), spacing * (std::sqrt(3.0) / 2.0) * r);
  };
  push(0, 0);
  static const int dirs[6][2] = {{1, 0}, {1, -1}, {0, -1}, {-1, 0}, {-1, 1}, {0, 1}};
  for (int ring = 1; static_cast<int>(out.size()) < count; ++ring) {
    int q = -ring, r = ring;  // start at direction 4 corner
    for (int side = 0; side < 6 && static_cast<int>(out.size()) < count; ++side) {
      for (int step = 0; step < ring && static_cast<int>(out.size()) < count; ++step) {
        push(q, r);
        q += dirs[side][0];
        r += dirs[side][1];
      }
    }
  }
  out.resize(count);
  return out;
}

}  // namespace detail

// Flat-top hexagon membership, circumradius rc, centered at c.
inline bool point_in_hex(const Eigen::Vector2d& pt, const Eigen::Vector2d& c, double rc) {
  const double x = std::abs(pt.x() - c.x());
  const double y = std::abs(pt.y() - c.y());
  const double apothem = rc * std::sqrt(3.0) / 2.0;
  return y <= apothem && x <= rc - y / std::sqrt(3.0);
}

inline Topology build_topology(const NetworkParams& params, std::uint64_t rng_seed) {
  params.validate();
  const int B = params.num_bs, E = params.num_ec, K = params.num_devices;
  if (K % 2 != 0) throw std::invalid_argument("build_topology: K must be even");
  const int num_pairs = K / 2;
  if (num_pairs < E)
    throw std::invalid_argument("build_topology: need at least one device pair per EC");

  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Topology topo;
  topo.bs_positions = detail::hex_sites(B, params.inter_bs_distance);
  const double cell_radius = params.inter_bs_distance / std::sqrt(3.0);

  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& s : topo.bs_positions) centroid += s;
  centroid /= static_cast<double>(B);
  double grid_extent = 0.0;
  for (const auto& s : topo.bs_positions)
    grid_extent = std::max(grid_extent, (s - centroid).norm() + cell_radius);

  auto in_cells = [&](const Eigen::Vector2d& pt) {
    for (const auto& s : topo.bs_positions)
      if (point_in_hex(pt, s, cell_radius)) return true;
    return false;
  };

  // Whole-grid uniform sampling inside the union of hexagonal cells.
  auto sample_core = [&]() {
    double lo_x = 1e18, hi_x = -1e18, lo_y = 1e18, hi_y = -1e18;
    for (const auto& s : topo.bs_positions) {
      lo_x = std::min(lo_x, s.x() - cell_radius);
      hi_x = std::max(hi_x, s.x() + cell_radius);
      lo_y = std::min(lo_y, s.y() - cell_radius);
      hi_y = std::max(hi_y, s.y() + cell_radius);
    }
    for (int attempt = 0; attempt < 100000; ++attempt) {
      Eigen::Vector2d pt(lo_x + unif(rng) * (hi_x - lo_x), lo_y + unif(rng) * (hi_y - lo_y));
      if (in_cells(pt)) return pt;
    }
    throw std::runtime_error("build_topology: failed to sample a core device position");
  };

  // Annulus just outside the hexagonal cells.
  auto sample_edge = [&]() {
    const double r_lo = grid_extent, r_hi = grid_extent + 300.0;
    for (int attempt = 0; attempt < 100000; ++attempt) {
      const double radius = std::sqrt(unif(rng) * (r_hi * r_hi - r_lo * r_lo) + r_lo * r_lo);
      const double phi = unif(rng) * 2.0 * M_PI;
      Eigen::Vector2d pt = centroid + radius * Eigen::Vector2d(std::cos(phi), std::sin(phi));
      if (!in_cells(pt)) return pt;
    }
    throw std::runtime_error("build_topology: failed to sample an edge device position");
  };

  const double pair_radius = 100.0;
  auto sample_partner = [&](const Eigen::Vector2d& anchor, bool core) {
    for (int attempt = 0; attempt < 100000; ++attempt) {
      const double radius = pair_radius * std::sqrt(unif(rng));
      const double phi = unif(rng) * 2.0 * M_PI;
      Eigen::Vector2d pt = anchor + radius * Eigen::Vector2d(std::cos(phi), std::sin(phi));
      if (pt == anchor) continue;
      if (core == in_cells(pt)) return pt;
    }
    throw std::runtime_error(
        "build_topology: pairing distance bound cannot be met for this geometry");
  };

  topo.device_positions.resize(K);
  topo.pairing.assign(K, -1);
  topo.is_strong.assign(K, 0);
  topo.platform_of.assign(K, -1);
  topo.ec_sets.assign(E, {});

  // Pair p occupies devices (2p, 2p+1); the first E pairs are edge pairs,
  // one per EC, the rest are core pairs.
  for (int p = 0; p < num_pairs; ++p) {
    const int s = 2 * p, w = 2 * p + 1;
    const bool edge = p < E;
    topo.device_positions[s] = edge ? sample_edge() : sample_core();
    topo.device_positions[w] = sample_partner(topo.device_positions[s], !edge);
    topo.pairing[s] = w;
    topo.pairing[w] = s;
    topo.is_strong[s] = 1;
    if (edge) {
      topo.platform_of[s] = topo.platform_of[w] = p;
      topo.ec_sets[p] = {s, w};
    } else {
      topo.cc_set.push_back(s);
      topo.cc_set.push_back(w);
    }
  }

  for (int e = 0; e < E; ++e) {
    const int s = topo.ec_sets[e][0];
    topo.uav_positions.emplace_back(topo.device_positions[s].x(), topo.device_positions[s].y(),
                                    params.uav_altitude);
  }

  for (int k = 0; k < K; ++k) (topo.is_strong[k] ? topo.strong_set : topo.weak_set).push_back(k);
  return topo;
}

namespace detail {

inline cplx std_cgauss(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(0.5));
  return {n(rng), n(rng)};
}

inline void rebuild_aggregate(ChannelSet& ch, int B, int E, int K, int Lb, int Le) {
  ch.aggregate.assign(K, cvec(B * Lb + E * Le));
  for (int k = 0; k < K; ++k) {
    int off = 0;
    for (int b = 0; b < B; ++b, off += Lb) ch.aggregate[k].segment(off, Lb) = ch.h_bs[b][k];
    for (int e = 0; e < E; ++e, off += Le) ch.aggregate[k].segment(off, Le) = ch.h_uav[e][k];
  }
}

}  // namespace detail

// Pathloss + log-normal shadowing + Rayleigh fading, without the weak-device
// additional fading (applied separately, after strong/weak labels settle).
inline ChannelSet draw_channels_base(const Topology& topo, const NetworkParams& params,
                                     std::uint64_t rng_seed) {
  const int B = params.num_bs, E = params.num_ec, K = topo.num_devices();
  const int Lb = params.antennas_bs, Le = params.antennas_ec;
  std::mt19937_64 rng(rng_seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> gauss(0.0, 1.0);

  ChannelSet ch;
  ch.h_bs.assign(B, std::vector<cvec>(K));
  ch.h_uav.assign(E, std::vector<cvec>(K));
  ch.g_d2d = Eigen::MatrixXcd::Zero(K, K);

  for (int b = 0; b < B; ++b) {
    for (int k = 0; k < K; ++k) {
      const double dist_km =
          std::max(10.0, (topo.device_positions[k] - topo.bs_positions[b]).norm()) / 1000.0;
      const double pl_db = pathloss_bs(dist_km) - 8.0 * gauss(rng);
      const double amp = std::sqrt(db_to_lin(-pl_db));
      ch.h_bs[b][k] = cvec(Lb);
      for (int l = 0; l < Lb; ++l) ch.h_bs[b][k](l) = amp * detail::std_cgauss(rng);
    }
  }
  for (int e = 0; e < E; ++e) {
    for (int k = 0; k < K; ++k) {
      const Eigen::Vector3d dev(topo.device_positions[k].x(), topo.device_positions[k].y(), 0.0);
      const Eigen::Vector3d diff = topo.uav_positions[e] - dev;
      const double dist = std::max(1.0, diff.norm());
      const double horiz = std::max(1e-3, diff.head<2>().norm());
      const double elev = std::atan2(diff.z(), horiz) * 180.0 / M_PI;
      const double pl_db = pathloss_uav(dist, elev, params.carrier_freq) - 4.0 * gauss(rng);
      const double amp = std::sqrt(db_to_lin(-pl_db));
      ch.h_uav[e][k] = cvec(Le);
      for (int l = 0; l < Le; ++l) ch.h_uav[e][k](l) = amp * detail::std_cgauss(rng);
    }
  }
  for (int s : topo.strong_set) {
    for (int w : topo.weak_set) {
      const double dist = std::max(1.0, (topo.device_positions[w] - topo.device_positions[s]).norm());
      const double pl_db = pathloss_d2d(dist, params.carrier_freq) - 10.0 * gauss(rng);
      ch.g_d2d(s, w) = std::sqrt(db_to_lin(-pl_db)) * detail::std_cgauss(rng);
    }
  }
  detail::rebuild_aggregate(ch, B, E, K, Lb, Le);
  return ch;
}

// Extra attenuation on the weak devices' BS and UAV links only (not D2D).
inline void apply_additional_fading(ChannelSet& ch, const Topology& topo,
                                    const NetworkParams& params) {
  if (params.additional_fading == 0.0) return;
  const double amp = std::sqrt(db_to_lin(-params.additional_fading));
  for (int w : topo.weak_set) {
    for (auto& per_bs : ch.h_bs) per_bs[w] *= amp;
    for (auto& per_uav : ch.h_uav) per_uav[w] *= amp;
  }
  detail::rebuild_aggregate(ch, params.num_bs, params.num_ec, topo.num_devices(),
                            params.antennas_bs, params.antennas_ec);
}

inline ChannelSet draw_channels(const Topology& topo, const NetworkParams& params,
                                std::uint64_t rng_seed) {
  ChannelSet ch = draw_channels_base(topo, params, rng_seed);
  apply_additional_fading(ch, topo, params);
  return ch;
}

struct Scenario {
  NetworkParams params;
  Topology topology;
  ChannelSet channels;
  double sigma2 = 0.0;

  int num_devices() const { return topology.num_devices(); }
  int dim() const { return channels.dim(); }
};

// Channel quality determines the strong/weak label: if a "weak" partner ends
// up with the larger aggregate channel norm, the labels swap before the
// additional fading is applied.
inline void relabel_by_channel_norm(Topology& topo, const ChannelSet& ch) {
  const int K = topo.num_devices();
  for (int k = 0; k < K; ++k) {
    const int partner = topo.pairing[k];
    if (k > partner || !topo.is_strong[k]) continue;
    if (ch.aggregate[partner].norm() > ch.aggregate[k].norm()) {
      topo.is_strong[k] = 0;
      topo.is_strong[partner] = 1;
    }
  }
  topo.strong_set.clear();
  topo.weak_set.clear();
  for (int k = 0; k < K; ++k) (topo.is_strong[k] ? topo.strong_set : topo.weak_set).push_back(k);
}

inline Scenario make_scenario(const NetworkParams& params, std::uint64_t seed) {
  Scenario sc;
  sc.params = params;
  sc.params.seed = seed;
  sc.topology = build_topology(params, seed);
  ChannelSet base = draw_channels_base(sc.topology, params, seed);
  relabel_by_channel_norm(sc.topology, base);
  // D2D entries exist for every strong->weak ordered pair; labels may have
  // swapped, so redraw with the settled labels for a consistent g matrix.
  sc.channels = draw_channels(sc.topology, params, seed);
  sc.sigma2 = noise_power(params);
  return sc;
}

inline Scenario make_scenario(const NetworkParams& params) { return make_scenario(params, params.seed); }

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const NetworkParams& p) {
  j = nlohmann::json{{"num_bs", p.num_bs},
                     {"num_ec", p.num_ec},
                     {"num_devices", p.num_devices},
                     {"antennas_bs", p.antennas_bs},
                     {"antennas_ec", p.antennas_ec},
                     {"inter_bs_distance", p.inter_bs_distance},
                     {"uav_altitude", p.uav_altitude},
                     {"bandwidth", p.bandwidth},
                     {"noise_psd", p.noise_psd},
                     {"p_bs_max", p.p_bs_max},
                     {"p_ec_max", p.p_ec_max},
                     {"p_dev_max", p.p_dev_max},
                     {"f_cc_max", p.f_cc_max},
                     {"f_ec_max", p.f_ec_max},
                     {"task_cycles", p.task_cycles},
                     {"data_bits", p.data_bits},
                     {"fronthaul_cap", p.fronthaul_cap},
                     {"cpu_coeff", p.cpu_coeff},
                     {"cpu_exp", p.cpu_exp},
                     {"op_power", p.op_power},
                     {"delay_budget", p.delay_budget},
                     {"carrier_freq", p.carrier_freq},
                     {"conv_threshold", p.conv_threshold},
                     {"l1_delta", p.l1_delta},
                     {"additional_fading", p.additional_fading},
                     {"nu_grid", p.nu_grid},
                     {"seed", p.seed},
                     {"num_drops", p.num_drops}};
}

inline void from_json(const nlohmann::json& j, NetworkParams& p) {
  NetworkParams d;
  p.num_bs = j.value("num_bs", d.num_bs);
  p.num_ec = j.value("num_ec", d.num_ec);
  p.num_devices = j.value("num_devices", d.num_devices);
  p.antennas_bs = j.value("antennas_bs", d.antennas_bs);
  p.antennas_ec = j.value("antennas_ec", d.antennas_ec);
  p.inter_bs_distance = j.value("inter_bs_distance", d.inter_bs_distance);
  p.uav_altitude = j.value("uav_altitude", d.uav_altitude);
  p.bandwidth = j.value("bandwidth", d.bandwidth);
  p.noise_psd = j.value("noise_psd", d.noise_psd);
  p.p_bs_max = j.value("p_bs_max", d.p_bs_max);
  p.p_ec_max = j.value("p_ec_max", d.p_ec_max);
  p.p_dev_max = j.value("p_dev_max", d.p_dev_max);
  p.f_cc_max = j.value("f_cc_max", d.f_cc_max);
  p.f_ec_max = j.value("f_ec_max", d.f_ec_max);
  p.task_cycles = j.value("task_cycles", d.task_cycles);
  p.data_bits = j.value("data_bits", d.data_bits);
  p.fronthaul_cap = j.value("fronthaul_cap", d.fronthaul_cap);
  p.cpu_coeff = j.value("cpu_coeff", d.cpu_coeff);
  p.cpu_exp = j.value("cpu_exp", d.cpu_exp);
  p.op_power = j.value("op_power", d.op_power);
  p.delay_budget = j.value("delay_budget", d.delay_budget);
  p.carrier_freq = j.value("carrier_freq", d.carrier_freq);
  p.conv_threshold = j.value("conv_threshold", d.conv_threshold);
  p.l1_delta = j.value("l1_delta", d.l1_delta);
  p.additional_fading = j.value("additional_fading", d.additional_fading);
  p.nu_grid = j.value("nu_grid", d.nu_grid);
  p.seed = j.value("seed", d.seed);
  p.num_drops = j.value("num_drops", d.num_drops);
}

namespace detail {

inline nlohmann::json cvec_to_json(const cvec& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back({v(i).real(), v(i).imag()});
  return arr;
}

inline cvec cvec_from_json(const nlohmann::json& arr) {
  cvec v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) v(i) = cplx(arr[i][0], arr[i][1]);
  return v;
}

}  // namespace detail

inline nlohmann::json scenario_to_json(const Scenario& sc) {
  nlohmann::json j;
  j["format"] = "conoma-scenario-v1";
  j["params"] = sc.params;
  j["sigma2"] = sc.sigma2;
  auto& t = j["topology"];
  for (const auto& p : sc.topology.bs_positions) t["bs_positions"].push_back({p.x(), p.y()});
  t["uav_positions"] = nlohmann::json::array();
  for (const auto& p : sc.topology.uav_positions) t["uav_positions"].push_back({p.x(), p.y(), p.z()});
  for (const auto& p : sc.topology.device_positions) t["device_positions"].push_back({p.x(), p.y()});
  t["pairing"] = sc.topology.pairing;
  t["is_strong"] = sc.topology.is_strong;
  t["platform_of"] = sc.topology.platform_of;
  auto& c = j["channels"];
  c["h_bs"] = nlohmann::json::array();
  for (const auto& per_bs : sc.channels.h_bs) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& v : per_bs) row.push_back(detail::cvec_to_json(v));
    c["h_bs"].push_back(row);
  }
  c["h_uav"] = nlohmann::json::array();
  for (const auto& per_uav : sc.channels.h_uav) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& v : per_uav) row.push_back(detail::cvec_to_json(v));
    c["h_uav"].push_back(row);
  }
  c["g_d2d"] = nlohmann::json::array();
  for (int s : sc.topology.strong_set)
    for (int w : sc.topology.weak_set)
      c["g_d2d"].push_back({s, w, sc.channels.g_d2d(s, w).real(), sc.channels.g_d2d(s, w).imag()});
  return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "conoma-scenario-v1")
    throw std::runtime_error("scenario_from_json: unknown format tag");
  Scenario sc;
  sc.params = j.at("params").get<NetworkParams>();
  sc.sigma2 = j.at("sigma2").get<double>();
  const auto& t = j.at("topology");
  for (const auto& p : t.at("bs_positions")) sc.topology.bs_positions.emplace_back(p[0], p[1]);
  for (const auto& p : t.at("uav_positions")) sc.topology.uav_positions.emplace_back(p[0], p[1], p[2]);
  for (const auto& p : t.at("device_positions")) sc.topology.device_positions.emplace_back(p[0], p[1]);
  t.at("pairing").get_to(sc.topology.pairing);
  t.at("is_strong").get_to(sc.topology.is_strong);
  t.at("platform_of").get_to(sc.topology.platform_of);
  const int K = sc.topology.num_devices();
  sc.topology.ec_sets.assign(sc.params.num_ec, {});
  for (int k = 0; k < K; ++k) {
    const int e = sc.topology.platform_of[k];
    if (e < 0)
      sc.topology.cc_set.push_back(k);
    else
      sc.topology.ec_sets[e].push_back(k);
    (sc.topology.is_strong[k] ? sc.topology.strong_set : sc.topology.weak_set).push_back(k);
  }
  const auto& c = j.at("channels");
  sc.channels.h_bs.assign(sc.params.num_bs, std::vector<cvec>(K));
  for (int b = 0; b < sc.params.num_bs; ++b)
    for (int k = 0; k < K; ++k) sc.channels.h_bs[b][k] = detail::cvec_from_json(c.at("h_bs")[b][k]);
  sc.channels.h_uav.assign(sc.params.num_ec, std::vector<cvec>(K));
  for (int e = 0; e < sc.params.num_ec; ++e)
    for (int k = 0; k < K; ++k)
      sc.channels.h_uav[e][k] = detail::cvec_from_json(c.at("h_uav")[e][k]);
  sc.channels.g_d2d = Eigen::MatrixXcd::Zero(K, K);
  for (const auto& entry : c.at("g_d2d"))
    sc.channels.g_d2d(entry[0].get<int>(), entry[1].get<int>()) =
        cplx(entry[2].get<double>(), entry[3].get<double>());
  detail::rebuild_aggregate(sc.channels, sc.params.num_bs, sc.params.num_ec, K,
                            sc.params.antennas_bs, sc.params.antennas_ec);
  return sc;
}

// Dotted-key config text, e.g. "network.num_devices = 8". Lines starting with
// '#' are comments. Unknown keys are rejected.
inline NetworkParams parse_config_text(std::istream& in) {
  nlohmann::json flat = nlohmann::json::object();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r\n");
      const auto b = s.find_last_not_of(" \t\r\n");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (const auto dot = key.rfind('.'); dot != std::string::npos) key = key.substr(dot + 1);
    if (key == "nu_grid") {
      std::vector<double> grid;
      std::stringstream ss(val);
      std::string tok;
      while (std::getline(ss, tok, ',')) grid.push_back(std::stod(tok));
      flat[key] = grid;
    } else {
      try {
        std::size_t pos = 0;
        const double num = std::stod(val, &pos);
        if (pos != val.size()) throw std::invalid_argument(val);
        flat[key] = num;
      } catch (const std::exception&) {
        throw std::runtime_error("config line " + std::to_string(lineno) + ": bad value '" + val + "'");
      }
    }
  }
  static const std::vector<std::string> known = {
      "num_bs", "num_ec", "num_devices", "antennas_bs", "antennas_ec", "inter_bs_distance",
      "uav_altitude", "bandwidth", "noise_psd", "p_bs_max", "p_ec_max", "p_dev_max",
      "f_cc_max", "f_ec_max", "task_cycles", "data_bits", "fronthaul_cap", "cpu_coeff",
      "cpu_exp", "op_power", "delay_budget", "carrier_freq", "conv_threshold", "l1_delta",
      "additional_fading", "nu_grid", "seed", "num_drops"};
  for (const auto& [k, v] : flat.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw std::runtime_error("config: unknown key '" + k + "'");
  NetworkParams params = flat.get<NetworkParams>();
  params.validate();
  return params;
}

inline Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file: " + path);
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
    nlohmann::json j;
    in >> j;
    return scenario_from_json(j);
  }
  return make_scenario(parse_config_text(in));
}

}  // namespace conoma
