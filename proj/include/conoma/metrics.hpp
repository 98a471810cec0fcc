#pragma once

// Reported metrics: sum log-rate (natural log, rates in Mbit/s), Jain's
// fairness index, and the per-device delay breakdown summary.

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "conoma/phy.hpp"

namespace conoma {

// sum_k ln(r_k / 1 Mbit/s); requires strictly positive rates.
inline double log_rate(const Eigen::VectorXd& rates_bits) {
  double acc = 0.0;
  for (int k = 0; k < rates_bits.size(); ++k) {
    if (rates_bits(k) <= 0.0) throw std::invalid_argument("log_rate: rates must be positive");
    acc += std::log(rates_bits(k) / 1e6);
  }
  return acc;
}

inline double log_rate(const ResourceState& st) { return log_rate(st.r); }

// (sum r)^2 / (K sum r^2), in [1/K, 1] when at least one rate is positive.
inline double jain_index(const Eigen::VectorXd& rates) {
  const double sum = rates.sum();
  const double sq = rates.squaredNorm();
  if (sq <= 0.0) throw std::invalid_argument("jain_index: rates must not be all zero");
  return sum * sum / (static_cast<double>(rates.size()) * sq);
}

inline double jain_index(const ResourceState& st) { return jain_index(st.r); }

struct DelayReport {
  std::vector<DelayBreakdown> per_device;
  double avg_computation = 0.0;
  double avg_fronthaul = 0.0;
  double avg_transmission = 0.0;
  double avg_total = 0.0;
  double worst_total = 0.0;
  int worst_device = -1;
};

inline DelayReport delay_report(const ResourceState& st, const Scenario& sc,
                                const Eigen::MatrixXi& links) {
  DelayReport rep;
  rep.per_device = delay(st, sc, links);
  const int K = static_cast<int>(rep.per_device.size());
  for (int k = 0; k < K; ++k) {
    const auto& d = rep.per_device[k];
    rep.avg_computation += d.computation / K;
    rep.avg_fronthaul += d.fronthaul / K;
    rep.avg_transmission += d.transmission / K;
    rep.avg_total += d.total / K;
    if (d.total > rep.worst_total) {
      rep.worst_total = d.total;
      rep.worst_device = k;
    }
  }
  return rep;
}

}  // namespace conoma
