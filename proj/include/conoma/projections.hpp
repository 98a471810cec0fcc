#pragma once

// Euclidean projections onto the supported cones and their duals. Zero,
// nonnegative and (rotated) second-order projections are closed-form; the
// exponential and power cones use safeguarded Newton / bisection on their
// boundary parametrizations. Dual projections go through the Moreau identity
// P_{K*}(v) = v + P_K(-v).

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "conoma/cone.hpp"

namespace conoma {

using VecRef = Eigen::Ref<Eigen::VectorXd>;

inline void project_soc(VecRef x) {
  const int n = static_cast<int>(x.size());
  const double t = x(0);
  const double nz = x.tail(n - 1).norm();
  if (nz <= t) return;
  if (nz <= -t) {
    x.setZero();
    return;
  }
  const double scale = 0.5 * (1.0 + t / nz);
  x(0) = scale * nz;
  x.tail(n - 1) *= scale;
}

// {(x0,x1,z): 2 x0 x1 >= ||z||^2, x0,x1 >= 0}; rotate into a plain SOC.
inline void project_rsoc(VecRef x) {
  const double invr2 = 1.0 / std::sqrt(2.0);
  const double u = (x(0) + x(1)) * invr2;
  const double w = (x(0) - x(1)) * invr2;
  x(0) = u;
  x(1) = w;
  project_soc(x);
  const double pu = x(0), pw = x(1);
  x(0) = (pu + pw) * invr2;
  x(1) = (pu - pw) * invr2;
}

namespace detail {

// K_exp = cl{(r,s,t): s e^{r/s} <= t, s > 0}.
inline bool in_exp_cone(double r, double s, double t, double tol) {
  if (s > 0.0) return s * std::exp(r / s) <= t * (1.0 + tol) + tol;
  return s >= -tol && r <= tol && t >= -tol;
}

// K_exp^* = cl{(u,v,w): -u e^{v/u} <= e w, u < 0} (plus the u = 0 face).
inline bool in_exp_dual(double u, double v, double w, double tol) {
  if (u < 0.0) return -u * std::exp(v / u) <= std::exp(1.0) * w * (1.0 + tol) + tol;
  return u <= tol && v >= -tol && w >= -tol;
}

}  // namespace detail

// Projection of an exterior point onto the exponential cone. The curved part
// of the boundary is the union of rays through w(rho) = (rho, 1, e^rho); a
// coarse scan over rho seeds a damped Newton polish on the squared distance to
// the surface (x1, x2, x2 e^{x1/x2}). The flat face {x1 <= 0, x2 = 0, x3 >= 0}
// is handled as a separate candidate.
inline void project_exp(VecRef x) {
  const double r0 = x(0), s0 = x(1), t0 = x(2);
  const double tol = 1e-12;
  if (detail::in_exp_cone(r0, s0, t0, tol)) return;
  if (detail::in_exp_dual(-r0, -s0, -t0, tol)) {  // polar cone: projection is 0
    x.setZero();
    return;
  }
  if (r0 <= 0.0 && s0 <= 0.0) {
    x(1) = 0.0;
    x(2) = std::max(t0, 0.0);
    return;
  }
  auto fval = [&](double a, double b) {
    const double q = a / b;
    if (q > 500.0) return std::numeric_limits<double>::infinity();
    const double e = b * std::exp(q);
    return 0.5 * ((a - r0) * (a - r0) + (b - s0) * (b - s0) + (e - t0) * (e - t0));
  };
  // Seed: nearest point over boundary rays w(rho) = (rho, 1, e^rho).
  double x1 = r0, x2 = std::max(s0, 1.0);
  double fbest = std::numeric_limits<double>::infinity();
  double rho_best = 0.0;
  auto try_rho = [&](double rho) {
    const double er = std::exp(std::min(rho, 350.0));
    const double wn2 = rho * rho + 1.0 + er * er;
    const double lam = std::max((r0 * rho + s0 + t0 * er) / wn2, 1e-12);
    const double f = fval(lam * rho, lam);
    if (f < fbest) {
      fbest = f;
      rho_best = rho;
      x1 = lam * rho;
      x2 = lam;
    }
  };
  for (int i = 0; i <= 80; ++i) try_rho(-40.0 + i);
  // With t0 < 0 the ray inner product r0*rho + s0 + t0*e^rho is concave in
  // rho and its positive window can fall between grid points; seed its peak.
  if (r0 > 0.0 && t0 < 0.0) try_rho(std::log(r0 / -t0));
  const double rho_center = rho_best;
  for (int i = 0; i <= 40; ++i) try_rho(rho_center - 1.0 + 0.05 * i);
  double f = fval(x1, x2);
  for (int it = 0; it < 200; ++it) {
    const double E = std::exp(std::min(x1 / x2, 500.0));
    const double u = x2 * E - t0;
    const double g1 = (x1 - r0) + u * E;
    const double g2 = (x2 - s0) + u * E * (1.0 - x1 / x2);
    if (std::abs(g1) + std::abs(g2) < 1e-13 * (1.0 + std::abs(u))) break;
    double h11 = 1.0 + E * E + u * E / x2;
    double h12 = E * E * (1.0 - x1 / x2) - u * E * x1 / (x2 * x2);
    double h22 = 1.0 + E * E * (1.0 - x1 / x2) * (1.0 - x1 / x2) +
                 u * E * x1 * x1 / (x2 * x2 * x2);
    // Levenberg damping until the step decreases the objective.
    double mu = 0.0;
    bool accepted = false;
    for (int tries = 0; tries < 40 && !accepted; ++tries) {
      const double a11 = h11 + mu, a22 = h22 + mu;
      const double det = a11 * a22 - h12 * h12;
      if (det > 1e-300 && a11 > 0.0) {
        const double d1 = (a22 * g1 - h12 * g2) / det;
        const double d2 = (a11 * g2 - h12 * g1) / det;
        double step = 1.0;
        if (d2 > 0.0) step = std::min(1.0, 0.5 * (x2 - 1e-13) / d2);  // keep x2 > 0
        const double n1 = x1 - step * d1, n2 = x2 - step * d2;
        const double fn = fval(n1, n2);
        if (fn <= f) {
          x1 = n1;
          x2 = n2;
          f = fn;
          accepted = true;
        }
      }
      mu = (mu == 0.0) ? 1e-8 : mu * 10.0;
    }
    if (!accepted) break;
  }
  // Flat-face candidate (only reachable when r0 <= 0 here).
  const double fr = r0 <= 0.0 ? 0.5 * (s0 * s0 + std::min(t0, 0.0) * std::min(t0, 0.0))
                              : std::numeric_limits<double>::infinity();
  if (fr < f) {
    x(1) = 0.0;
    x(2) = std::max(t0, 0.0);
    return;
  }
  x(0) = x1;
  x(1) = x2;
  x(2) = x2 * std::exp(std::min(x1 / x2, 500.0));
}

// P_alpha = {(x,y,z): x^alpha y^(1-alpha) >= |z|, x,y >= 0}. Bisection on
// r = |z| of the projection; the first two coordinates then follow in closed
// form from the KKT conditions.
inline void project_power(VecRef v, double alpha) {
  const double x0 = v(0), y0 = v(1), z0 = v(2);
  const double az = std::abs(z0);
  const double tol = 1e-12;
  if (x0 >= 0.0 && y0 >= 0.0 &&
      std::pow(x0, alpha) * std::pow(y0, 1.0 - alpha) >= az * (1.0 - tol) - tol)
    return;
  // Polar: -v in the dual cone {(u,v,w): (u/alpha)^alpha (v/(1-alpha))^(1-alpha) >= |w|}.
  if (x0 <= 0.0 && y0 <= 0.0 &&
      std::pow(-x0 / alpha, alpha) * std::pow(-y0 / (1.0 - alpha), 1.0 - alpha) >=
          az * (1.0 + tol) - tol) {
    v.setZero();
    return;
  }
  if (az <= tol) {
    v(0) = std::max(x0, 0.0);
    v(1) = std::max(y0, 0.0);
    v(2) = 0.0;
    return;
  }
  auto xr = [&](double r) { return 0.5 * (x0 + std::sqrt(x0 * x0 + 4.0 * alpha * r * (az - r))); };
  auto yr = [&](double r) {
    return 0.5 * (y0 + std::sqrt(y0 * y0 + 4.0 * (1.0 - alpha) * r * (az - r)));
  };
  auto phi = [&](double r) { return std::pow(xr(r), alpha) * std::pow(yr(r), 1.0 - alpha) - r; };
  double lo = 0.0, hi = az;
  for (int it = 0; it < 120; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (phi(mid) > 0.0) lo = mid;
    else hi = mid;
  }
  const double r = 0.5 * (lo + hi);
  v(0) = xr(r);
  v(1) = yr(r);
  v(2) = (z0 >= 0.0 ? r : -r);
}

inline void project_primal(Cone cone, double alpha, VecRef x) {
  switch (cone) {
    case Cone::Zero: x.setZero(); break;
    case Cone::NonNeg: x = x.cwiseMax(0.0); break;
    case Cone::Soc: project_soc(x); break;
    case Cone::RotatedSoc: project_rsoc(x); break;
    case Cone::Exp: project_exp(x); break;
    case Cone::Power: project_power(x, alpha); break;
  }
}

// P_{K*}(v) = v + P_K(-v).
inline void project_dual(Cone cone, double alpha, VecRef x) {
  if (cone == Cone::Zero) return;  // dual of {0} is everything
  if (cone == Cone::NonNeg || cone == Cone::Soc || cone == Cone::RotatedSoc) {
    project_primal(cone, alpha, x);  // self-dual
    return;
  }
  Eigen::VectorXd neg = -x;
  project_primal(cone, alpha, neg);
  x += neg;
}

inline void project_cones(const std::vector<ConeBlock>& blocks, VecRef x, bool dual) {
  for (const auto& blk : blocks) {
    auto seg = x.segment(blk.offset, blk.dim);
    if (dual) project_dual(blk.cone, blk.alpha, seg);
    else project_primal(blk.cone, blk.alpha, seg);
  }
}

}  // namespace conoma
