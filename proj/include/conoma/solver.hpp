#pragma once

// First-order conic solver: ADMM on the homogeneous self-dual embedding of
//
//   min c'x  s.t.  Ax + s = b,  s in K,
//
// with Ruiz-style equilibration, over-relaxation and a cached sparse LDLT of
// the quasi-definite KKT system. Self-dual embedding means infeasibility and
// unboundedness come out as certificates rather than failures, which the
// SCA outer loop relies on for its restoration step.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "conoma/cone.hpp"
#include "conoma/projections.hpp"

namespace conoma {

enum class SolveStatus { Optimal, MaxIters, PrimalInfeasible, DualInfeasible };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::MaxIters: return "max_iters";
    case SolveStatus::PrimalInfeasible: return "primal_infeasible";
    default: return "dual_infeasible";
  }
}

struct SolverSettings {
  double eps = 1e-6;          // relative primal/dual residual and gap target
  double eps_infeas = 1e-7;   // normalized certificate residual threshold
  int max_iters = 100000;
  double relax_alpha = 1.5;   // over-relaxation
  int check_interval = 25;
  double static_reg = 1e-8;   // quasi-definite regularization of the KKT matrix
  int ruiz_iters = 10;
  bool use_warm_start = true;
};

struct Solution {
  SolveStatus status = SolveStatus::MaxIters;
  Eigen::VectorXd x, y, s;
  double obj = 0.0;                 // c'x of the canonical minimization
  double reported_objective = 0.0;  // source-problem sense and constant applied
  int iterations = 0;
  // Infinity until a candidate solution has actually been evaluated: a
  // max-iters exit with a collapsed iterate (tau ~ 0) must not look converged.
  double primal_res = std::numeric_limits<double>::infinity();
  double dual_res = std::numeric_limits<double>::infinity();
  double gap = std::numeric_limits<double>::infinity();
};

class ConicSolver {
 public:
  Solution solve(const ConeProgram& prog, const SolverSettings& st = {},
                 const Solution* warm = nullptr) {
    prog.finalize();
    const int m = prog.rows();
    const int n = prog.num_vars;
    if (static_cast<int>(prog.c.size()) != n)
      throw std::invalid_argument("ConicSolver: objective size mismatch");

    Eigen::SparseMatrix<double> A = prog.matrix();
    A.makeCompressed();
    const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(prog.b.data(), m);
    const Eigen::VectorXd& c = prog.c;

    // --- equilibration -----------------------------------------------------
    // Row scaling is kept uniform inside each non-polyhedral cone block so
    // that membership is preserved.
    std::vector<int> row_group(m);
    int groups = 0;
    for (const auto& blk : prog.blocks) {
      const bool per_row = blk.cone == Cone::Zero || blk.cone == Cone::NonNeg;
      if (per_row) {
        for (int i = 0; i < blk.dim; ++i) row_group[blk.offset + i] = groups++;
      } else {
        for (int i = 0; i < blk.dim; ++i) row_group[blk.offset + i] = groups;
        ++groups;
      }
    }
    Eigen::VectorXd d = Eigen::VectorXd::Ones(m);
    Eigen::VectorXd e = Eigen::VectorXd::Ones(n);
    Eigen::SparseMatrix<double> As = A;
    Eigen::VectorXd gmax(groups), cmax(n);
    for (int pass = 0; pass < st.ruiz_iters; ++pass) {
      gmax.setZero();
      for (int j = 0; j < As.outerSize(); ++j)
        for (Eigen::SparseMatrix<double>::InnerIterator it(As, j); it; ++it) {
          double& g = gmax(row_group[it.row()]);
          g = std::max(g, std::abs(it.value()));
        }
      Eigen::VectorXd rs(m);
      for (int i = 0; i < m; ++i) {
        const double g = gmax(row_group[i]);
        rs(i) = g > 1e-10 ? 1.0 / std::sqrt(g) : 1.0;
      }
      cmax.setZero();
      for (int j = 0; j < As.outerSize(); ++j)
        for (Eigen::SparseMatrix<double>::InnerIterator it(As, j); it; ++it) {
          it.valueRef() *= rs(it.row());
          cmax(j) = std::max(cmax(j), std::abs(it.value()));
        }
      d.array() *= rs.array();
      for (int j = 0; j < As.outerSize(); ++j) {
        const double cs = cmax(j) > 1e-10 ? 1.0 / std::sqrt(cmax(j)) : 1.0;
        for (Eigen::SparseMatrix<double>::InnerIterator it(As, j); it; ++it) it.valueRef() *= cs;
        e(j) *= cs;
      }
    }
    Eigen::VectorXd bs = d.cwiseProduct(b);
    Eigen::VectorXd cs = e.cwiseProduct(c);
    auto scalar_scale = [](const Eigen::VectorXd& v) {
      const double nrm = v.lpNorm<Eigen::Infinity>();
      if (nrm < 1e-12) return 1.0;
      return std::min(1e8, std::max(1e-8, 1.0 / nrm));
    };
    const double sb = scalar_scale(bs);
    const double sc = scalar_scale(cs);
    bs *= sb;
    cs *= sc;

    // --- KKT factorization -------------------------------------------------
    factorize(As, n, m, st.static_reg);

    Eigen::VectorXd g = kkt_solve(cs, bs, As, n, m);
    const double gden = 1.0 + cs.dot(g.head(n)) + bs.dot(g.tail(m));

    // --- iterate -----------------------------------------------------------
    // Douglas-Rachford on 0 in Qu + N_C(u): a fixed point has u in C and
    // Qu = w - u in C*, which is the self-dual embedding.
    const int N = n + m + 1;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(N);
    if (warm && st.use_warm_start && warm->x.size() == n && warm->y.size() == m &&
        warm->s.size() == m) {
      w.head(n) = sb * warm->x.cwiseQuotient(e);
      w.segment(n, m) = sc * warm->y.cwiseQuotient(d) + sb * d.cwiseProduct(warm->s);
      w(N - 1) = 1.0;
    } else {
      w(N - 1) = 1.0;
    }

    Solution sol;
    Eigen::VectorXd u(N), v(N), ut(N);
    for (int iter = 1; iter <= st.max_iters; ++iter) {
      Eigen::VectorXd p = kkt_solve(w.head(n), w.segment(n, m), As, n, m);
      const double tau = (w(N - 1) + cs.dot(p.head(n)) + bs.dot(p.tail(m))) / gden;
      ut.head(N - 1) = p - tau * g;
      ut(N - 1) = tau;
      u = 2.0 * ut - w;  // reflect, then project onto C = R^n x K^* x R_+
      {
        auto yseg = u.segment(n, m);
        project_cones(prog.blocks, yseg, /*dual=*/true);
      }
      u(N - 1) = std::max(u(N - 1), 0.0);
      w += st.relax_alpha * (u - ut);
      v = w - u;

      if (iter % st.check_interval != 0 && iter != st.max_iters) continue;
      sol.iterations = iter;
      const double utau = u(N - 1);
      if (utau > 1e-12) {
        sol.x = e.cwiseProduct(u.head(n)) / (sb * utau);
        sol.y = d.cwiseProduct(u.segment(n, m)) / (sc * utau);
        sol.s = v.segment(n, m).cwiseQuotient(d) / (sb * utau);
        const double ctx = c.dot(sol.x);
        const double bty = b.dot(sol.y);
        sol.primal_res = (A * sol.x + sol.s - b).norm() / (1.0 + b.norm());
        sol.dual_res = (A.transpose() * sol.y + c).norm() / (1.0 + c.norm());
        sol.gap = std::abs(ctx + bty) / (1.0 + std::abs(ctx) + std::abs(bty));
        if (sol.primal_res < st.eps && sol.dual_res < st.eps && sol.gap < st.eps) {
          sol.status = SolveStatus::Optimal;
          finish(sol, prog);
          return sol;
        }
      }
      // Certificates (normalized directions, independent of tau).
      {
        const Eigen::VectorXd xd = e.cwiseProduct(u.head(n)) / sb;
        const Eigen::VectorXd sd = v.segment(n, m).cwiseQuotient(d) / sb;
        const double ctx = c.dot(xd);
        if (ctx < -1e-12 && (A * xd + sd).norm() / (-ctx) < st.eps_infeas) {
          sol.status = SolveStatus::DualInfeasible;
          sol.x = xd / (-ctx);
          sol.s = sd / (-ctx);
          sol.y = Eigen::VectorXd::Zero(m);
          finish(sol, prog);
          return sol;
        }
        const Eigen::VectorXd yd = d.cwiseProduct(u.segment(n, m)) / sc;
        const double bty = b.dot(yd);
        if (bty < -1e-12 && (A.transpose() * yd).norm() / (-bty) < st.eps_infeas) {
          sol.status = SolveStatus::PrimalInfeasible;
          sol.y = yd / (-bty);
          sol.x = Eigen::VectorXd::Zero(n);
          sol.s = Eigen::VectorXd::Zero(m);
          finish(sol, prog);
          return sol;
        }
      }
    }
    sol.status = SolveStatus::MaxIters;
    if (sol.x.size() != n) {
      sol.x = Eigen::VectorXd::Zero(n);
      sol.y = Eigen::VectorXd::Zero(m);
      sol.s = Eigen::VectorXd::Zero(m);
    }
    finish(sol, prog);
    return sol;
  }

 private:
  static void finish(Solution& sol, const ConeProgram& prog) {
    sol.obj = sol.x.size() == prog.c.size() ? prog.c.dot(sol.x) : 0.0;
    sol.reported_objective = (prog.maximize ? -sol.obj : sol.obj) + prog.objective_constant;
  }

  // Factor [[ (1+reg)I, A' ], [ A, -(1+reg)I ]]; quasi-definite, so the
  // pivot-free LDLT exists. The symbolic analysis is reused when the sparsity
  // pattern of A is unchanged (successive SCA subproblems).
  void factorize(const Eigen::SparseMatrix<double>& As, int n, int m, double reg) {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(As.nonZeros() * 2 + n + m);
    for (int i = 0; i < n; ++i) trips.emplace_back(i, i, 1.0 + reg);
    for (int i = 0; i < m; ++i) trips.emplace_back(n + i, n + i, -(1.0 + reg));
    for (int j = 0; j < As.outerSize(); ++j)
      for (Eigen::SparseMatrix<double>::InnerIterator it(As, j); it; ++it) {
        trips.emplace_back(n + it.row(), j, it.value());
        trips.emplace_back(j, n + it.row(), it.value());
      }
    Eigen::SparseMatrix<double> K(n + m, n + m);
    K.setFromTriplets(trips.begin(), trips.end());
    K.makeCompressed();

    std::vector<int> pattern(K.innerIndexPtr(), K.innerIndexPtr() + K.nonZeros());
    pattern.insert(pattern.end(), K.outerIndexPtr(), K.outerIndexPtr() + K.outerSize() + 1);
    if (!analyzed_ || pattern != pattern_) {
      ldlt_.analyzePattern(K);
      pattern_ = std::move(pattern);
      analyzed_ = true;
    }
    ldlt_.factorize(K);
    if (ldlt_.info() != Eigen::Success)
      throw std::runtime_error("ConicSolver: KKT factorization failed");
    A_ = As;
    n_ = n;
    m_ = m;
  }

  // Solve [[I, A'],[-A, I]] z = (r1, r2) via the symmetric system
  // [[I, A'],[A, -I]] (z1, z2) = (r1, -r2), with one refinement step against
  // the unregularized matrix.
  Eigen::VectorXd kkt_solve(const Eigen::Ref<const Eigen::VectorXd>& r1,
                            const Eigen::Ref<const Eigen::VectorXd>& r2,
                            const Eigen::SparseMatrix<double>& As, int n, int m) {
    Eigen::VectorXd rhs(n + m);
    rhs.head(n) = r1;
    rhs.tail(m) = -r2;
    Eigen::VectorXd sol = ldlt_.solve(rhs);
    Eigen::VectorXd resid(n + m);
    resid.head(n) = rhs.head(n) - sol.head(n) - As.transpose() * sol.tail(m);
    resid.tail(m) = rhs.tail(m) - As * sol.head(n) + sol.tail(m);
    sol += ldlt_.solve(resid);
    return sol;
  }

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  Eigen::SparseMatrix<double> A_;
  std::vector<int> pattern_;
  bool analyzed_ = false;
  int n_ = 0, m_ = 0;
};

inline Solution solve_cone_program(const ConeProgram& prog, const SolverSettings& st = {}) {
  ConicSolver solver;
  return solver.solve(prog, st);
}

}  // namespace conoma
