#include "mflq/riccati.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <cmath>
#include <sstream>

namespace mflq::riccati {

namespace {

Matrix solve_pd(const Matrix& s, const Matrix& rhs) {
  Eigen::LDLT<Matrix> ldlt(s);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw SingularInnerMatrix();
  }
  return ldlt.solve(rhs);
}

void check_symmetry(const Matrix& m, const char* what) {
  if ((m - m.transpose()).norm() > 1e-10 * (1.0 + m.norm())) {
    throw std::logic_error(std::string(what) + ": lost symmetry");
  }
}

struct SummedSystem {
  Matrix A, B, C, D, Q, R;
};

SummedSystem summed(const SystemMatrices& sys, const CostWeights& cost) {
  return {sys.A + sys.A_bar, sys.B + sys.B_bar, sys.C + sys.C_bar,
          sys.D + sys.D_bar, cost.Q + cost.Q_bar, cost.R + cost.R_bar};
}

}  // namespace

Matrix riccati_expr(const SystemMatrices& sys, const CostWeights& cost,
                    const Matrix& P) {
  const Matrix inner = cost.R + sys.D.transpose() * P * sys.D;
  const Matrix cross = sys.B.transpose() * P + sys.D.transpose() * P * sys.C;
  Matrix r = P * sys.A + sys.A.transpose() * P +
             sys.C.transpose() * P * sys.C + cost.Q -
             cross.transpose() * solve_pd(inner, cross);
  r = matkit::symmetrize(r);
  check_symmetry(r, "riccati_expr");
  return r;
}

Matrix riccati_bar_expr(const SystemMatrices& sys, const CostWeights& cost,
                        const Matrix& P, const Matrix& Pi) {
  const SummedSystem s = summed(sys, cost);
  const Matrix inner = s.R + s.D.transpose() * P * s.D;
  const Matrix cross = s.B.transpose() * Pi + s.D.transpose() * P * s.C;
  Matrix r = Pi * s.A + s.A.transpose() * Pi + s.C.transpose() * P * s.C +
             s.Q - cross.transpose() * solve_pd(inner, cross);
  r = matkit::symmetrize(r);
  check_symmetry(r, "riccati_bar_expr");
  return r;
}

AreResiduals are_residuals(const SystemMatrices& sys, const CostWeights& cost,
                           const Matrix& P, const Matrix& Pi) {
  const SummedSystem s = summed(sys, cost);
  AreResiduals res;
  res.r_inner_min_eig =
      matkit::eig_sym(cost.R + sys.D.transpose() * P * sys.D).eigenvalues(0);
  res.rbar_inner_min_eig =
      matkit::eig_sym(s.R + s.D.transpose() * P * s.D).eigenvalues(0);
  if (res.r_inner_min_eig <= 1e-12 || res.rbar_inner_min_eig <= 1e-12) {
    throw SingularInnerMatrix();
  }
  res.r_norm = riccati_expr(sys, cost, P).norm();
  res.rbar_norm = riccati_bar_expr(sys, cost, P, Pi).norm();
  return res;
}

std::pair<Matrix, Matrix> gains(const SystemMatrices& sys,
                                const CostWeights& cost, const Matrix& P,
                                const Matrix& Pi) {
  const SummedSystem s = summed(sys, cost);
  const Matrix inner = cost.R + sys.D.transpose() * P * sys.D;
  const Matrix inner_bar = s.R + s.D.transpose() * P * s.D;
  Matrix gamma =
      -solve_pd(inner, sys.B.transpose() * P + sys.D.transpose() * P * sys.C);
  Matrix gamma_bar =
      -solve_pd(inner_bar, s.B.transpose() * Pi + s.D.transpose() * P * s.C);
  return {gamma, gamma_bar};
}

namespace {

/// Newton iteration on a symmetric-matrix residual map, finite-difference
/// Jacobian in the scaled upper-triangle coordinates.
template <typename Map>
int newton_polish(Matrix& P, Map&& residual_map, int max_steps) {
  const int n = static_cast<int>(P.rows());
  sdp::SymVarMap vm(n, 0);
  const int nv = vm.count();
  int used = 0;
  for (int step = 0; step < max_steps; ++step) {
    Matrix r0;
    try {
      r0 = residual_map(P);
    } catch (const SingularInnerMatrix&) {
      return used;
    }
    const double norm0 = r0.norm();
    if (norm0 <= 1e-13 * (1.0 + P.norm())) break;
    Vector g(nv);
    vm.pack(r0, g);

    const double h = 1e-6 * (1.0 + P.norm());
    Matrix jac(nv, nv);
    for (int k = 0; k < nv; ++k) {
      Matrix pk = P + h * vm.basis(k);
      Matrix rk;
      try {
        rk = residual_map(pk);
      } catch (const SingularInnerMatrix&) {
        rk = r0;  // direction unusable; zero column keeps Newton damped
      }
      Vector col(nv);
      vm.pack((rk - r0) / h, col);
      jac.col(k) = col;
    }
    Eigen::FullPivLU<Matrix> lu(jac);
    Vector dx = lu.solve(-g);
    Vector px(nv);
    vm.pack(P, px);

    double alpha = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 30; ++ls) {
      Vector xn = px + alpha * dx;
      Matrix pn = vm.unpack(xn);
      try {
        if (residual_map(pn).norm() < (1.0 - 1e-4 * alpha) * norm0) {
          P = pn;
          moved = true;
          break;
        }
      } catch (const SingularInnerMatrix&) {
      }
      alpha *= 0.5;
    }
    ++used;
    if (!moved) break;
  }
  return used;
}

struct AreBlocks {
  sdp::SdpProblem problem;
  sdp::SymVarMap pv;
  sdp::SymVarMap piv;
};

AreBlocks build_are_sdp(const SystemMatrices& sys, const CostWeights& cost,
                        double epsilon,
                        const std::optional<std::pair<Matrix, Matrix>>& anchor) {
  const int n = sys.n;
  const int m = sys.m;
  const SummedSystem s = summed(sys, cost);
  const Matrix q_eff = cost.Q + epsilon * Matrix::Identity(n, n);
  const Matrix q_sum_eff = s.Q + 2.0 * epsilon * Matrix::Identity(n, n);

  AreBlocks out{{}, sdp::SymVarMap(n, 0), sdp::SymVarMap(n, n * (n + 1) / 2)};
  sdp::SdpProblem& pr = out.problem;
  pr.num_vars = out.pv.count() + out.piv.count();
  pr.c = Vector::Zero(pr.num_vars);
  out.pv.add_trace_objective(pr.c, -1.0);   // maximize Tr(P) + Tr(Pi)
  out.piv.add_trace_objective(pr.c, -1.0);

  sdp::LmiBlock lb;  // [[PA + A^T P + C^T P C + Q, PB + C^T P D], [., R + D^T P D]]
  lb.order = n + m;
  lb.F0 = Matrix::Zero(n + m, n + m);
  lb.F0.topLeftCorner(n, n) = q_eff;
  lb.F0.bottomRightCorner(m, m) = cost.R;
  lb.Fi.resize(pr.num_vars);
  for (int k = 0; k < out.pv.count(); ++k) {
    Matrix e = out.pv.basis(k);
    Matrix f = Matrix::Zero(n + m, n + m);
    f.topLeftCorner(n, n) =
        e * sys.A + sys.A.transpose() * e + sys.C.transpose() * e * sys.C;
    f.topRightCorner(n, m) = e * sys.B + sys.C.transpose() * e * sys.D;
    f.bottomLeftCorner(m, n) = f.topRightCorner(n, m).transpose();
    f.bottomRightCorner(m, m) = sys.D.transpose() * e * sys.D;
    lb.Fi[out.pv.offset() + k] = f;
  }
  pr.blocks.push_back(std::move(lb));

  sdp::LmiBlock lbb;  // barred companion in (P, Pi)
  lbb.order = n + m;
  lbb.F0 = Matrix::Zero(n + m, n + m);
  lbb.F0.topLeftCorner(n, n) = q_sum_eff;
  lbb.F0.bottomRightCorner(m, m) = s.R;
  lbb.Fi.resize(pr.num_vars);
  for (int k = 0; k < out.pv.count(); ++k) {
    Matrix e = out.pv.basis(k);
    Matrix f = Matrix::Zero(n + m, n + m);
    f.topLeftCorner(n, n) = s.C.transpose() * e * s.C;
    f.topRightCorner(n, m) = s.C.transpose() * e * s.D;
    f.bottomLeftCorner(m, n) = f.topRightCorner(n, m).transpose();
    f.bottomRightCorner(m, m) = s.D.transpose() * e * s.D;
    lbb.Fi[out.pv.offset() + k] = f;
  }
  for (int k = 0; k < out.piv.count(); ++k) {
    Matrix e = out.piv.basis(k);
    Matrix f = Matrix::Zero(n + m, n + m);
    f.topLeftCorner(n, n) = e * s.A + s.A.transpose() * e;
    f.topRightCorner(n, m) = e * s.B;
    f.bottomLeftCorner(m, n) = f.topRightCorner(n, m).transpose();
    lbb.Fi[out.piv.offset() + k] = f;
  }
  pr.blocks.push_back(std::move(lbb));

  if (anchor) {
    sdp::LmiBlock ap;  // P - P0 >= 0
    ap.order = n;
    ap.F0 = -anchor->first;
    ap.Fi.resize(pr.num_vars);
    for (int k = 0; k < out.pv.count(); ++k)
      ap.Fi[out.pv.offset() + k] = out.pv.basis(k);
    pr.blocks.push_back(std::move(ap));
    sdp::LmiBlock api;  // Pi - Pi0 >= 0
    api.order = n;
    api.F0 = -anchor->second;
    api.Fi.resize(pr.num_vars);
    for (int k = 0; k < out.piv.count(); ++k)
      api.Fi[out.piv.offset() + k] = out.piv.basis(k);
    pr.blocks.push_back(std::move(api));
  }
  return out;
}

}  // namespace

AreSolution solve_are_sdp(const SystemMatrices& sys, const CostWeights& cost,
                          const SdpMethodOptions& opts,
                          SdpArtifacts* artifacts) {
  const int n = sys.n;
  const SummedSystem s = summed(sys, cost);

  if (opts.anchor) {
    // anchor must itself satisfy the relaxed inequalities
    Matrix r0 = riccati_expr(sys, cost, opts.anchor->first);
    Matrix rb0 =
        riccati_bar_expr(sys, cost, opts.anchor->first, opts.anchor->second);
    if (!matkit::psd_verdict(r0, 1e-7).is_psd ||
        !matkit::psd_verdict(rb0, 1e-7).is_psd) {
      throw std::invalid_argument(
          "solve_are_sdp: anchor does not satisfy the Riccati inequalities");
    }
  } else {
    const double tol = 1e-9;
    if (matkit::eig_sym(cost.Q).eigenvalues(0) < -tol ||
        matkit::eig_sym(s.Q).eigenvalues(0) < -tol ||
        matkit::eig_sym(cost.R).eigenvalues(0) < tol ||
        matkit::eig_sym(s.R).eigenvalues(0) < tol) {
      throw std::invalid_argument(
          "solve_are_sdp: weights violate the sign assumptions and no anchor "
          "was given");
    }
  }

  std::vector<double> ladder;
  if (opts.epsilon > 0.0) {
    ladder = {opts.epsilon};
  } else {
    ladder = {0.0, 1e-6, 1e-4, 1e-2};
  }

  const double q_scale = 1.0 + cost.Q.norm();
  const double q_sum_scale = 1.0 + s.Q.norm();

  AreSolution best;
  bool have_candidate = false;
  std::ostringstream attempts;

  for (double gap_factor : {1.0, 0.01}) {
    for (double eps : ladder) {
      AreBlocks ab = build_are_sdp(sys, cost, eps, opts.anchor);
      sdp::SolverOptions sopts = opts.sdp;
      sopts.gap_tol *= gap_factor;
      sdp::SdpSolution raw = sdp::solve(ab.problem, sopts);
      attempts << "eps=" << eps << " status=" << sdp::to_string(raw.status)
               << "; ";
      if (raw.status != sdp::SolveStatus::optimal &&
          raw.status != sdp::SolveStatus::weakly_feasible) {
        continue;
      }
      Matrix p = ab.pv.unpack(raw.x);
      Matrix pi = ab.piv.unpack(raw.x);

      AreSolution cand;
      cand.method = "sdp";
      cand.anchor = opts.anchor;
      cand.epsilon_used = eps;
      cand.sdp_gap = raw.duality_gap;
      if (artifacts && !have_candidate) {
        artifacts->raw = raw;
        artifacts->P = p;
        artifacts->Pi = pi;
        artifacts->anchored = opts.anchor.has_value();
        if (opts.anchor) {
          artifacts->P0 = opts.anchor->first;
          artifacts->Pi0 = opts.anchor->second;
        }
      }

      // polish on the unshifted residual maps
      int steps = newton_polish(
          p, [&](const Matrix& x) { return riccati_expr(sys, cost, x); },
          opts.polish_steps);
      steps += newton_polish(
          pi,
          [&](const Matrix& x) { return riccati_bar_expr(sys, cost, p, x); },
          opts.polish_steps);
      cand.polish_steps_used = steps;
      cand.P = matkit::symmetrize(p);
      cand.Pi = matkit::symmetrize(pi);
      try {
        cand.residuals = are_residuals(sys, cost, cand.P, cand.Pi);
      } catch (const SingularInnerMatrix&) {
        continue;
      }
      if (artifacts && !have_candidate) have_candidate = true;

      if (cand.residuals.r_norm <= opts.residual_tol * q_scale &&
          cand.residuals.rbar_norm <= opts.residual_tol * q_sum_scale) {
        auto [gamma, gamma_bar] = gains(sys, cost, cand.P, cand.Pi);
        cand.Gamma = gamma;
        cand.Gamma_bar = gamma_bar;
        return cand;
      }
      if (!have_candidate || best.P.size() == 0 ||
          cand.residuals.r_norm + cand.residuals.rbar_norm <
              best.residuals.r_norm + best.residuals.rbar_norm) {
        best = cand;
      }
    }
  }
  throw ResidualCheckFailed(
      "solve_are_sdp: residual tolerance not reached (attempts: " +
      attempts.str() + ")");
}

std::pair<AreSolution, RiccatiOdeTrace> solve_are_ode(
    const SystemMatrices& sys, const CostWeights& cost,
    const OdeMethodOptions& opts) {
  const int n = sys.n;
  const SummedSystem s = summed(sys, cost);
  const double tol = 1e-9;
  if (matkit::eig_sym(cost.Q).eigenvalues(0) < -tol ||
      matkit::eig_sym(s.Q).eigenvalues(0) < -tol ||
      matkit::eig_sym(cost.R).eigenvalues(0) < tol ||
      matkit::eig_sym(s.R).eigenvalues(0) < tol) {
    throw std::invalid_argument(
        "solve_are_ode: the monotone-limit construction needs the sign "
        "assumptions on the weights");
  }

  Matrix p = Matrix::Zero(n, n);
  Matrix pi = Matrix::Zero(n, n);
  RiccatiOdeTrace trace;
  trace.times.push_back(0.0);
  trace.P_path.push_back(p);
  trace.Pi_path.push_back(pi);

  auto rhs = [&](const Matrix& pc, const Matrix& pic, Matrix& dp, Matrix& dpi) {
    dp = riccati_expr(sys, cost, pc);
    dpi = riccati_bar_expr(sys, cost, pc, pic);
  };

  const double dt = opts.dt;
  const long long steps_per_unit = std::llround(1.0 / dt);
  Matrix p_prev_unit = p, pi_prev_unit = pi;
  Matrix k1p(n, n), k1q(n, n), k2p(n, n), k2q(n, n), k3p(n, n), k3q(n, n),
      k4p(n, n), k4q(n, n);

  double t = 0.0;
  std::optional<double> converged_at;
  while (t < opts.t_max - 0.5 * dt) {
    for (long long i = 0; i < steps_per_unit; ++i) {
      rhs(p, pi, k1p, k1q);
      rhs(p + 0.5 * dt * k1p, pi + 0.5 * dt * k1q, k2p, k2q);
      rhs(p + 0.5 * dt * k2p, pi + 0.5 * dt * k2q, k3p, k3q);
      rhs(p + dt * k3p, pi + dt * k3q, k4p, k4q);
      p += dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
      pi += dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
      p = matkit::symmetrize(p);
      pi = matkit::symmetrize(pi);
      if (p.norm() > 1e12 || pi.norm() > 1e12) {
        throw OdeDidNotConverge("solve_are_ode: blow-up guard tripped");
      }
    }
    t += 1.0;
    trace.times.push_back(t);
    trace.P_path.push_back(p);
    trace.Pi_path.push_back(pi);
    const double delta =
        (p - p_prev_unit).norm() + (pi - pi_prev_unit).norm();
    p_prev_unit = p;
    pi_prev_unit = pi;
    if (delta <= opts.conv_tol) {
      converged_at = t;
      break;
    }
  }
  if (!converged_at) {
    throw OdeDidNotConverge(
        "solve_are_ode: no convergence by t_max; the system may fail the "
        "stabilizability assumptions or the cap is too small");
  }
  trace.converged_at = converged_at;

  AreSolution sol;
  sol.method = "ode";
  sol.P = p;
  sol.Pi = pi;
  sol.residuals = are_residuals(sys, cost, p, pi);
  const double q_scale = 1.0 + cost.Q.norm();
  const double q_sum_scale = 1.0 + s.Q.norm();
  if (sol.residuals.r_norm > opts.residual_tol * q_scale ||
      sol.residuals.rbar_norm > opts.residual_tol * q_sum_scale) {
    throw ResidualCheckFailed("solve_are_ode: converged point fails the residual check");
  }
  auto [gamma, gamma_bar] = gains(sys, cost, p, pi);
  sol.Gamma = gamma;
  sol.Gamma_bar = gamma_bar;
  return {sol, trace};
}

double dual_residuals(const SystemMatrices& sys, const CostWeights& cost,
                      const SdpArtifacts& artifacts) {
  const int n = sys.n;
  const int m = sys.m;
  const SummedSystem s = summed(sys, cost);
  const auto& Z = artifacts.raw.dual_Z;
  if (Z.size() < 2) {
    throw std::invalid_argument("dual_residuals: solution carries no dual");
  }
  const Matrix S = Z[0].topLeftCorner(n, n);
  const Matrix U = Z[0].bottomLeftCorner(m, n);
  const Matrix V = Z[0].bottomRightCorner(m, m);
  const Matrix Sb = Z[1].topLeftCorner(n, n);
  const Matrix Ub = Z[1].bottomLeftCorner(m, n);
  const Matrix Vb = Z[1].bottomRightCorner(m, m);
  const Matrix id = Matrix::Identity(n, n);

  Matrix eq1 = sys.A * S + S * sys.A.transpose() + sys.B * U +
               U.transpose() * sys.B.transpose() +
               sys.C * S * sys.C.transpose() + sys.D * U * sys.C.transpose() +
               sys.C * U.transpose() * sys.D.transpose() +
               sys.D * V * sys.D.transpose() + s.C * Sb * s.C.transpose() +
               s.D * Ub * s.C.transpose() +
               s.C * Ub.transpose() * s.D.transpose() +
               s.D * Vb * s.D.transpose() + id;
  Matrix eq2 = s.A * Sb + Sb * s.A.transpose() + s.B * Ub +
               Ub.transpose() * s.B.transpose() + id;
  if (artifacts.anchored && Z.size() >= 4) {
    eq1 += Z[2];
    eq2 += Z[3];
  }

  const Matrix& P = artifacts.P;
  const Matrix& Pi = artifacts.Pi;
  Matrix cs1 = (sys.A.transpose() * P + P * sys.A +
                sys.C.transpose() * P * sys.C + cost.Q) *
                   S +
               (P * sys.B + sys.C.transpose() * P * sys.D) * U;
  Matrix cs2 = (Pi * s.A + s.A.transpose() * Pi +
                s.C.transpose() * P * s.C + s.Q) *
                   Sb +
               (Pi * s.B + s.C.transpose() * P * s.D) * Ub;

  return std::max(std::max(eq1.norm(), eq2.norm()),
                  std::max(cs1.norm(), cs2.norm()));
}

}  // namespace mflq::riccati
