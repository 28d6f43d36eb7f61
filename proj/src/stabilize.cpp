#include "mflq/stabilize.hpp"

#include <Eigen/LU>

#include <cmath>
#include <limits>

namespace mflq::stabilize {

namespace {

using sdp::LmiBlock;
using sdp::RectVarMap;
using sdp::SymVarMap;

struct StageResult {
  bool feasible = false;
  double margin = 0.0;
  Matrix X;  // symmetric certificate, normalized to unit Frobenius norm
  Matrix Y;
  Matrix gain;  // Y X^{-1}
};

/// Feasibility of  Sym(Am X + Bm Y) < 0,  X > 0  (the mean inequality and
/// every classic pole-placement LMI share this shape).
StageResult solve_mean_stage(const Matrix& am, const Matrix& bm,
                             const sdp::SolverOptions& opts) {
  const int n = static_cast<int>(am.rows());
  const int m = static_cast<int>(bm.cols());
  SymVarMap xv(n, 0);
  RectVarMap yv(m, n, xv.count());
  const int nvars = xv.count() + yv.count();

  LmiBlock decay;  // -Sym(Am X + Bm Y) >= t I
  decay.order = n;
  decay.F0 = Matrix::Zero(n, n);
  decay.Fi.resize(nvars);
  LmiBlock pos;  // X >= t I
  pos.order = n;
  pos.F0 = Matrix::Zero(n, n);
  pos.Fi.resize(nvars);
  for (int k = 0; k < xv.count(); ++k) {
    Matrix e = xv.basis(k);
    decay.Fi[xv.offset() + k] = -(am * e + e * am.transpose());
    pos.Fi[xv.offset() + k] = e;
  }
  for (int k = 0; k < yv.count(); ++k) {
    Matrix e = yv.basis(k);
    decay.Fi[yv.offset() + k] = -(bm * e + e.transpose() * bm.transpose());
  }

  sdp::FeasibilityResult fr =
      sdp::check_strict_feasibility({decay, pos}, nvars, opts);
  StageResult out;
  out.margin = fr.margin;
  out.feasible = fr.feasible;
  if (out.feasible) {
    Matrix x = xv.unpack(fr.x);
    Matrix y = yv.unpack(fr.x);
    const double scale = x.norm();
    out.X = x / scale;
    out.Y = y / scale;
    out.gain = out.X.ldlt().solve(out.Y.transpose()).transpose();
  }
  return out;
}

/// Feasibility of the centered block inequality with a fixed PSD forcing
/// term T (zero for the classic pair):
///   [[ Sym(A X + B Y) + T,  C X + D Y ], [ ., -X ]] < 0,  X > 0.
StageResult solve_centered_stage(const Matrix& a, const Matrix& b,
                                 const Matrix& c, const Matrix& d,
                                 const Matrix& t_force,
                                 const sdp::SolverOptions& opts) {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(b.cols());
  SymVarMap xv(n, 0);
  RectVarMap yv(m, n, xv.count());
  const int nvars = xv.count() + yv.count();

  LmiBlock big;  // negation of the block above, Schur-expanded to order 2n
  big.order = 2 * n;
  big.F0 = Matrix::Zero(2 * n, 2 * n);
  big.F0.topLeftCorner(n, n) = -t_force;
  big.Fi.resize(nvars);
  LmiBlock pos;
  pos.order = n;
  pos.F0 = Matrix::Zero(n, n);
  pos.Fi.resize(nvars);
  for (int k = 0; k < xv.count(); ++k) {
    Matrix e = xv.basis(k);
    Matrix f = Matrix::Zero(2 * n, 2 * n);
    f.topLeftCorner(n, n) = -(a * e + e * a.transpose());
    f.topRightCorner(n, n) = c * e;
    f.bottomLeftCorner(n, n) = e * c.transpose();
    f.bottomRightCorner(n, n) = e;
    big.Fi[xv.offset() + k] = f;
    pos.Fi[xv.offset() + k] = e;
  }
  for (int k = 0; k < yv.count(); ++k) {
    Matrix e = yv.basis(k);
    Matrix f = Matrix::Zero(2 * n, 2 * n);
    f.topLeftCorner(n, n) = -(b * e + e.transpose() * b.transpose());
    f.topRightCorner(n, n) = d * e;
    f.bottomLeftCorner(n, n) = e.transpose() * d.transpose();
    big.Fi[yv.offset() + k] = f;
  }

  sdp::FeasibilityResult fr =
      sdp::check_strict_feasibility({big, pos}, nvars, opts);
  StageResult out;
  out.margin = fr.margin;
  out.feasible = fr.feasible;
  if (out.feasible) {
    Matrix x = xv.unpack(fr.x);
    Matrix y = yv.unpack(fr.x);
    out.X = x;
    out.Y = y;
    out.gain = x.ldlt().solve(y.transpose()).transpose();
  }
  return out;
}

/// Exact single-gain (K = K_bar) analysis in dimension one: quantifier
/// elimination over k for
///   a+abar+(b+bbar)k < 0  and
///   (2(a+bk)+(c+dk)^2 < 0  or  c+cbar+(d+dbar)k = 0).
Verdict scalar_single_gain(const SystemMatrices& s) {
  const double a = s.A(0, 0), ab = s.A_bar(0, 0), b = s.B(0, 0),
               bb = s.B_bar(0, 0), c = s.C(0, 0), cb = s.C_bar(0, 0),
               d = s.D(0, 0), db = s.D_bar(0, 0);
  const double inf = std::numeric_limits<double>::infinity();

  // mean interval M = {k : a+ab+(b+bb)k < 0}
  double mlo = -inf, mhi = inf;
  bool mean_empty = false;
  const double bsum = b + bb;
  if (bsum > 0.0) {
    mhi = -(a + ab) / bsum;
  } else if (bsum < 0.0) {
    mlo = -(a + ab) / bsum;
  } else if (!(a + ab < 0.0)) {
    mean_empty = true;
  }
  if (mean_empty) return Verdict::no;

  // variance interval V = {k : d^2 k^2 + 2(b+cd)k + (2a+c^2) < 0}
  double vlo = inf, vhi = -inf;
  bool v_all = false;
  if (d != 0.0) {
    const double half_lin = b + c * d;
    const double disc = half_lin * half_lin - d * d * (2.0 * a + c * c);
    if (disc > 0.0) {
      const double root = std::sqrt(disc);
      vlo = (-half_lin - root) / (d * d);
      vhi = (-half_lin + root) / (d * d);
    }
  } else if (b != 0.0) {
    const double edge = -(2.0 * a + c * c) / (2.0 * b);
    if (b > 0.0) {
      vlo = -inf;
      vhi = edge;
    } else {
      vlo = edge;
      vhi = inf;
    }
  } else if (2.0 * a + c * c < 0.0) {
    v_all = true;
  }
  if (v_all || (std::max(mlo, vlo) < std::min(mhi, vhi))) return Verdict::yes;

  // freeze set Z = {k : c+cbar+(d+dbar)k = 0}
  const double dsum = d + db;
  if (dsum != 0.0) {
    const double kz = -(c + cb) / dsum;
    if (mlo < kz && kz < mhi) return Verdict::yes;
  } else if (c + cb == 0.0) {
    return Verdict::yes;  // M is nonempty here
  }
  return Verdict::no;
}

CostWeights identity_weights(int n, int m) {
  CostWeights w;
  w.Q = Matrix::Identity(n, n);
  w.Q_bar = Matrix::Zero(n, n);
  w.R = Matrix::Identity(m, m);
  w.R_bar = Matrix::Zero(m, m);
  return w;
}

}  // namespace

bool verify_stabilizer(const SystemMatrices& sys, const CostWeights& /*cost*/,
                       const StabilizerGains& g) {
  const Matrix mean_cl =
      sys.A + sys.A_bar + (sys.B + sys.B_bar) * g.K_bar;
  if (!(matkit::spectral_abscissa(mean_cl) < 0.0)) return false;

  // coupled Lyapunov pair with identity forcing
  Matrix xbar;
  try {
    xbar = matkit::solve_lyapunov_linear(
        mean_cl.transpose(), Matrix::Zero(sys.n, sys.n),
        Matrix::Identity(sys.n, sys.n));
  } catch (const matkit::SingularLyapunovError&) {
    return false;
  }
  if (!matkit::psd_verdict(xbar).is_pd) return false;

  const Matrix g_hat = sys.C + sys.C_bar + (sys.D + sys.D_bar) * g.K_bar;
  const Matrix a_cl = sys.A + sys.B * g.K;
  const Matrix c_cl = sys.C + sys.D * g.K;
  Matrix x;
  try {
    x = matkit::solve_lyapunov_linear(
        a_cl, c_cl,
        g_hat.transpose() * xbar * g_hat + Matrix::Identity(sys.n, sys.n));
  } catch (const matkit::SingularLyapunovError&) {
    return false;
  }
  return matkit::psd_verdict(x).is_pd;
}

StabilizabilityReport check_mf_stabilizable(const SystemMatrices& sys,
                                            const sdp::SolverOptions& opts) {
  StabilizabilityReport rep;
  const Matrix am = sys.A + sys.A_bar;
  const Matrix bm = sys.B + sys.B_bar;

  if (!matkit::ode_pair_stabilizable(am, bm)) {
    rep.mf_l2_stabilizable = Verdict::no;
    rep.l2_stabilizable = Verdict::no;
    rep.criteria_fired.push_back("mean-pair-necessity-refuted");
    return rep;
  }

  StageResult mean = solve_mean_stage(am, bm, opts);
  if (!mean.feasible) {
    rep.mf_l2_stabilizable = Verdict::unknown;
    rep.criteria_fired.push_back("mean-stage-lmi-inconclusive");
  } else {
    const Matrix kbar = mean.gain;
    const Matrix g_hat = sys.C + sys.C_bar + (sys.D + sys.D_bar) * kbar;
    const Matrix t_force = g_hat * mean.X * g_hat.transpose();
    StageResult centered =
        solve_centered_stage(sys.A, sys.B, sys.C, sys.D, t_force, opts);
    if (!centered.feasible) {
      rep.mf_l2_stabilizable = Verdict::unknown;
      rep.criteria_fired.push_back("centered-stage-lmi-inconclusive");
    } else {
      StabilizerGains g{centered.gain, kbar, "lmi"};
      CostWeights w = identity_weights(sys.n, sys.m);
      if (verify_stabilizer(sys, w, g)) {
        rep.mf_l2_stabilizable = Verdict::yes;
        rep.gains = g;
        rep.lmi_witness = LmiWitness{centered.X, mean.X, centered.Y, mean.Y};
        rep.criteria_fired.push_back("two-stage-lmi");
        rep.criteria_fired.push_back("closed-loop-lyapunov-verified");
      } else {
        rep.mf_l2_stabilizable = Verdict::unknown;
        rep.criteria_fired.push_back("closed-loop-verification-failed");
      }
    }
  }

  // single-gain notion
  if (sys.n == 1) {
    rep.l2_stabilizable = scalar_single_gain(sys);
    rep.criteria_fired.push_back("scalar-single-gain-exact");
  } else {
    rep.l2_stabilizable = Verdict::unknown;
    CostWeights w = identity_weights(sys.n, sys.m);
    std::vector<Matrix> candidates;
    if (mean.feasible) candidates.push_back(mean.gain);
    if (rep.gains) candidates.push_back(rep.gains->K);
    for (const Matrix& k : candidates) {
      if (verify_stabilizer(sys, w, {k, k, "lmi"})) {
        rep.l2_stabilizable = Verdict::yes;
        rep.criteria_fired.push_back("single-gain-candidate-verified");
        break;
      }
    }
  }
  return rep;
}

std::optional<StabilizerGains> pseudoinverse_stabilizer(
    const SystemMatrices& sys, const sdp::SolverOptions& opts) {
  const Matrix dsum = sys.D + sys.D_bar;
  const Matrix csum = sys.C + sys.C_bar;
  matkit::PinvResult dp = matkit::pinv(dsum);

  const Matrix range_resid =
      (Matrix::Identity(sys.n, sys.n) - dsum * dp.pinv) * csum;
  if (range_resid.norm() > 1e-8 * (1.0 + csum.norm())) {
    return std::nullopt;  // R(C+C_bar) not inside R(D+D_bar)
  }

  const Matrix base = -dp.pinv * csum;
  const Matrix freedom = Matrix::Identity(sys.m, sys.m) - dp.pinv * dsum;
  const Matrix am = sys.A + sys.A_bar;
  const Matrix bm = sys.B + sys.B_bar;
  const Matrix a_ode = am + bm * base;
  const Matrix b_ode = bm * freedom;

  Matrix ktilde = Matrix::Zero(sys.m, sys.n);
  if (!(matkit::spectral_abscissa(a_ode) < 0.0)) {
    StageResult place = solve_mean_stage(a_ode, b_ode, opts);
    if (!place.feasible) return std::nullopt;
    ktilde = place.gain;
  }
  const Matrix kbar = base + freedom * ktilde;

  std::optional<Matrix> k = sde_pair_gain(sys, opts);
  if (!k) return std::nullopt;
  return StabilizerGains{*k, kbar, "pseudoinverse"};
}

bool sde_pair_l2_stabilizable(const SystemMatrices& sys,
                              const sdp::SolverOptions& opts) {
  return solve_centered_stage(sys.A, sys.B, sys.C, sys.D,
                              Matrix::Zero(sys.n, sys.n), opts)
      .feasible;
}

std::optional<Matrix> sde_pair_gain(const SystemMatrices& sys,
                                    const sdp::SolverOptions& opts) {
  StageResult r = solve_centered_stage(sys.A, sys.B, sys.C, sys.D,
                                       Matrix::Zero(sys.n, sys.n), opts);
  if (!r.feasible) return std::nullopt;
  return r.gain;
}

}  // namespace mflq::stabilize
