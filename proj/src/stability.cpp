#include "mflq/stability.hpp"

#include "mflq/rng.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <sstream>

namespace mflq::stability {

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::yes: return "true";
    case Verdict::no: return "false";
    case Verdict::unknown: return "unknown";
  }
  return "?";
}

LyapunovSolution solve_lyapunov(const Matrix& a, const Matrix& c,
                                const Matrix& q) {
  LyapunovSolution out;
  try {
    out.P = matkit::solve_lyapunov_linear(a, c, q);
  } catch (const matkit::SingularLyapunovError&) {
    out.singular_operator = true;
    return out;
  }
  out.residual_norm = matkit::lyapunov_residual(a, c, q, out.P);
  out.psd = matkit::psd_verdict(out.P).is_psd;
  return out;
}

McLyapunov lyapunov_mc_oracle(const Matrix& a, const Matrix& c, const Matrix& q,
                              const sim::SimConfig& cfg) {
  const int n = static_cast<int>(a.rows());
  const long long steps = std::llround(cfg.horizon / cfg.dt);
  const double sqdt = std::sqrt(cfg.dt);

  McLyapunov out;
  Matrix sum = Matrix::Zero(n, n);
  Matrix sum2 = Matrix::Zero(n, n);
  const Matrix id = Matrix::Identity(n, n);

  for (long long path = 0; path < cfg.paths; ++path) {
    Matrix f = id;
    Matrix acc = Matrix::Zero(n, n);
    for (long long k = 0;; ++k) {
      const double w = (k == 0 || k == steps) ? 0.5 : 1.0;
      acc += w * cfg.dt * (f.transpose() * q * f);
      if (k == steps) break;
      const double dw = sqdt * rng::standard_normal(cfg.seed, path, k);
      f += a * f * cfg.dt + c * f * dw;
      if (f.squaredNorm() > 1e24) {
        out.divergent = true;
        return out;
      }
    }
    sum += acc;
    sum2 += acc.cwiseProduct(acc);
  }
  const double np = static_cast<double>(cfg.paths);
  out.estimate = sum / np;
  Matrix var = sum2 / np - out.estimate.cwiseProduct(out.estimate);
  out.std_error = (var.cwiseMax(0.0) / np).cwiseSqrt();
  return out;
}

bool weighted_mean_integrable(const Matrix& m, const Matrix& g, double tol) {
  const int n = static_cast<int>(m.rows());
  if (g.norm() <= tol) return true;
  // unobservable subspace of (M, G): kernel of the stacked observability map
  Matrix obs(n * n, n);
  Matrix gm = g;
  for (int i = 0; i < n; ++i) {
    obs.middleRows(i * n, n) = gm;
    gm = gm * m;
  }
  Eigen::JacobiSVD<Matrix> svd(obs, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const double cutoff = s(0) * static_cast<double>(n) * tol;
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > cutoff) ++rank;
  if (rank == 0) return true;
  // restriction of M to the observable complement must be Hurwitz
  Matrix basis = svd.matrixV().leftCols(rank);  // observable directions
  // The unobservable subspace is M-invariant, so the observable quotient
  // dynamics is basis^T M basis up to similarity.
  Matrix mq = basis.transpose() * m * basis;
  return matkit::spectral_abscissa(mq) < -tol;
}

StabilityVerdict classify(const Matrix& a, const Matrix& a_bar, const Matrix& c,
                          const Matrix& c_bar, const Matrix& q,
                          const Matrix& q_bar, double tol) {
  StabilityVerdict v;
  std::ostringstream ev;
  const Matrix mean_matrix = a + a_bar;
  const Matrix csum = c + c_bar;
  const double abscissa = matkit::spectral_abscissa(mean_matrix);
  ev << "Re lambda_max(A+A_bar) = " << abscissa << "; ";

  const bool j_holds = matkit::eig_sym(q).eigenvalues(0) >= -tol &&
                       matkit::eig_sym(q + q_bar).eigenvalues(0) >= -tol;

  if (abscissa >= -tol) {
    // necessity: an L2-asymptotically stable system needs a stable mean
    v.exp_stable = Verdict::no;
    v.globally_integrable = Verdict::no;
    v.asymptotically_stable = Verdict::no;
    ev << "mean matrix not Hurwitz, unweighted notions refuted; ";
  } else {
    // sufficiency: stable mean plus either an integrable [A, C] part or a
    // vanishing C + C_bar
    LyapunovSolution lyap = solve_lyapunov(a, c, Matrix::Identity(a.rows(), a.cols()));
    const bool ac_integrable =
        !lyap.singular_operator && lyap.psd &&
        matkit::psd_verdict(lyap.P).is_pd;
    if (csum.norm() <= tol) {
      v.exp_stable = Verdict::yes;
      ev << "C+C_bar = 0 branch; ";
    } else if (ac_integrable) {
      v.exp_stable = Verdict::yes;
      ev << "[A,C] L2-globally integrable (Lyapunov witness); ";
    }
    if (v.exp_stable == Verdict::yes) {
      v.globally_integrable = Verdict::yes;
      v.asymptotically_stable = Verdict::yes;
    } else {
      ev << "no exponential-stability criterion fired; ";
    }
  }

  // weighted integrability via the mean-square-integrability criterion
  if (!j_holds) {
    v.qq_integrable = Verdict::unknown;
    ev << "(J) fails, weighted notion undecided; ";
  } else if (v.globally_integrable == Verdict::yes) {
    v.qq_integrable = Verdict::yes;  // (ii) implies (iv) under (J)
  } else {
    Matrix gsum = q + q_bar;
    matkit::EigResult eg = matkit::eig_sym(gsum);
    Matrix sqrt_g = eg.eigenvectors *
                    eg.eigenvalues.array().max(0.0).sqrt().matrix().asDiagonal() *
                    eg.eigenvectors.transpose();
    if (!weighted_mean_integrable(mean_matrix, sqrt_g, tol)) {
      v.qq_integrable = Verdict::no;
      ev << "(Q+Q_bar)^{1/2} e^{(A+A_bar)t} not square-integrable; ";
    } else {
      bool null_condition = true;
      // N(Q+Q_bar) inside N(C+C_bar): check C+C_bar kills the kernel
      for (Eigen::Index i = 0; i < eg.eigenvalues.size(); ++i) {
        if (eg.eigenvalues(i) <= tol) {
          if ((csum * eg.eigenvectors.col(i)).norm() > tol) {
            null_condition = false;
          }
        }
      }
      LyapunovSolution lq = solve_lyapunov(a, c, q);
      const bool ac_q_integrable = !lq.singular_operator && lq.psd;
      if (csum.norm() <= tol || (ac_q_integrable && null_condition)) {
        v.qq_integrable = Verdict::yes;
        ev << "weighted integrability certified; ";
      } else {
        v.qq_integrable = Verdict::unknown;
        ev << "weighted integrability undecided; ";
      }
    }
  }

  v.evidence = ev.str();
  return v;
}

bool scalar_criterion(const ScalarSystem& s, double tol) {
  const bool mean_ok = s.a + s.a_bar < 0.0;
  const bool var_ok = 2.0 * s.a + s.c * s.c < 0.0;
  const bool csum_zero = tol > 0.0 ? std::abs(s.c + s.c_bar) <= tol
                                   : s.c + s.c_bar == 0.0;
  return mean_ok && (var_ok || csum_zero);
}

double scalar_second_moment(const ScalarSystem& s, double x0, double t) {
  const double mean_rate = 2.0 * (s.a + s.a_bar);
  const double var_rate = 2.0 * s.a + s.c * s.c;
  const double csum = s.c + s.c_bar;
  const double lead = x0 * x0 * std::exp(mean_rate * t);
  if (csum == 0.0) return lead;
  // integral_0^t e^{var_rate (t-s)} e^{mean_rate s} ds
  double integral;
  const double diff = mean_rate - var_rate;
  if (std::abs(diff) < 1e-12) {
    integral = t * std::exp(var_rate * t);
  } else {
    integral = (std::exp(mean_rate * t) - std::exp(var_rate * t)) / diff;
  }
  return lead + csum * csum * x0 * x0 * integral;
}

}  // namespace mflq::stability
