#include "mflq/matkit.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>

namespace mflq::matkit {

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

EigResult eig_sym(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("eig_sym: eigensolver did not converge");
  }
  return {es.eigenvalues(), es.eigenvectors()};
}

PsdVerdict psd_verdict(const Matrix& m, double tol) {
  EigResult e = eig_sym(m);
  PsdVerdict v;
  v.lambda_min = e.eigenvalues(0);
  v.witness = e.eigenvectors.col(0);
  v.is_psd = v.lambda_min >= -tol;
  v.is_pd = v.lambda_min > tol;
  return v;
}

PsdVerdict schur_psd(const Matrix& m, const Matrix& n, const Matrix& r,
                     double tol) {
  const Eigen::Index p = m.rows();
  const Eigen::Index q = r.rows();
  Matrix block(p + q, p + q);
  block.topLeftCorner(p, p) = symmetrize(m);
  block.topRightCorner(p, q) = n;
  block.bottomLeftCorner(q, p) = n.transpose();
  block.bottomRightCorner(q, q) = symmetrize(r);

  PsdVerdict block_v = psd_verdict(block, tol);

  PsdVerdict r_v = psd_verdict(r, tol);
  if (r_v.is_pd) {
    Matrix complement = m - n * r.ldlt().solve(n.transpose());
    PsdVerdict cv = psd_verdict(symmetrize(complement), tol);
    block_v.is_psd = cv.is_psd;
    block_v.is_pd = cv.is_pd && block_v.lambda_min > tol;
  } else {
    // Extended criterion for singular R.
    PinvResult rp = pinv(r);
    Matrix complement = m - n * rp.pinv * n.transpose();
    const double range_resid =
        (n * (Matrix::Identity(q, q) - r * rp.pinv)).norm();
    PsdVerdict cv = psd_verdict(symmetrize(complement), tol);
    bool ok = cv.is_psd && r_v.is_psd && range_resid <= tol * (1.0 + n.norm());
    block_v.is_psd = ok;
    block_v.is_pd = false;
  }
  return block_v;
}

PinvResult pinv(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double cutoff =
      (s.size() > 0 ? s(0) : 0.0) * static_cast<double>(std::max(m.rows(), m.cols())) * 1e-12;
  Vector inv = Vector::Zero(s.size());
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff && s(i) > 0.0) {
      inv(i) = 1.0 / s(i);
      ++rank;
    }
  }
  PinvResult out;
  out.pinv = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  out.rank = rank;
  return out;
}

Matrix solve_lyapunov_linear(const Matrix& a, const Matrix& c, const Matrix& q) {
  const Eigen::Index n = a.rows();
  const Eigen::Index n2 = n * n;
  // vec(P A + A^T P + C^T P C) = (A^T (x) I + I (x) A^T + C^T (x) C^T) vec(P)
  Matrix op = Matrix::Zero(n2, n2);
  Matrix at = a.transpose();
  Matrix ct = c.transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index k = 0; k < n; ++k) {
        for (Eigen::Index l = 0; l < n; ++l) {
          // row index (i, j) of result, column index (k, l) of vec(P)
          double v = 0.0;
          if (i == k) v += a(l, j);          // (P A)_{ij} depends on P_{il} A_{lj}
          if (j == l) v += at(i, k);         // (A^T P)_{ij} = A_{ki} P_{kj}
          v += ct(i, k) * c(l, j);           // (C^T P C)_{ij}
          op(i + n * j, k + n * l) += v;
        }
      }
    }
  }
  Eigen::FullPivLU<Matrix> lu(op);
  if (!lu.isInvertible()) {
    throw SingularLyapunovError();
  }
  Vector rhs = Vector::Zero(n2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) rhs(i + n * j) = -q(i, j);
  Vector x = lu.solve(rhs);
  Matrix p(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) p(i, j) = x(i + n * j);
  return symmetrize(p);
}

double lyapunov_residual(const Matrix& a, const Matrix& c, const Matrix& q,
                         const Matrix& p) {
  return (p * a + a.transpose() * p + c.transpose() * p * c + q).norm();
}

double spectral_abscissa(const Matrix& m) {
  Eigen::EigenSolver<Matrix> es(m, /*computeEigenvectors=*/false);
  return es.eigenvalues().real().maxCoeff();
}

bool ode_pair_stabilizable(const Matrix& a, const Matrix& b, double tol) {
  const Eigen::Index n = a.rows();
  Eigen::EigenSolver<Matrix> es(a, /*computeEigenvectors=*/false);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::complex<double> lambda = es.eigenvalues()(i);
    if (lambda.real() < -tol) continue;
    Eigen::MatrixXcd pencil(n, n + b.cols());
    pencil.leftCols(n) =
        a.cast<std::complex<double>>() - lambda * Eigen::MatrixXcd::Identity(n, n);
    pencil.rightCols(b.cols()) = b.cast<std::complex<double>>();
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(pencil);
    const auto& s = svd.singularValues();
    if (s(n - 1) <= s(0) * static_cast<double>(n) * 1e-10) return false;
  }
  return true;
}

}  // namespace mflq::matkit
