#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>

namespace mflq::matkit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Force exact symmetry: returns (M + M^T)/2.
Matrix symmetrize(const Matrix& m);

struct EigResult {
  Vector eigenvalues;   // ascending
  Matrix eigenvectors;  // columns, orthonormal
};

struct PsdVerdict {
  bool is_psd = false;
  bool is_pd = false;
  double lambda_min = 0.0;
  Vector witness;  // eigenvector attaining lambda_min
};

struct PinvResult {
  Matrix pinv;
  Eigen::Index rank = 0;
};

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
/// Throws std::runtime_error if the solver fails to converge.
EigResult eig_sym(const Matrix& m);

/// PSD test with witness, at the given tolerance on lambda_min.
PsdVerdict psd_verdict(const Matrix& m, double tol = 1e-9);

/// Verdict on the block matrix [[M, N], [N^T, R]].
/// Nonsingular R goes through the Schur complement M - N R^-1 N^T;
/// singular R uses the extended criterion with the pseudoinverse
/// (M - N R^+ N^T >= 0, R >= 0, N(I - R R^+) = 0).
PsdVerdict schur_psd(const Matrix& m, const Matrix& n, const Matrix& r,
                     double tol = 1e-9);

/// Moore-Penrose inverse via SVD. Singular values below
/// sigma_max * max(rows, cols) * 1e-12 count as zero.
PinvResult pinv(const Matrix& m);

/// Solves P A + A^T P + C^T P C + Q = 0 for symmetric P through the
/// n^2 x n^2 Kronecker system. Throws SingularLyapunovError when the
/// operator has no unique solution.
struct SingularLyapunovError : std::runtime_error {
  SingularLyapunovError() : std::runtime_error("Lyapunov operator is singular") {}
};

Matrix solve_lyapunov_linear(const Matrix& a, const Matrix& c, const Matrix& q);

/// Residual ||P A + A^T P + C^T P C + Q||_F of a candidate solution.
double lyapunov_residual(const Matrix& a, const Matrix& c, const Matrix& q,
                         const Matrix& p);

/// Real parts of the spectrum of a general square matrix; max Re(lambda).
double spectral_abscissa(const Matrix& m);

/// Hautus test: [A; B] stabilizable iff rank [A - lambda I, B] = n for
/// every eigenvalue lambda with Re(lambda) >= -tol.
bool ode_pair_stabilizable(const Matrix& a, const Matrix& b, double tol = 1e-9);

}  // namespace mflq::matkit
