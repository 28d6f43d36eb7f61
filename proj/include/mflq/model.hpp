#pragma once

#include "mflq/matkit.hpp"

#include <iosfwd>
#include <stdexcept>
#include <string>

namespace mflq {

using matkit::Matrix;
using matkit::Vector;

/// The eight constant matrices of the controlled mean-field SDE
///   dX = {A X + A_bar E[X] + B u + B_bar E[u]} dt
///      + {C X + C_bar E[X] + D u + D_bar E[u]} dW.
struct SystemMatrices {
  int n = 0;
  int m = 0;
  Matrix A, A_bar, B, B_bar, C, C_bar, D, D_bar;
};

/// Symmetric weights of the quadratic running cost
///   <Q X, X> + <Q_bar E[X], E[X]> + <R u, u> + <R_bar E[u], E[u]>.
struct CostWeights {
  Matrix Q, Q_bar, R, R_bar;
};

struct MfLqProblem {
  SystemMatrices system;
  CostWeights cost;
  Vector x0;
};

struct AssumptionReport {
  bool holds_J = false;        // Q, Q+Q_bar >= 0 and R, R+R_bar > 0
  bool holds_J_prime = false;  // additionally Q, Q+Q_bar > 0
  bool holds_S = false;        // ODE pair and SDE pair stabilizable
  double min_eig_Q = 0.0;
  double min_eig_QQbar = 0.0;
  double min_eig_R = 0.0;
  double min_eig_RRbar = 0.0;
  bool ode_pair_stabilizable = false;
  bool sde_pair_stabilizable = false;
  std::string notes;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace model {

/// Parses and validates a problem file (see docs/problem-format in README).
/// Symmetric weight matrices are replaced by (M + M^T)/2; relative
/// asymmetry beyond 1e-8 is a hard error.
MfLqProblem load_problem(std::istream& source);
MfLqProblem load_problem_string(const std::string& text);
MfLqProblem load_problem_file(const std::string& path);

/// Serializes back to the interchange JSON (17 significant digits).
std::string serialize(const MfLqProblem& p);

/// Decides the standing assumptions at the given eigenvalue tolerance:
/// lambda_min >= -tol for ">= 0" and lambda_min >= tol for "> 0".
/// The stabilizability sub-checks delegate to the stabilize module.
AssumptionReport check_assumptions(const MfLqProblem& p, double tol = 1e-9);

}  // namespace model
}  // namespace mflq
