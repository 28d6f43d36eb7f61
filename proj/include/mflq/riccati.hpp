#pragma once

#include "mflq/model.hpp"
#include "mflq/sdp.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace mflq::riccati {

struct AreResiduals {
  double r_norm = 0.0;               // ||R(P)||_F
  double rbar_norm = 0.0;            // ||Rbar(P, Pi)||_F
  double r_inner_min_eig = 0.0;      // lambda_min(R + D^T P D)
  double rbar_inner_min_eig = 0.0;   // lambda_min(R+Rbar+(D+Dbar)^T P (D+Dbar))
};

struct AreSolution {
  Matrix P, Pi;
  Matrix Gamma, Gamma_bar;
  AreResiduals residuals;
  std::string method;  // "sdp" or "ode"
  std::optional<std::pair<Matrix, Matrix>> anchor;
  double epsilon_used = 0.0;
  double sdp_gap = 0.0;
  int polish_steps_used = 0;
};

struct RiccatiOdeTrace {
  std::vector<double> times;       // coarse snapshots, one per unit time
  std::vector<Matrix> P_path;
  std::vector<Matrix> Pi_path;
  std::optional<double> converged_at;
};

struct SingularInnerMatrix : std::runtime_error {
  SingularInnerMatrix()
      : std::runtime_error("R + D^T P D (or its barred version) is singular") {}
};

struct ResidualCheckFailed : std::runtime_error {
  explicit ResidualCheckFailed(const std::string& what)
      : std::runtime_error(what) {}
};

/// R(P) = PA + A^T P + C^T P C + Q - (PB + C^T P D)(R + D^T P D)^{-1}(B^T P + D^T P C)
Matrix riccati_expr(const SystemMatrices& sys, const CostWeights& cost,
                    const Matrix& P);

/// The barred companion in (P, Pi) built from the summed matrices.
Matrix riccati_bar_expr(const SystemMatrices& sys, const CostWeights& cost,
                        const Matrix& P, const Matrix& Pi);

AreResiduals are_residuals(const SystemMatrices& sys, const CostWeights& cost,
                           const Matrix& P, const Matrix& Pi);

/// Feedback gains of the optimal control for a given ARE solution pair.
std::pair<Matrix, Matrix> gains(const SystemMatrices& sys,
                                const CostWeights& cost, const Matrix& P,
                                const Matrix& Pi);

struct SdpMethodOptions {
  sdp::SolverOptions sdp;
  std::optional<std::pair<Matrix, Matrix>> anchor;
  double epsilon = 0.0;      // shift added to Q, Q_bar; auto-ladder when 0
  int polish_steps = 5;
  double residual_tol = 1e-6;  // relative to 1 + ||Q||_F
};

/// Raw SDP outputs kept around for the duality diagnostics.
struct SdpArtifacts {
  sdp::SdpSolution raw;
  Matrix P, Pi;  // primal at the SDP optimum, before Newton polish
  bool anchored = false;
  Matrix P0, Pi0;
};

/// Maximal solution through the trace-maximizing SDP, then a short Newton
/// polish on the residual maps. Throws ResidualCheckFailed if the
/// escalation ladder cannot reach the residual tolerance.
AreSolution solve_are_sdp(const SystemMatrices& sys, const CostWeights& cost,
                          const SdpMethodOptions& opts = {},
                          SdpArtifacts* artifacts = nullptr);

struct OdeMethodOptions {
  double dt = 1e-3;
  double t_max = 200.0;
  double conv_tol = 1e-9;
  double residual_tol = 1e-6;
};

struct OdeDidNotConverge : std::runtime_error {
  explicit OdeDidNotConverge(const std::string& what)
      : std::runtime_error(what) {}
};

/// Differential-Riccati marching: integrates the flipped-time coupled
/// system from zero with RK4 until successive unit-time snapshots settle.
std::pair<AreSolution, RiccatiOdeTrace> solve_are_ode(
    const SystemMatrices& sys, const CostWeights& cost,
    const OdeMethodOptions& opts = {});

/// Max violation of the two dual equality constraints plus the two
/// complementary-slackness products, reconstructed from the solver's dual
/// certificate.
double dual_residuals(const SystemMatrices& sys, const CostWeights& cost,
                      const SdpArtifacts& artifacts);

}  // namespace mflq::riccati
