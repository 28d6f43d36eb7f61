#pragma once

#include "mflq/matkit.hpp"

#include <string>
#include <vector>

namespace mflq::sdp {

using matkit::Matrix;
using matkit::Vector;

/// One PSD block of the constraint F(x) = F0 + sum_i x_i Fi >= 0.
struct LmiBlock {
  int order = 0;
  Matrix F0;
  std::vector<Matrix> Fi;  // one coefficient matrix per scalar variable
};

/// minimize c^T x  subject to every block PSD.
struct SdpProblem {
  int num_vars = 0;
  Vector c;
  std::vector<LmiBlock> blocks;
};

enum class SolveStatus { optimal, infeasible, unbounded, max_iter, weakly_feasible };

const char* to_string(SolveStatus s);

struct SdpSolution {
  SolveStatus status = SolveStatus::max_iter;
  Vector x;
  double objective = 0.0;          // c^T x at the returned point
  std::vector<Matrix> dual_Z;      // per-block dual certificate
  double duality_gap = 0.0;        // sum_j Tr(F_j(x) Z_j)
  double min_eig_slack = 0.0;      // min over blocks of lambda_min(F_j(x))
  double phase1_margin = 0.0;
  int outer_iterations = 0;
  int newton_iterations = 0;
};

struct SolverOptions {
  double feas_tol = 1e-7;
  double gap_tol = 1e-7;
  int max_newton_per_center = 50;
  int max_outer = 60;
  double box_bound = 1e6;              // phase-1 box on each variable
  double unbounded_threshold = 1e12;
};

/// Primal path-following with a log-det barrier. Phase 1 maximizes the
/// feasibility margin t (capped at 1) and hands its strictly feasible
/// point to the main solve. Fully deterministic.
SdpSolution solve(const SdpProblem& p, const SolverOptions& opts = {});

struct FeasibilityResult {
  bool feasible = false;
  double margin = 0.0;
  Vector x;
};

/// Phase-1 SDP: maximize t s.t. F(x) - t I >= 0, t <= 1, |x_i| <= box.
/// feasible iff the optimal margin exceeds feas_tol.
FeasibilityResult check_strict_feasibility(const std::vector<LmiBlock>& blocks,
                                           int num_vars,
                                           const SolverOptions& opts = {});

/// Scalarization of a symmetric matrix variable: upper triangle, with the
/// off-diagonal basis matrices scaled by 1/sqrt(2) so the map is isometric.
class SymVarMap {
 public:
  SymVarMap(int order, int offset);

  int order() const { return order_; }
  int offset() const { return offset_; }
  int count() const { return order_ * (order_ + 1) / 2; }

  /// k-th local basis matrix (E_ii, or (E_ij + E_ji)/sqrt(2) for i < j).
  Matrix basis(int local) const;

  /// Reads the matrix back out of the full variable vector.
  Matrix unpack(const Vector& x) const;

  /// Writes a symmetric matrix into its slots of the variable vector.
  void pack(const Matrix& m, Vector& x) const;

  /// Adds coeff * Tr(M) to the objective vector (diagonal slots only).
  void add_trace_objective(Vector& c, double coeff) const;

 private:
  int order_;
  int offset_;
  std::vector<std::pair<int, int>> ij_;  // local index -> (i, j), i <= j
};

/// Rectangular (fully free) matrix variable, row-major scalarization.
class RectVarMap {
 public:
  RectVarMap(int rows, int cols, int offset)
      : rows_(rows), cols_(cols), offset_(offset) {}
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int offset() const { return offset_; }
  int count() const { return rows_ * cols_; }
  Matrix basis(int local) const;
  Matrix unpack(const Vector& x) const;

 private:
  int rows_, cols_, offset_;
};

/// Debug dump: sparse text listing (block, row, col, var_index, value)
/// with var_index -1 for the constant term, preceded by the objective.
std::string dump(const SdpProblem& p);

}  // namespace mflq::sdp
