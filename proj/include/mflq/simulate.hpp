#pragma once

#include "mflq/model.hpp"

#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

namespace mflq::sim {

/// State feedback u(t) = K (X(t) - E[X(t)]) + K_bar E[X(t)].
struct FeedbackPolicy {
  Matrix K;
  Matrix K_bar;
};

FeedbackPolicy zero_policy(int n, int m);

enum class TailMode { truncate, geometric_extrapolate };

struct SimConfig {
  double dt = 1e-3;
  double horizon = 20.0;
  long long paths = 10000;
  std::uint64_t seed = 0;
  TailMode tail_mode = TailMode::truncate;
  int workers = 0;  // 0 = hardware concurrency
};

struct OverflowError : std::runtime_error {
  OverflowError() : std::runtime_error("state norm exceeded 1e12; system looks unstable") {}
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> mean_path;                       // E[X] on the grid
  std::vector<std::vector<Vector>> sample_states;      // [path][grid point]
  std::vector<std::vector<Vector>> sample_controls;    // [path][grid point]
  std::vector<std::vector<double>> brownian_increments;  // [path][step]
};

struct CostEstimate {
  double value = 0.0;
  double std_error = 0.0;
  double horizon_used = 0.0;
  std::optional<double> tail_bound;
  bool divergent = false;
};

/// Per-grid-point moment summary; aggregation order is fixed (ascending
/// path chunks) so results do not depend on the worker count.
struct MomentCurve {
  std::vector<double> times;
  std::vector<Vector> mean_path;       // deterministic E[X]
  std::vector<Vector> empirical_mean;  // path average of X
  std::vector<Vector> empirical_sd;    // per-component sd across paths
  std::vector<double> second_moment;   // path average of |X|^2
  std::vector<double> variance;        // path average of |X - E[X]|^2
};

struct ItoCheck {
  double residual = 0.0;  // |lhs - rhs| / (1 + |rhs|)
  double lhs = 0.0;
  double rhs = 0.0;
  double lhs_std_error = 0.0;
};

struct CenteredQuadEstimate {
  double value = 0.0;
  double std_error = 0.0;
  bool divergent = false;
};

/// Euler-Maruyama sample paths around an exactly propagated mean.
/// E[X], E[u] in the coefficients come from the deterministic closed-loop
/// mean ODE (RK4), not an empirical particle average. All paths are kept
/// in memory; use estimate_cost / moments for large path counts.
/// Throws OverflowError when any state norm passes 1e12.
Trajectory simulate(const MfLqProblem& p, const FeedbackPolicy& policy,
                    const SimConfig& cfg);

/// Monte-Carlo estimate of the infinite-horizon cost truncated at the
/// horizon; optional geometric tail extrapolation from the last 20% of
/// the running-cost curve. Divergence (overflow or non-decaying tail)
/// sets the flag instead of throwing.
CostEstimate estimate_cost(const MfLqProblem& p, const FeedbackPolicy& policy,
                           const SimConfig& cfg);

MomentCurve moments(const MfLqProblem& p, const FeedbackPolicy& policy,
                    const SimConfig& cfg);

/// Monte-Carlo check of the Ito identity for a constant symmetric pair
/// (M, N) at time t: expectations become path averages, integrals
/// trapezoid sums.
ItoCheck ito_identity_check(const MfLqProblem& p, const Matrix& M,
                            const Matrix& N, const FeedbackPolicy& policy,
                            const SimConfig& cfg, double t);

double ito_identity_residual(const MfLqProblem& p, const Matrix& M,
                             const Matrix& N, const FeedbackPolicy& policy,
                             const SimConfig& cfg, double t);

/// Streams trajectories as CSV rows "time,path_id,x...,u..." without
/// holding paths in memory; the mean path comes first with path_id -1.
void dump_trajectories_csv(const MfLqProblem& p, const FeedbackPolicy& policy,
                           const SimConfig& cfg, std::ostream& out);

/// E of the integral of xi^T Psi xi over the horizon, xi = X - E[X].
CenteredQuadEstimate centered_quadratic_integral(const MfLqProblem& p,
                                                 const FeedbackPolicy& policy,
                                                 const SimConfig& cfg,
                                                 const Matrix& Psi);

}  // namespace mflq::sim
