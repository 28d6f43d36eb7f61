#pragma once

#include "mflq/model.hpp"
#include "mflq/sdp.hpp"
#include "mflq/stability.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mflq::stabilize {

using stability::Verdict;

struct StabilizerGains {
  Matrix K;
  Matrix K_bar;
  std::string provenance;  // "lmi", "pseudoinverse", "user"
};

struct LmiWitness {
  Matrix X;      // centered-inequality certificate
  Matrix X_bar;  // mean-inequality certificate
  Matrix Y;
  Matrix Y_bar;
};

struct StabilizabilityReport {
  Verdict mf_l2_stabilizable = Verdict::unknown;
  Verdict l2_stabilizable = Verdict::unknown;  // single-gain (K = K_bar) notion
  std::optional<StabilizerGains> gains;
  std::optional<LmiWitness> lmi_witness;
  std::vector<std::string> criteria_fired;
};

/// Two-stage feasibility scheme for the stabilizability LMI whose first
/// block is nonlinear through K_bar = Y_bar X_bar^{-1}: stage 1 solves the
/// (linear) mean inequality, stage 2 freezes K_bar and solves the centered
/// inequality. The scheme is sufficient only, so a stage failure yields
/// "unknown" unless the mean-pair necessity refutes outright.
StabilizabilityReport check_mf_stabilizable(const SystemMatrices& sys,
                                            const sdp::SolverOptions& opts = {});

/// Stabilizer from the pseudoinverse construction: requires the range
/// condition R(C+C_bar) within R(D+D_bar); the K_bar completion and K come
/// from eigenvalue-placement / classic stochastic LMIs.
std::optional<StabilizerGains> pseudoinverse_stabilizer(
    const SystemMatrices& sys, const sdp::SolverOptions& opts = {});

/// True iff the mean closed-loop matrix A+A_bar+(B+B_bar)K_bar is Hurwitz
/// and the coupled Lyapunov system with identity forcing has positive
/// definite solutions.
bool verify_stabilizer(const SystemMatrices& sys, const CostWeights& cost,
                       const StabilizerGains& g);

/// Classic stochastic stabilizability of [A, C; B, D] (all barred
/// matrices dropped) by the same LMI machinery.
bool sde_pair_l2_stabilizable(const SystemMatrices& sys,
                              const sdp::SolverOptions& opts = {});

/// Gain for the classic pair when it exists.
std::optional<Matrix> sde_pair_gain(const SystemMatrices& sys,
                                    const sdp::SolverOptions& opts = {});

}  // namespace mflq::stabilize
