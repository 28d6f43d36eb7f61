#pragma once

#include "mflq/model.hpp"
#include "mflq/simulate.hpp"

#include <optional>
#include <string>

namespace mflq::stability {

struct ScalarSystem {
  double a = 0.0, a_bar = 0.0, c = 0.0, c_bar = 0.0;
};

enum class Verdict { yes, no, unknown };

const char* to_string(Verdict v);

struct StabilityVerdict {
  Verdict exp_stable = Verdict::unknown;
  Verdict globally_integrable = Verdict::unknown;
  Verdict asymptotically_stable = Verdict::unknown;
  Verdict qq_integrable = Verdict::unknown;
  std::string evidence;
};

struct LyapunovSolution {
  Matrix P;
  double residual_norm = 0.0;
  bool psd = false;
  bool singular_operator = false;  // no unique solution; verdicts stay unknown
};

/// P A + A^T P + C^T P C + Q = 0 with a PSD check on the result.
LyapunovSolution solve_lyapunov(const Matrix& a, const Matrix& c,
                                const Matrix& q);

/// Monte-Carlo estimate of E int_0^T Fbar^T Q Fbar dt, where Fbar solves
/// dFbar = A Fbar dt + C Fbar dW from the identity. Matches the algebraic
/// Lyapunov solution when the system is integrable.
struct McLyapunov {
  Matrix estimate;
  Matrix std_error;  // entrywise
  bool divergent = false;
};
McLyapunov lyapunov_mc_oracle(const Matrix& a, const Matrix& c, const Matrix& q,
                              const sim::SimConfig& cfg);

/// Classification of the uncontrolled mean-field system by the proved
/// criteria; anything the criteria do not cover stays "unknown".
StabilityVerdict classify(const Matrix& a, const Matrix& a_bar, const Matrix& c,
                          const Matrix& c_bar, const Matrix& q,
                          const Matrix& q_bar, double tol = 1e-9);

/// Exact one-dimensional criterion:
/// (a + a_bar < 0) and (2a + c^2 < 0 or c + c_bar == 0).
/// Comparisons are exact by default; tol > 0 relaxes c + c_bar to
/// |c + c_bar| <= tol.
bool scalar_criterion(const ScalarSystem& s, double tol = 0.0);

/// Closed-form E|X(t)|^2 of the scalar uncontrolled system; the resonance
/// case 2a + c^2 == 2(a + a_bar) goes through the limit formula.
double scalar_second_moment(const ScalarSystem& s, double x0, double t);

/// Square integrability of (Q+Qbar)^{1/2} e^{(A+Abar)t}: true iff the
/// observable part of the pair carries no closed-right-half-plane modes.
bool weighted_mean_integrable(const Matrix& m, const Matrix& g, double tol = 1e-9);

}  // namespace mflq::stability
