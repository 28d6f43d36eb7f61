#include "mflq/sdp.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <sstream>

namespace mflq::sdp {

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::unbounded: return "unbounded";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::weakly_feasible: return "weakly_feasible";
  }
  return "?";
}

namespace {

struct BlockState {
  Matrix F;        // F(x)
  Matrix Finv;     // F(x)^-1
  double logdet = 0.0;
  bool pd = false;
};

Matrix eval_block(const LmiBlock& b, const Vector& x) {
  Matrix f = b.F0;
  for (int i = 0; i < static_cast<int>(b.Fi.size()); ++i) {
    if (b.Fi[i].size() > 0) f += x(i) * b.Fi[i];
  }
  return f;
}

bool factor_blocks(const SdpProblem& p, const Vector& x,
                   std::vector<BlockState>& st) {
  st.resize(p.blocks.size());
  for (size_t j = 0; j < p.blocks.size(); ++j) {
    st[j].F = eval_block(p.blocks[j], x);
    Eigen::LLT<Matrix> llt(st[j].F);
    if (llt.info() != Eigen::Success) {
      st[j].pd = false;
      return false;
    }
    st[j].Finv = llt.solve(Matrix::Identity(st[j].F.rows(), st[j].F.cols()));
    st[j].logdet = 0.0;
    const Matrix& L = llt.matrixLLT();
    for (Eigen::Index i = 0; i < L.rows(); ++i) {
      if (!(L(i, i) > 0.0)) {
        st[j].pd = false;
        return false;
      }
      st[j].logdet += 2.0 * std::log(L(i, i));
    }
    st[j].pd = true;
  }
  return true;
}

double min_slack_eig(const SdpProblem& p, const Vector& x) {
  double mn = std::numeric_limits<double>::infinity();
  for (const auto& b : p.blocks) {
    mn = std::min(mn, matkit::eig_sym(eval_block(b, x)).eigenvalues(0));
  }
  return mn;
}

struct PathResult {
  Vector x;
  std::vector<Matrix> Z;
  double mu_final = 0.0;
  bool hit_unbounded = false;
  bool hit_max_outer = false;
  int outer = 0;
  int newton = 0;
};

/// Damped-Newton path following from a strictly feasible x0.
PathResult path_follow(const SdpProblem& p, const Vector& x0,
                       const SolverOptions& opts) {
  PathResult res;
  Vector x = x0;
  const int k = p.num_vars;
  int total_order = 0;
  for (const auto& b : p.blocks) total_order += b.order;

  std::vector<BlockState> st;
  if (!factor_blocks(p, x, st)) {
    throw std::logic_error("path_follow: start point is not strictly feasible");
  }

  double mu = 1.0 + std::abs(p.c.dot(x));
  const double mu_stop = opts.gap_tol / std::max(1, total_order);

  std::vector<std::vector<Matrix>> S(p.blocks.size());
  Vector g(k);
  Matrix H(k, k);

  while (true) {
    // Center at the current mu.
    for (int it = 0; it < opts.max_newton_per_center; ++it) {
      // gradient and Hessian of c^T x - mu * sum log det F_j(x)
      g = p.c;
      H.setZero();
      for (size_t j = 0; j < p.blocks.size(); ++j) {
        const LmiBlock& b = p.blocks[j];
        S[j].assign(k, Matrix());
        for (int i = 0; i < k; ++i) {
          if (b.Fi[i].size() == 0) continue;
          S[j][i] = st[j].Finv * b.Fi[i];
          g(i) -= mu * S[j][i].trace();
        }
        for (int i = 0; i < k; ++i) {
          if (S[j][i].size() == 0) continue;
          for (int l = i; l < k; ++l) {
            if (S[j][l].size() == 0) continue;
            const double hval =
                mu * S[j][i].cwiseProduct(S[j][l].transpose()).sum();
            H(i, l) += hval;
            if (l != i) H(l, i) += hval;
          }
        }
      }
      // tiny ridge keeps the factorization honest when a variable is
      // nearly unconstrained at this point
      const double ridge = 1e-13 * (H.diagonal().maxCoeff() + 1.0);
      H.diagonal().array() += ridge;

      Eigen::LDLT<Matrix> ldlt(H);
      Vector d = ldlt.solve(-g);
      const double decrement2 = -g.dot(d);
      ++res.newton;

      if (!(decrement2 > 1e-18)) break;

      // backtrack into the PD cone, then Armijo on the barrier objective
      double alpha = 1.0;
      Vector xn;
      std::vector<BlockState> stn;
      double phi0 = p.c.dot(x);
      for (const auto& s : st) phi0 -= mu * s.logdet;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls) {
        xn = x + alpha * d;
        if (factor_blocks(p, xn, stn)) {
          double phi = p.c.dot(xn);
          for (const auto& s : stn) phi -= mu * s.logdet;
          if (phi <= phi0 - 1e-4 * alpha * decrement2) {
            accepted = true;
            break;
          }
        }
        alpha *= 0.5;
      }
      if (!accepted) break;
      x = xn;
      st = stn;
      if (decrement2 * alpha < 1e-16) break;
      if (p.c.dot(x) < -opts.unbounded_threshold) {
        res.hit_unbounded = true;
        res.x = x;
        return res;
      }
    }

    ++res.outer;
    if (mu <= mu_stop) break;
    if (res.outer >= opts.max_outer) {
      res.hit_max_outer = true;
      break;
    }
    mu = std::max(mu / 10.0, mu_stop);
  }

  res.x = x;
  res.mu_final = mu;
  res.Z.resize(p.blocks.size());
  for (size_t j = 0; j < p.blocks.size(); ++j) {
    res.Z[j] = matkit::symmetrize(mu * st[j].Finv);
  }
  return res;
}

/// Builds the phase-1 problem: variables (x, t), maximize t subject to
/// F_j(x) - t I >= 0 per block, t <= 1, |x_i| <= box.
SdpProblem make_phase1(const std::vector<LmiBlock>& blocks, int num_vars,
                       double box) {
  SdpProblem q;
  q.num_vars = num_vars + 1;
  q.c = Vector::Zero(q.num_vars);
  q.c(num_vars) = -1.0;  // minimize -t
  for (const auto& b : blocks) {
    LmiBlock nb;
    nb.order = b.order;
    nb.F0 = b.F0;
    nb.Fi = b.Fi;
    nb.Fi.resize(q.num_vars);
    nb.Fi[num_vars] = -Matrix::Identity(b.order, b.order);
    q.blocks.push_back(std::move(nb));
  }
  {
    LmiBlock cap;  // 1 - t >= 0
    cap.order = 1;
    cap.F0 = Matrix::Constant(1, 1, 1.0);
    cap.Fi.resize(q.num_vars);
    cap.Fi[num_vars] = Matrix::Constant(1, 1, -1.0);
    q.blocks.push_back(std::move(cap));
  }
  for (int i = 0; i < num_vars; ++i) {
    for (double sgn : {1.0, -1.0}) {
      LmiBlock bb;  // box +- x_i >= 0
      bb.order = 1;
      bb.F0 = Matrix::Constant(1, 1, box);
      bb.Fi.resize(q.num_vars);
      bb.Fi[i] = Matrix::Constant(1, 1, sgn);
      q.blocks.push_back(std::move(bb));
    }
  }
  return q;
}

}  // namespace

FeasibilityResult check_strict_feasibility(const std::vector<LmiBlock>& blocks,
                                           int num_vars,
                                           const SolverOptions& opts) {
  SdpProblem q = make_phase1(blocks, num_vars, opts.box_bound);
  Vector x0 = Vector::Zero(q.num_vars);
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& b : blocks) {
    worst = std::min(worst, matkit::eig_sym(eval_block(b, x0.head(num_vars))).eigenvalues(0));
  }
  x0(num_vars) = std::min(worst - 1.0, 0.5);

  SolverOptions popts = opts;
  popts.gap_tol = std::min(opts.gap_tol, opts.feas_tol) * 0.1;
  PathResult pr = path_follow(q, x0, popts);

  FeasibilityResult out;
  out.margin = pr.x(num_vars);
  out.x = pr.x.head(num_vars);
  out.feasible = out.margin > opts.feas_tol;
  return out;
}

SdpSolution solve(const SdpProblem& p, const SolverOptions& opts) {
  SdpSolution sol;
  FeasibilityResult ph1 = check_strict_feasibility(p.blocks, p.num_vars, opts);
  sol.phase1_margin = ph1.margin;

  if (ph1.margin < -opts.feas_tol) {
    sol.status = SolveStatus::infeasible;
    sol.x = ph1.x;
    sol.objective = p.c.dot(sol.x);
    sol.min_eig_slack = min_slack_eig(p, sol.x);
    return sol;
  }
  if (ph1.margin <= 0.0) {
    sol.status = SolveStatus::weakly_feasible;
    sol.x = ph1.x;
    sol.objective = p.c.dot(sol.x);
    sol.min_eig_slack = min_slack_eig(p, sol.x);
    return sol;
  }

  PathResult pr = path_follow(p, ph1.x, opts);
  sol.x = pr.x;
  sol.objective = p.c.dot(pr.x);
  sol.outer_iterations = pr.outer;
  sol.newton_iterations = pr.newton;
  if (pr.hit_unbounded) {
    sol.status = SolveStatus::unbounded;
    return sol;
  }
  sol.dual_Z = pr.Z;
  int total_order = 0;
  double gap = 0.0;
  for (size_t j = 0; j < p.blocks.size(); ++j) {
    total_order += p.blocks[j].order;
    gap += (eval_block(p.blocks[j], pr.x).cwiseProduct(pr.Z[j])).sum();
  }
  sol.duality_gap = gap;
  sol.min_eig_slack = min_slack_eig(p, pr.x);

  if (pr.hit_max_outer) {
    sol.status = SolveStatus::max_iter;
  } else if (ph1.margin <= opts.feas_tol) {
    sol.status = SolveStatus::weakly_feasible;
  } else {
    sol.status = SolveStatus::optimal;
  }
  return sol;
}

SymVarMap::SymVarMap(int order, int offset) : order_(order), offset_(offset) {
  for (int i = 0; i < order; ++i)
    for (int j = i; j < order; ++j) ij_.emplace_back(i, j);
}

Matrix SymVarMap::basis(int local) const {
  auto [i, j] = ij_[local];
  Matrix e = Matrix::Zero(order_, order_);
  if (i == j) {
    e(i, i) = 1.0;
  } else {
    const double s = 1.0 / std::sqrt(2.0);
    e(i, j) = s;
    e(j, i) = s;
  }
  return e;
}

Matrix SymVarMap::unpack(const Vector& x) const {
  Matrix m = Matrix::Zero(order_, order_);
  for (int k = 0; k < count(); ++k) {
    auto [i, j] = ij_[k];
    if (i == j) {
      m(i, i) = x(offset_ + k);
    } else {
      const double v = x(offset_ + k) / std::sqrt(2.0);
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  return m;
}

void SymVarMap::pack(const Matrix& m, Vector& x) const {
  for (int k = 0; k < count(); ++k) {
    auto [i, j] = ij_[k];
    x(offset_ + k) = (i == j) ? m(i, i) : m(i, j) * std::sqrt(2.0);
  }
}

void SymVarMap::add_trace_objective(Vector& c, double coeff) const {
  for (int k = 0; k < count(); ++k) {
    auto [i, j] = ij_[k];
    if (i == j) c(offset_ + k) += coeff;
  }
}

Matrix RectVarMap::basis(int local) const {
  Matrix e = Matrix::Zero(rows_, cols_);
  e(local / cols_, local % cols_) = 1.0;
  return e;
}

Matrix RectVarMap::unpack(const Vector& x) const {
  Matrix m(rows_, cols_);
  for (int k = 0; k < count(); ++k) m(k / cols_, k % cols_) = x(offset_ + k);
  return m;
}

std::string dump(const SdpProblem& p) {
  std::ostringstream os;
  os << "mflq-sdp-dump 1\n";
  os << "nvars " << p.num_vars << "\n";
  os << "objective";
  for (int i = 0; i < p.num_vars; ++i) os << " " << p.c(i);
  os << "\n";
  for (size_t j = 0; j < p.blocks.size(); ++j) {
    const LmiBlock& b = p.blocks[j];
    os << "block " << j << " " << b.order << "\n";
    for (int r = 0; r < b.order; ++r)
      for (int c2 = 0; c2 < b.order; ++c2)
        if (b.F0(r, c2) != 0.0)
          os << j << " " << r << " " << c2 << " -1 " << b.F0(r, c2) << "\n";
    for (int i = 0; i < p.num_vars; ++i) {
      if (b.Fi[i].size() == 0) continue;
      for (int r = 0; r < b.order; ++r)
        for (int c2 = 0; c2 < b.order; ++c2)
          if (b.Fi[i](r, c2) != 0.0)
            os << j << " " << r << " " << c2 << " " << i << " " << b.Fi[i](r, c2)
               << "\n";
    }
  }
  return os.str();
}

}  // namespace mflq::sdp
