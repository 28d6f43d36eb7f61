#include "mflq/model.hpp"

#include "mflq/json_io.hpp"
#include "mflq/stabilize.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

namespace mflq::model {

namespace {

using nlohmann::json;

Matrix parse_matrix(const json& j, const std::string& name, int rows, int cols) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows) {
    throw DimensionError(name + ": expected " + std::to_string(rows) + " rows");
  }
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const json& row = j[i];
    if (!row.is_array() || static_cast<int>(row.size()) != cols) {
      throw DimensionError(name + ": row " + std::to_string(i) + " expected " +
                           std::to_string(cols) + " entries");
    }
    for (int k = 0; k < cols; ++k) {
      if (!row[k].is_number()) throw ParseError(name + ": non-numeric entry");
      m(i, k) = row[k].get<double>();
      if (!std::isfinite(m(i, k))) {
        throw ValueError(name + ": non-finite entry at (" + std::to_string(i) +
                         "," + std::to_string(k) + ")");
      }
    }
  }
  return m;
}

Matrix symmetrize_checked(const Matrix& m, const std::string& name) {
  const double asym = (m - m.transpose()).norm();
  if (asym > 1e-8 * (1.0 + m.norm())) {
    throw ValueError(name + ": asymmetry " + std::to_string(asym) +
                     " exceeds the 1e-8 relative budget");
  }
  return matkit::symmetrize(m);
}

const json& require(const json& j, const std::string& key) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError("missing field \"" + key + "\"");
  return *it;
}

}  // namespace

MfLqProblem load_problem(std::istream& source) {
  std::ostringstream buf;
  buf << source.rdbuf();
  return load_problem_string(buf.str());
}

MfLqProblem load_problem_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open problem file: " + path);
  return load_problem(in);
}

MfLqProblem load_problem_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("problem file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("problem file must be a JSON object");

  const json& jn = require(j, "n");
  const json& jm = require(j, "m");
  if (!jn.is_number_integer() || !jm.is_number_integer()) {
    throw ParseError("n and m must be integers");
  }
  const int n = jn.get<int>();
  const int m = jm.get<int>();
  if (n <= 0 || m <= 0) throw DimensionError("n and m must be positive");

  MfLqProblem p;
  p.system.n = n;
  p.system.m = m;
  p.system.A = parse_matrix(require(j, "A"), "A", n, n);
  p.system.A_bar = parse_matrix(require(j, "A_bar"), "A_bar", n, n);
  p.system.B = parse_matrix(require(j, "B"), "B", n, m);
  p.system.B_bar = parse_matrix(require(j, "B_bar"), "B_bar", n, m);
  p.system.C = parse_matrix(require(j, "C"), "C", n, n);
  p.system.C_bar = parse_matrix(require(j, "C_bar"), "C_bar", n, n);
  p.system.D = parse_matrix(require(j, "D"), "D", n, m);
  p.system.D_bar = parse_matrix(require(j, "D_bar"), "D_bar", n, m);
  p.cost.Q = symmetrize_checked(parse_matrix(require(j, "Q"), "Q", n, n), "Q");
  p.cost.Q_bar =
      symmetrize_checked(parse_matrix(require(j, "Q_bar"), "Q_bar", n, n), "Q_bar");
  p.cost.R = symmetrize_checked(parse_matrix(require(j, "R"), "R", m, m), "R");
  p.cost.R_bar =
      symmetrize_checked(parse_matrix(require(j, "R_bar"), "R_bar", m, m), "R_bar");

  const json& jx = require(j, "x0");
  if (!jx.is_array() || static_cast<int>(jx.size()) != n) {
    throw DimensionError("x0: expected length " + std::to_string(n));
  }
  p.x0 = Vector(n);
  for (int i = 0; i < n; ++i) {
    if (!jx[i].is_number()) throw ParseError("x0: non-numeric entry");
    p.x0(i) = jx[i].get<double>();
    if (!std::isfinite(p.x0(i))) throw ValueError("x0: non-finite entry");
  }
  return p;
}

std::string serialize(const MfLqProblem& p) {
  jsonio::Writer w;
  w.begin_object();
  w.field("n", p.system.n);
  w.field("m", p.system.m);
  w.field("A", p.system.A);
  w.field("A_bar", p.system.A_bar);
  w.field("B", p.system.B);
  w.field("B_bar", p.system.B_bar);
  w.field("C", p.system.C);
  w.field("C_bar", p.system.C_bar);
  w.field("D", p.system.D);
  w.field("D_bar", p.system.D_bar);
  w.field("Q", p.cost.Q);
  w.field("Q_bar", p.cost.Q_bar);
  w.field("R", p.cost.R);
  w.field("R_bar", p.cost.R_bar);
  w.field("x0", p.x0);
  w.end_object();
  return w.str();
}

AssumptionReport check_assumptions(const MfLqProblem& p, double tol) {
  AssumptionReport r;
  r.min_eig_Q = matkit::eig_sym(p.cost.Q).eigenvalues(0);
  r.min_eig_QQbar = matkit::eig_sym(p.cost.Q + p.cost.Q_bar).eigenvalues(0);
  r.min_eig_R = matkit::eig_sym(p.cost.R).eigenvalues(0);
  r.min_eig_RRbar = matkit::eig_sym(p.cost.R + p.cost.R_bar).eigenvalues(0);

  r.holds_J = r.min_eig_Q >= -tol && r.min_eig_QQbar >= -tol &&
              r.min_eig_R >= tol && r.min_eig_RRbar >= tol;
  r.holds_J_prime = r.holds_J && r.min_eig_Q >= tol && r.min_eig_QQbar >= tol;

  r.ode_pair_stabilizable = matkit::ode_pair_stabilizable(
      p.system.A + p.system.A_bar, p.system.B + p.system.B_bar, tol);
  r.sde_pair_stabilizable = stabilize::sde_pair_l2_stabilizable(p.system);
  r.holds_S = r.ode_pair_stabilizable && r.sde_pair_stabilizable;

  std::string notes;
  if (!r.holds_J) notes += "(J) fails; ";
  if (r.holds_J && !r.holds_J_prime) notes += "(J)' fails (Q or Q+Q_bar singular); ";
  if (!r.ode_pair_stabilizable) notes += "ODE pair [A+A_bar; B+B_bar] not stabilizable; ";
  if (!r.sde_pair_stabilizable) notes += "SDE pair [A,C;B,D] L2-stabilizability LMI not confirmed; ";
  if (notes.empty()) notes = "all standing assumptions verified";
  r.notes = notes;
  return r;
}

}  // namespace mflq::model
