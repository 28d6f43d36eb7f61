#include "mflq/simulate.hpp"

#include "mflq/rng.hpp"

#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

namespace mflq::sim {

namespace {

constexpr long long kChunk = 256;
constexpr double kOverflowNorm2 = 1e24;  // (1e12)^2

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Closed-loop data shared by every path walk.
struct Loop {
  int n = 0, m = 0;
  long long steps = 0;
  double dt = 0.0, sqdt = 0.0;
  std::uint64_t seed = 0;
  Matrix A1dt;  // (A + B K) dt
  Matrix C1;    // C + D K
  Matrix K;
  std::vector<Vector> mean;   // m_k = E[X(t_k)]
  std::vector<Vector> umean;  // K_bar m_k
  std::vector<Vector> a2dt;   // (A+A_bar+(B+B_bar)K_bar) m_k dt
  std::vector<Vector> c2;     // (C+C_bar+(D+D_bar)K_bar) m_k
  bool mean_overflow = false;
};

Loop build_loop(const MfLqProblem& p, const FeedbackPolicy& policy,
                double dt, double horizon, std::uint64_t seed) {
  const SystemMatrices& s = p.system;
  Loop L;
  L.n = s.n;
  L.m = s.m;
  L.dt = dt;
  L.sqdt = std::sqrt(dt);
  L.seed = seed;
  L.steps = std::llround(horizon / dt);
  if (L.steps < 1) L.steps = 1;
  L.K = policy.K;
  L.A1dt = (s.A + s.B * policy.K) * dt;
  L.C1 = s.C + s.D * policy.K;

  const Matrix Mcl = s.A + s.A_bar + (s.B + s.B_bar) * policy.K_bar;
  const Matrix Gcl = s.C + s.C_bar + (s.D + s.D_bar) * policy.K_bar;
  // degree-4 Taylor propagator == RK4 for a constant linear ODE
  Matrix phi = Matrix::Identity(s.n, s.n);
  Matrix term = Matrix::Identity(s.n, s.n);
  for (int i = 1; i <= 4; ++i) {
    term = term * (Mcl * dt) / static_cast<double>(i);
    phi += term;
  }

  L.mean.resize(L.steps + 1);
  L.umean.resize(L.steps + 1);
  L.a2dt.resize(L.steps + 1);
  L.c2.resize(L.steps + 1);
  Vector m = p.x0;
  for (long long k = 0; k <= L.steps; ++k) {
    L.mean[k] = m;
    L.umean[k] = policy.K_bar * m;
    L.a2dt[k] = Mcl * m * dt;
    L.c2[k] = Gcl * m;
    if (m.squaredNorm() > kOverflowNorm2) {
      L.mean_overflow = true;
      break;
    }
    m = phi * m;
  }
  return L;
}

/// Walks one path, feeding the accumulator at every grid point.
/// Acc must provide visit(k, x, xi, u) and increment(k, dW).
/// Returns false on overflow.
template <typename Acc>
bool walk_path(const Loop& L, const Vector& x0, long long path, Acc& acc) {
  Vector x = x0;
  Vector xi(L.n), u(L.m), cdiff(L.n);
  for (long long k = 0;; ++k) {
    xi.noalias() = x - L.mean[k];
    u.noalias() = L.K * xi + L.umean[k];
    acc.visit(k, x, xi, u);
    if (k == L.steps) break;
    const double dw =
        L.sqdt * rng::standard_normal(L.seed, static_cast<std::uint64_t>(path),
                                      static_cast<std::uint64_t>(k));
    acc.increment(k, dw);
    cdiff.noalias() = L.C1 * xi + L.c2[k];
    x.noalias() += L.A1dt * xi + L.a2dt[k] + cdiff * dw;
    if (x.squaredNorm() > kOverflowNorm2) return false;
  }
  return true;
}

/// Runs chunk_fn over fixed-size path chunks (possibly on several
/// threads) and merges the partial results in ascending chunk order, so
/// aggregates do not depend on the worker count. Returns false if any
/// chunk reported overflow.
template <typename Partial, typename ChunkFn, typename MergeFn>
bool parallel_chunks(long long paths, int workers, ChunkFn chunk_fn,
                     MergeFn merge_fn) {
  const long long nchunks = (paths + kChunk - 1) / kChunk;
  std::atomic<long long> next{0};
  std::atomic<bool> overflow{false};
  std::mutex mu;
  std::map<long long, Partial> parked;
  long long next_merge = 0;

  auto work = [&]() {
    while (!overflow.load(std::memory_order_relaxed)) {
      const long long c = next.fetch_add(1);
      if (c >= nchunks) return;
      const long long b = c * kChunk;
      const long long e = std::min(paths, b + kChunk);
      Partial part;
      if (!chunk_fn(b, e, part)) {
        overflow.store(true);
        return;
      }
      std::lock_guard<std::mutex> lk(mu);
      parked.emplace(c, std::move(part));
      auto it = parked.begin();
      while (it != parked.end() && it->first == next_merge) {
        merge_fn(std::move(it->second));
        it = parked.erase(it);
        ++next_merge;
      }
    }
  };

  const int w = std::min<long long>(resolve_workers(workers), nchunks);
  std::vector<std::thread> pool;
  for (int i = 1; i < w; ++i) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return !overflow.load();
}

void validate_cfg(const SimConfig& cfg) {
  if (!(cfg.dt > 0.0) || !(cfg.horizon > 0.0) || cfg.dt > cfg.horizon) {
    throw std::invalid_argument("SimConfig: need 0 < dt <= horizon");
  }
  if (cfg.paths < 1) throw std::invalid_argument("SimConfig: paths >= 1");
}

void validate_policy(const MfLqProblem& p, const FeedbackPolicy& policy) {
  if (policy.K.rows() != p.system.m || policy.K.cols() != p.system.n ||
      policy.K_bar.rows() != p.system.m || policy.K_bar.cols() != p.system.n) {
    throw std::invalid_argument("FeedbackPolicy: gains must be m x n");
  }
  if (!policy.K.allFinite() || !policy.K_bar.allFinite()) {
    throw std::invalid_argument("FeedbackPolicy: non-finite gain entries");
  }
}

}  // namespace

FeedbackPolicy zero_policy(int n, int m) {
  return {Matrix::Zero(m, n), Matrix::Zero(m, n)};
}

Trajectory simulate(const MfLqProblem& p, const FeedbackPolicy& policy,
                    const SimConfig& cfg) {
  validate_cfg(cfg);
  validate_policy(p, policy);
  Loop L = build_loop(p, policy, cfg.dt, cfg.horizon, cfg.seed);
  if (L.mean_overflow) throw OverflowError();

  Trajectory tr;
  tr.times.resize(L.steps + 1);
  for (long long k = 0; k <= L.steps; ++k) tr.times[k] = k * L.dt;
  tr.mean_path = L.mean;
  tr.sample_states.assign(cfg.paths, {});
  tr.sample_controls.assign(cfg.paths, {});
  tr.brownian_increments.assign(cfg.paths, {});

  struct RecordAcc {
    Trajectory* tr;
    long long path;
    void visit(long long k, const Vector& x, const Vector&, const Vector& u) {
      tr->sample_states[path][k] = x;
      tr->sample_controls[path][k] = u;
    }
    void increment(long long k, double dw) {
      tr->brownian_increments[path][k] = dw;
    }
  };

  struct Nothing {};
  bool ok = parallel_chunks<Nothing>(
      cfg.paths, cfg.workers,
      [&](long long b, long long e, Nothing&) {
        for (long long path = b; path < e; ++path) {
          tr.sample_states[path].resize(L.steps + 1);
          tr.sample_controls[path].resize(L.steps + 1);
          tr.brownian_increments[path].resize(L.steps);
          RecordAcc acc{&tr, path};
          if (!walk_path(L, p.x0, path, acc)) return false;
        }
        return true;
      },
      [](Nothing&&) {});
  if (!ok) throw OverflowError();
  return tr;
}

CostEstimate estimate_cost(const MfLqProblem& p, const FeedbackPolicy& policy,
                           const SimConfig& cfg) {
  validate_cfg(cfg);
  validate_policy(p, policy);
  CostEstimate est;
  est.horizon_used = cfg.horizon;

  Loop L = build_loop(p, policy, cfg.dt, cfg.horizon, cfg.seed);
  if (L.mean_overflow) {
    est.divergent = true;
    est.value = std::numeric_limits<double>::infinity();
    return est;
  }

  // deterministic running-cost part <Q_bar m, m> + <R_bar umean, umean>
  std::vector<double> det_run(L.steps + 1);
  double det_total = 0.0;
  for (long long k = 0; k <= L.steps; ++k) {
    det_run[k] = L.mean[k].dot(p.cost.Q_bar * L.mean[k]) +
                 L.umean[k].dot(p.cost.R_bar * L.umean[k]);
    det_total += (k == 0 || k == L.steps ? 0.5 : 1.0) * det_run[k] * L.dt;
  }

  struct Partial {
    long long begin = 0;
    std::vector<double> path_cost;   // per-path stochastic totals
    std::vector<double> run_sum;     // per-time sum of stochastic running cost
  };

  std::vector<double> path_cost(cfg.paths);
  std::vector<double> run_sum(L.steps + 1, 0.0);

  struct CostAcc {
    const MfLqProblem* p;
    const Loop* L;
    Partial* part;
    long long local;
    double total = 0.0;
    void visit(long long k, const Vector& x, const Vector&, const Vector& u) {
      const double run = x.dot(p->cost.Q * x) + u.dot(p->cost.R * u);
      part->run_sum[k] += run;
      total += (k == 0 || k == L->steps ? 0.5 : 1.0) * run * L->dt;
      if (k == L->steps) part->path_cost[local] = total;
    }
    void increment(long long, double) {}
  };

  bool ok = parallel_chunks<Partial>(
      cfg.paths, cfg.workers,
      [&](long long b, long long e, Partial& part) {
        part.begin = b;
        part.path_cost.resize(e - b);
        part.run_sum.assign(L.steps + 1, 0.0);
        for (long long path = b; path < e; ++path) {
          CostAcc acc{&p, &L, &part, path - b};
          if (!walk_path(L, p.x0, path, acc)) return false;
        }
        return true;
      },
      [&](Partial&& part) {
        for (size_t i = 0; i < part.path_cost.size(); ++i) {
          path_cost[part.begin + static_cast<long long>(i)] = part.path_cost[i];
        }
        for (long long k = 0; k <= L.steps; ++k) run_sum[k] += part.run_sum[k];
      });
  if (!ok) {
    est.divergent = true;
    est.value = std::numeric_limits<double>::infinity();
    return est;
  }

  double mean_cost = 0.0;
  for (long long i = 0; i < cfg.paths; ++i) mean_cost += path_cost[i];
  mean_cost /= static_cast<double>(cfg.paths);
  double var = 0.0;
  for (long long i = 0; i < cfg.paths; ++i) {
    const double d = path_cost[i] - mean_cost;
    var += d * d;
  }
  var = cfg.paths > 1 ? var / static_cast<double>(cfg.paths - 1) : 0.0;

  est.value = mean_cost + det_total;
  est.std_error = std::sqrt(var / static_cast<double>(cfg.paths));

  // exponential fit over the last 20% of the running-cost curve
  std::vector<double> curve(L.steps + 1);
  for (long long k = 0; k <= L.steps; ++k) {
    curve[k] = run_sum[k] / static_cast<double>(cfg.paths) + det_run[k];
  }
  const long long k0 = (4 * L.steps) / 5;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  long long cnt = 0;
  for (long long k = k0; k <= L.steps; ++k) {
    if (curve[k] > 0.0) {
      const double t = k * L.dt;
      const double y = std::log(curve[k]);
      sx += t;
      sy += y;
      sxx += t * t;
      sxy += t * y;
      ++cnt;
    }
  }
  if (cnt >= 3) {
    const double denom = cnt * sxx - sx * sx;
    if (denom > 0.0) {
      const double rate = (cnt * sxy - sx * sy) / denom;
      const double tail_mass_floor = 1e-8 * (1.0 + std::abs(est.value));
      if (rate >= 0.0) {
        if (curve[L.steps] > tail_mass_floor) est.divergent = true;
      } else if (cfg.tail_mode == TailMode::geometric_extrapolate) {
        const double tail = -curve[L.steps] / rate;
        est.tail_bound = tail;
        est.value += tail;
      }
    }
  }
  return est;
}

MomentCurve moments(const MfLqProblem& p, const FeedbackPolicy& policy,
                    const SimConfig& cfg) {
  validate_cfg(cfg);
  validate_policy(p, policy);
  Loop L = build_loop(p, policy, cfg.dt, cfg.horizon, cfg.seed);
  if (L.mean_overflow) throw OverflowError();

  const int n = L.n;
  struct Partial {
    std::vector<Vector> sum_x;
    std::vector<Vector> sum_x2;
    std::vector<double> sum_norm2;
    std::vector<double> sum_cnorm2;
  };
  Partial total;
  total.sum_x.assign(L.steps + 1, Vector::Zero(n));
  total.sum_x2.assign(L.steps + 1, Vector::Zero(n));
  total.sum_norm2.assign(L.steps + 1, 0.0);
  total.sum_cnorm2.assign(L.steps + 1, 0.0);

  struct MomentAcc {
    Partial* part;
    void visit(long long k, const Vector& x, const Vector& xi, const Vector&) {
      part->sum_x[k] += x;
      part->sum_x2[k].array() += x.array().square();
      part->sum_norm2[k] += x.squaredNorm();
      part->sum_cnorm2[k] += xi.squaredNorm();
    }
    void increment(long long, double) {}
  };

  bool ok = parallel_chunks<Partial>(
      cfg.paths, cfg.workers,
      [&](long long b, long long e, Partial& part) {
        part.sum_x.assign(L.steps + 1, Vector::Zero(n));
        part.sum_x2.assign(L.steps + 1, Vector::Zero(n));
        part.sum_norm2.assign(L.steps + 1, 0.0);
        part.sum_cnorm2.assign(L.steps + 1, 0.0);
        MomentAcc acc{&part};
        for (long long path = b; path < e; ++path) {
          if (!walk_path(L, p.x0, path, acc)) return false;
        }
        return true;
      },
      [&](Partial&& part) {
        for (long long k = 0; k <= L.steps; ++k) {
          total.sum_x[k] += part.sum_x[k];
          total.sum_x2[k] += part.sum_x2[k];
          total.sum_norm2[k] += part.sum_norm2[k];
          total.sum_cnorm2[k] += part.sum_cnorm2[k];
        }
      });
  if (!ok) throw OverflowError();

  MomentCurve mc;
  const double np = static_cast<double>(cfg.paths);
  mc.times.resize(L.steps + 1);
  mc.mean_path = L.mean;
  mc.empirical_mean.resize(L.steps + 1);
  mc.empirical_sd.resize(L.steps + 1);
  mc.second_moment.resize(L.steps + 1);
  mc.variance.resize(L.steps + 1);
  for (long long k = 0; k <= L.steps; ++k) {
    mc.times[k] = k * L.dt;
    mc.empirical_mean[k] = total.sum_x[k] / np;
    Vector var = total.sum_x2[k] / np -
                 mc.empirical_mean[k].array().square().matrix();
    mc.empirical_sd[k] = var.array().max(0.0).sqrt();
    mc.second_moment[k] = total.sum_norm2[k] / np;
    mc.variance[k] = total.sum_cnorm2[k] / np -
                     (mc.empirical_mean[k] - L.mean[k]).squaredNorm();
  }
  return mc;
}

ItoCheck ito_identity_check(const MfLqProblem& p, const Matrix& M,
                            const Matrix& N, const FeedbackPolicy& policy,
                            const SimConfig& cfg, double t) {
  validate_cfg(cfg);
  validate_policy(p, policy);
  if (!(t > 0.0) || t > cfg.horizon + 1e-12) {
    throw std::invalid_argument("ito_identity_check: need 0 < t <= horizon");
  }
  Loop L = build_loop(p, policy, cfg.dt, t, cfg.seed);
  if (L.mean_overflow) throw OverflowError();

  const SystemMatrices& s = p.system;
  const Matrix W1 = s.A.transpose() * M + M * s.A + s.C.transpose() * M * s.C;
  const Matrix W2 = s.B.transpose() * M + s.D.transpose() * M * s.C;
  const Matrix W3 = s.D.transpose() * M * s.D;
  const Matrix Sm = s.A + s.A_bar;
  const Matrix W5 = Sm.transpose() * N + N * Sm;
  const Matrix Gx = s.C + s.C_bar;
  const Matrix Gu = s.D + s.D_bar;
  const Matrix NB = N * (s.B + s.B_bar);

  // deterministic mean-part of the integrand, trapezoid weights applied
  double det_integral = 0.0;
  for (long long k = 0; k <= L.steps; ++k) {
    const Vector& m = L.mean[k];
    const Vector& um = L.umean[k];
    Vector g = Gx * m + Gu * um;
    const double val = g.dot(M * g) + m.dot(W5 * m) + 2.0 * m.dot(NB * um);
    det_integral += (k == 0 || k == L.steps ? 0.5 : 1.0) * val * L.dt;
  }

  struct Partial {
    double sum_lhs = 0.0;
    double sum_lhs2 = 0.0;
    double sum_term = 0.0;
    long long count = 0;
  };
  Partial total;

  struct ItoAcc {
    const Loop* L;
    const Matrix *W1, *W2, *W3, *M;
    double integral = 0.0;
    double terminal = 0.0;
    void visit(long long k, const Vector&, const Vector& xi, const Vector& u) {
      Vector v = u - L->umean[k];
      const double val =
          xi.dot(*W1 * xi) + 2.0 * v.dot(*W2 * xi) + v.dot(*W3 * v);
      integral += (k == 0 || k == L->steps ? 0.5 : 1.0) * val * L->dt;
      if (k == L->steps) terminal = xi.dot(*M * xi);
    }
    void increment(long long, double) {}
  };

  bool ok = parallel_chunks<Partial>(
      cfg.paths, cfg.workers,
      [&](long long b, long long e, Partial& part) {
        for (long long path = b; path < e; ++path) {
          ItoAcc acc{&L, &W1, &W2, &W3, &M};
          if (!walk_path(L, p.x0, path, acc)) return false;
          part.sum_lhs += acc.integral;
          part.sum_lhs2 += acc.integral * acc.integral;
          part.sum_term += acc.terminal;
          part.count += 1;
        }
        return true;
      },
      [&](Partial&& part) {
        total.sum_lhs += part.sum_lhs;
        total.sum_lhs2 += part.sum_lhs2;
        total.sum_term += part.sum_term;
        total.count += part.count;
      });
  if (!ok) throw OverflowError();

  const double np = static_cast<double>(cfg.paths);
  const double lhs_mc = total.sum_lhs / np;
  const double lhs_var =
      cfg.paths > 1
          ? std::max(0.0, (total.sum_lhs2 - np * lhs_mc * lhs_mc) / (np - 1.0))
          : 0.0;

  ItoCheck out;
  const Vector& mt = L.mean[L.steps];
  out.lhs = lhs_mc + det_integral;
  out.rhs = total.sum_term / np + mt.dot(N * mt) - p.x0.dot(N * p.x0);
  out.lhs_std_error = std::sqrt(lhs_var / np);
  out.residual = std::abs(out.lhs - out.rhs) / (1.0 + std::abs(out.rhs));
  return out;
}

double ito_identity_residual(const MfLqProblem& p, const Matrix& M,
                             const Matrix& N, const FeedbackPolicy& policy,
                             const SimConfig& cfg, double t) {
  return ito_identity_check(p, M, N, policy, cfg, t).residual;
}

void dump_trajectories_csv(const MfLqProblem& p, const FeedbackPolicy& policy,
                           const SimConfig& cfg, std::ostream& out) {
  validate_cfg(cfg);
  validate_policy(p, policy);
  Loop L = build_loop(p, policy, cfg.dt, cfg.horizon, cfg.seed);
  if (L.mean_overflow) throw OverflowError();

  out << "time,path_id";
  for (int i = 0; i < L.n; ++i) out << ",x" << i;
  for (int i = 0; i < L.m; ++i) out << ",u" << i;
  out << "\n";
  char buf[40];
  auto emit = [&](double t, long long id, const Vector& x, const Vector& u) {
    std::snprintf(buf, sizeof(buf), "%.17g", t);
    out << buf << "," << id;
    for (int i = 0; i < L.n; ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", x(i));
      out << "," << buf;
    }
    for (int i = 0; i < L.m; ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", u(i));
      out << "," << buf;
    }
    out << "\n";
  };
  for (long long k = 0; k <= L.steps; ++k) {
    emit(k * L.dt, -1, L.mean[k], L.umean[k]);
  }

  struct CsvAcc {
    const Loop* L;
    std::string* text;
    long long path;
    char buf[40];
    void visit(long long k, const Vector& x, const Vector&, const Vector& u) {
      std::snprintf(buf, sizeof(buf), "%.17g", k * L->dt);
      *text += buf;
      *text += ',';
      *text += std::to_string(path);
      for (int i = 0; i < L->n; ++i) {
        std::snprintf(buf, sizeof(buf), ",%.17g", x(i));
        *text += buf;
      }
      for (int i = 0; i < L->m; ++i) {
        std::snprintf(buf, sizeof(buf), ",%.17g", u(i));
        *text += buf;
      }
      *text += '\n';
    }
    void increment(long long, double) {}
  };

  bool ok = parallel_chunks<std::string>(
      cfg.paths, cfg.workers,
      [&](long long b, long long e, std::string& text) {
        for (long long path = b; path < e; ++path) {
          CsvAcc acc{&L, &text, path, {}};
          if (!walk_path(L, p.x0, path, acc)) return false;
        }
        return true;
      },
      [&](std::string&& text) { out << text; });
  if (!ok) throw OverflowError();
}

/// E integral_0^T xi^T Psi xi dt for the centered state xi = X - E[X];
/// used by the completion-of-squares check.
CenteredQuadEstimate centered_quadratic_integral(const MfLqProblem& p,
                                                 const FeedbackPolicy& policy,
                                                 const SimConfig& cfg,
                                                 const Matrix& Psi) {
  validate_cfg(cfg);
  validate_policy(p, policy);
  CenteredQuadEstimate est;
  Loop L = build_loop(p, policy, cfg.dt, cfg.horizon, cfg.seed);
  if (L.mean_overflow) {
    est.divergent = true;
    est.value = std::numeric_limits<double>::infinity();
    return est;
  }

  struct Partial {
    double sum = 0.0;
    double sum2 = 0.0;
  };
  Partial total;

  struct QuadAcc {
    const Loop* L;
    const Matrix* Psi;
    double integral = 0.0;
    void visit(long long k, const Vector&, const Vector& xi, const Vector&) {
      const double val = xi.dot(*Psi * xi);
      integral += (k == 0 || k == L->steps ? 0.5 : 1.0) * val * L->dt;
    }
    void increment(long long, double) {}
  };

  bool ok = parallel_chunks<Partial>(
      cfg.paths, cfg.workers,
      [&](long long b, long long e, Partial& part) {
        for (long long path = b; path < e; ++path) {
          QuadAcc acc{&L, &Psi};
          if (!walk_path(L, p.x0, path, acc)) return false;
          part.sum += acc.integral;
          part.sum2 += acc.integral * acc.integral;
        }
        return true;
      },
      [&](Partial&& part) {
        total.sum += part.sum;
        total.sum2 += part.sum2;
      });
  if (!ok) {
    est.divergent = true;
    est.value = std::numeric_limits<double>::infinity();
    return est;
  }
  const double np = static_cast<double>(cfg.paths);
  est.value = total.sum / np;
  const double var =
      cfg.paths > 1
          ? std::max(0.0, (total.sum2 - np * est.value * est.value) / (np - 1.0))
          : 0.0;
  est.std_error = std::sqrt(var / np);
  return est;
}

}  // namespace mflq::sim
