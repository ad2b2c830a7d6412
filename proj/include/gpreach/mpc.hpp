#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "model.hpp"
#include "plants.hpp"
#include "qp.hpp"
#include "reachability.hpp"
#include "sampler.hpp"

namespace gpreach {

// ---------------------------------------------------------------------------
// Problem data

/**
 * @brief Multi-sample OCP with shared inputs.
 *
 * Predicted inputs are u^n_i = K (x^n_i - x_eq) + v_i. The decision variable
 * is the shared sequence v; with K = 0 it is the input sequence itself.
 */
struct OcpConfig
{
  Index H{1};
  MatrixXd Q, R;
  VectorXd x_ref, u_ref;
  MatrixXd Pf;                  ///< terminal cost weight
  VectorXd x_eq, u_eq;          ///< terminal equilibrium
  MatrixXd K;                   ///< prediction feedback, nu x nx (zero for open loop)
  Polytope X, U;
  double rho{std::numeric_limits<double>::infinity()};   ///< terminal level in the Pf norm; inf disables
  Tightenings tight;            ///< c (H entries) and Delta (H+1 entries)
  Metric metric;                ///< metric of the tightening balls
  double hess_reg{1e-8};
  double feas_tol{1e-9};
  double kkt_tol{1e-6};
  int sqp_iters{1};             ///< iterations per call (1 = real-time iteration)
  int max_sqp_iters{20};        ///< keep iterating while the iterate is infeasible

  Index nx() const { return Q.rows(); }
  Index nu() const { return R.rows(); }
  Index nv() const { return H * nu(); }

  void validate() const
  {
    if (H < 1) { throw ConfigError("horizon must be >= 1"); }
    const Index n = Q.rows(), m = R.rows();
    if (Q.cols() != n || Pf.rows() != n || Pf.cols() != n || R.cols() != m) {
      throw ConfigError("cost matrices have inconsistent sizes");
    }
    if (x_ref.size() != n || x_eq.size() != n || u_ref.size() != m || u_eq.size() != m) {
      throw ConfigError("reference or equilibrium has the wrong size");
    }
    if (K.rows() != m || K.cols() != n) { throw ConfigError("prediction feedback must be nu x nx"); }
    if ((Q - Q.transpose()).norm() > 1e-12 * (1.0 + Q.norm()) || (Pf - Pf.transpose()).norm() > 1e-12 * (1.0 + Pf.norm())) {
      throw ConfigError("Q and P_f must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> eq(Q), ep(Pf), er(R);
    if (eq.eigenvalues().minCoeff() < -1e-12 || ep.eigenvalues().minCoeff() < -1e-12) {
      throw ConfigError("Q and P_f must be positive semidefinite");
    }
    if (er.eigenvalues().minCoeff() <= 0.0) { throw ConfigError("R must be positive definite"); }
    if (X.A.cols() != n || U.A.cols() != m) { throw ConfigError("constraint polytopes have the wrong width"); }
    if (tight.c.size() != H || tight.Delta.size() != H + 1) { throw ConfigError("tightenings must match the horizon"); }
    if (tight.Delta(0) != 0.0) { throw ConfigError("Delta_0 must be 0"); }
    if (std::isfinite(rho) && terminal_radius() <= 0.0) {
      throw ConfigError("terminal set is smaller than the last tightening c_{H-1}");
    }
  }

  /// Largest Pf-norm of a vector with unit norm in the tightening metric.
  double metric_ratio() const
  {
    const MatrixXd S = sym_sqrt(Pf);
    if (!metric.is_weighted()) { return spectral_norm(S); }
    return spectral_norm(S * sym_inv_sqrt(metric.weight()));
  }

  /// Radius of X_f minus a c_{H-1} ball, in the Pf norm.
  double terminal_radius() const { return rho - tight.c(H - 1) * metric_ratio(); }

  double stage_cost(const VectorXd & x, const VectorXd & u) const
  {
    const VectorXd dx = x - x_ref, du = u - u_ref;
    return dx.dot(Q * dx) + du.dot(R * du);
  }

  double terminal_cost(const VectorXd & x) const
  {
    const VectorXd dx = x - x_eq;
    return dx.dot(Pf * dx);
  }

  VectorXd input(const VectorXd & x, const VectorXd & v) const { return K * (x - x_eq) + v; }
};

/// Zero tightenings for nominal problems.
inline Tightenings no_tightening(Index H)
{
  Tightenings t;
  t.c     = VectorXd::Zero(H);
  t.Delta = VectorXd::Zero(H + 1);
  return t;
}

/// Partials of x -> f(x, u) + B_d(x) g(z(x, u)) with respect to x and u.
inline void dynamics_partials(const KnownModel & plant, const DynamicsFunction & g, const VectorXd & x,
                              const VectorXd & u, const VectorXd & gv, MatrixXd & A, MatrixXd & B)
{
  const VectorXd z = plant.gp_input(x, u);
  MatrixXd Sx, Su;
  plant.known_partials(x, u, gv, A, B);
  plant.gp_input_selectors(Sx, Su);
  const MatrixXd BJ = plant.Bd(x) * g.jacobian(z);
  A += BJ * Sx;
  B += BJ * Su;
}

// ---------------------------------------------------------------------------
// Sample set

struct Removal
{
  Index time{0};
  Index sample{0};
  Index stage{0};
  double deviation{0.0};
  double bound{0.0};
};

/**
 * @brief All N sampled dynamics plus the indices still consistent with the data.
 *
 * `active` only ever shrinks. Samples may be any DynamicsFunction, so a
 * constructed function can sit next to GP samples.
 */
struct SampleSet
{
  std::vector<std::shared_ptr<DynamicsFunction>> samples;
  std::vector<Index> active;
  std::vector<Removal> removals;

  static SampleSet all(std::vector<std::shared_ptr<DynamicsFunction>> s)
  {
    SampleSet set;
    set.samples = std::move(s);
    for (Index i = 0; i < static_cast<Index>(set.samples.size()); ++i) { set.active.push_back(i); }
    return set;
  }

  std::vector<const DynamicsFunction *> active_functions() const
  {
    std::vector<const DynamicsFunction *> out;
    for (Index i : active) { out.push_back(samples[static_cast<size_t>(i)].get()); }
    return out;
  }

  bool is_active(Index i) const { return std::find(active.begin(), active.end(), i) != active.end(); }
};

// ---------------------------------------------------------------------------
// Condensed evaluation

namespace detail {

struct OcpEval
{
  std::vector<std::vector<VectorXd>> x, u;   ///< [n][i]
  std::vector<std::vector<MatrixXd>> S;      ///< dx_i / dv, [n][i]
  double J{0.0};
  VectorXd grad;
  MatrixXd hess;
  VectorXd c;      ///< constraint values, feasible when <= 0
  MatrixXd Jc;     ///< constraint gradients
  std::vector<bool> soft;   ///< rows the elastic phase may relax
  double viol_max{0.0};
  double viol_sum{0.0};
  bool finite{true};
};

inline Index rows_per_sample(const OcpConfig & cfg)
{
  return cfg.H * (cfg.X.rows() + cfg.U.rows()) + (std::isfinite(cfg.rho) ? 1 : 0);
}

/// State-row and input-row right-hand sides after tightening, [i][row].
inline void tightened_rhs(const OcpConfig & cfg, MatrixXd & bx, MatrixXd & bu)
{
  const Index H = cfg.H;
  bx.resize(H + 1, cfg.X.rows());
  bu.resize(H, cfg.U.rows());
  VectorXd wx(cfg.X.rows()), wu(cfg.U.rows());
  for (Index r = 0; r < cfg.X.rows(); ++r) { wx(r) = cfg.metric.dual_norm(cfg.X.A.row(r).transpose()); }
  for (Index r = 0; r < cfg.U.rows(); ++r) {
    wu(r) = cfg.metric.dual_norm(cfg.K.transpose() * cfg.U.A.row(r).transpose());
  }
  for (Index i = 0; i <= H; ++i) { bx.row(i) = (cfg.X.b - cfg.tight.Delta(i) * wx).transpose(); }
  for (Index i = 0; i < H; ++i) { bu.row(i) = (cfg.U.b - cfg.tight.Delta(i) * wu).transpose(); }
}

inline OcpEval evaluate(const OcpConfig & cfg, const KnownModel & plant, const std::vector<const DynamicsFunction *> & fns,
                        const VectorXd & x0, const VectorXd & v, bool sens)
{
  const Index H = cfg.H, nx = cfg.nx(), nu = cfg.nu(), nv = cfg.nv();
  const Index N = static_cast<Index>(fns.size());
  const Index rps = rows_per_sample(cfg);
  MatrixXd bx, bu;
  tightened_rhs(cfg, bx, bu);
  const double r_in = std::isfinite(cfg.rho) ? cfg.terminal_radius() : 0.0;

  OcpEval e;
  e.x.assign(static_cast<size_t>(N), {});
  e.u.assign(static_cast<size_t>(N), {});
  e.c.resize(N * rps);
  e.soft.assign(static_cast<size_t>(N * rps), true);
  // Pure input bounds stay hard; with feedback they depend on the state.
  const bool hard_inputs = cfg.K.cwiseAbs().maxCoeff() == 0.0;
  if (sens) {
    e.S.assign(static_cast<size_t>(N), {});
    e.grad = VectorXd::Zero(nv);
    e.hess = MatrixXd::Zero(nv, nv);
    e.Jc.resize(N * rps, nv);
  }

  MatrixXd A, B;
  for (Index n = 0; n < N; ++n) {
    const DynamicsFunction & g = *fns[static_cast<size_t>(n)];
    auto & xs = e.x[static_cast<size_t>(n)];
    auto & us = e.u[static_cast<size_t>(n)];
    xs.push_back(x0);
    MatrixXd S = MatrixXd::Zero(nx, nv);
    std::vector<MatrixXd> Ss{S};
    for (Index i = 0; i < H; ++i) {
      const VectorXd & x = xs.back();
      const VectorXd u   = cfg.input(x, v.segment(i * nu, nu));
      const VectorXd gv  = g.value(plant.gp_input(x, u));
      VectorXd xn        = plant.step(x, u, gv);
      if (!xn.allFinite()) {
        e.finite = false;
        return e;
      }
      if (sens) {
        dynamics_partials(plant, g, x, u, gv, A, B);
        MatrixXd dU = cfg.K * S;
        dU.middleCols(i * nu, nu) += MatrixXd::Identity(nu, nu);
        S = A * S + B * dU;
        Ss.push_back(S);
      }
      us.push_back(u);
      xs.push_back(std::move(xn));
    }

    // Cost.
    for (Index i = 0; i < H; ++i) { e.J += cfg.stage_cost(xs[static_cast<size_t>(i)], us[static_cast<size_t>(i)]); }
    e.J += cfg.terminal_cost(xs.back());

    // Constraints, ordered per sample: stage i state rows (i = 1..H), input rows (i = 0..H-1), terminal.
    Index row = n * rps;
    for (Index i = 1; i <= H; ++i) {
      const VectorXd ax = cfg.X.A * xs[static_cast<size_t>(i)];
      for (Index r = 0; r < cfg.X.rows(); ++r) {
        e.c(row) = ax(r) - bx(i, r);
        if (sens) { e.Jc.row(row) = cfg.X.A.row(r) * Ss[static_cast<size_t>(i)]; }
        ++row;
      }
    }
    for (Index i = 0; i < H; ++i) {
      const VectorXd au = cfg.U.A * us[static_cast<size_t>(i)];
      MatrixXd dU;
      if (sens) {
        dU = cfg.K * Ss[static_cast<size_t>(i)];
        dU.middleCols(i * nu, nu) += MatrixXd::Identity(nu, nu);
      }
      for (Index r = 0; r < cfg.U.rows(); ++r) {
        e.c(row)                         = au(r) - bu(i, r);
        e.soft[static_cast<size_t>(row)] = !hard_inputs;
        if (sens) { e.Jc.row(row) = cfg.U.A.row(r) * dU; }
        ++row;
      }
    }
    if (std::isfinite(cfg.rho)) {
      const VectorXd dx = xs.back() - cfg.x_eq;
      e.c(row)          = dx.dot(cfg.Pf * dx) - r_in * r_in;
      if (sens) { e.Jc.row(row) = 2.0 * dx.transpose() * cfg.Pf * Ss.back(); }
      ++row;
    }

    if (sens) {
      // Gauss-Newton model of the sample's cost.
      for (Index i = 0; i < H; ++i) {
        const MatrixXd & Si = Ss[static_cast<size_t>(i)];
        MatrixXd dU         = cfg.K * Si;
        dU.middleCols(i * nu, nu) += MatrixXd::Identity(nu, nu);
        const MatrixXd QS = cfg.Q * Si, RU = cfg.R * dU;
        e.hess.noalias() += 2.0 * (Si.transpose() * QS + dU.transpose() * RU);
        e.grad.noalias() += 2.0 * (QS.transpose() * (xs[static_cast<size_t>(i)] - cfg.x_ref)
                                   + RU.transpose() * (us[static_cast<size_t>(i)] - cfg.u_ref));
      }
      const MatrixXd PS = cfg.Pf * Ss.back();
      e.hess.noalias() += 2.0 * Ss.back().transpose() * PS;
      e.grad.noalias() += 2.0 * PS.transpose() * (xs.back() - cfg.x_eq);
      e.S[static_cast<size_t>(n)] = std::move(Ss);
    }
  }
  const VectorXd pos = e.c.cwiseMax(0.0);
  e.viol_max         = e.c.size() > 0 ? pos.maxCoeff() : 0.0;
  e.viol_sum         = pos.sum();
  return e;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SQP

enum class OcpStatus { Converged, Feasible, Infeasible };

inline const char * to_string(OcpStatus s)
{
  switch (s) {
  case OcpStatus::Converged: return "converged";
  case OcpStatus::Feasible: return "feasible";
  case OcpStatus::Infeasible: return "infeasible";
  }
  return "?";
}

struct OcpSolution
{
  OcpStatus status{OcpStatus::Infeasible};
  VectorXd v;                                  ///< shared input sequence, H * nu
  std::vector<std::vector<VectorXd>> x;        ///< [n][i], n over the active samples
  std::vector<std::vector<VectorXd>> u;        ///< [n][i], realized inputs
  double objective{0.0};                       ///< sample-summed cost
  double kkt_residual{std::numeric_limits<double>::infinity()};
  double max_violation{0.0};
  int iterations{0};
  std::vector<Index> violated_rows;            ///< constraint rows still violated (infeasible case)

  bool feasible() const { return status != OcpStatus::Infeasible; }
  /// First input; the same for every sample because x_0 is shared.
  VectorXd first_input() const { return u.front().front(); }
};

namespace detail {

/// Scaled KKT residual of the condensed NLP at `e` with inequality multipliers `lam`.
inline double kkt_residual(const OcpEval & e, const VectorXd & lam)
{
  const double scale = 1.0 + (e.grad.size() > 0 ? e.grad.cwiseAbs().maxCoeff() : 0.0);
  double r           = 0.0;
  if (e.grad.size() > 0) {
    VectorXd st = e.grad;
    if (lam.size() == e.c.size() && lam.size() > 0) { st.noalias() += e.Jc.transpose() * lam; }
    r = st.cwiseAbs().maxCoeff() / scale;
  }
  r = std::max(r, e.viol_max);
  if (lam.size() == e.c.size() && lam.size() > 0) {
    r = std::max(r, lam.cwiseProduct(e.c).cwiseAbs().maxCoeff() / scale);
  }
  return r;
}

}  // namespace detail

/**
 * @brief Condensed SQP on the shared inputs.
 *
 * Each iteration linearizes every sample rollout, solves a dense QP (falling
 * back to a single-slack elastic QP when the linearization is infeasible) and
 * line-searches an l1 merit function. Starting from a feasible iterate, trial
 * points must stay feasible, so a real-time iteration never returns an
 * infeasible plan it was handed as feasible.
 */
inline OcpSolution solve_ocp(const OcpConfig & cfg, const KnownModel & plant,
                             const std::vector<const DynamicsFunction *> & fns, const VectorXd & x_now,
                             const std::optional<VectorXd> & warm = std::nullopt, int iterations = -1,
                             int max_iterations = -1)
{
  cfg.validate();
  if (fns.empty()) { throw CertificateViolated("sample set is empty"); }
  require_dim(x_now.size(), cfg.nx(), "solve_ocp x_now");
  const Index nv = cfg.nv(), nu = cfg.nu();
  const int iters     = iterations > 0 ? iterations : cfg.sqp_iters;
  const int max_iters = std::max(iters, max_iterations > 0 ? max_iterations : cfg.max_sqp_iters);

  VectorXd v(nv);
  if (warm) {
    require_dim(warm->size(), nv, "solve_ocp warm start");
    v = *warm;
  } else {
    for (Index i = 0; i < cfg.H; ++i) { v.segment(i * nu, nu) = cfg.u_eq; }
  }

  detail::OcpEval e = detail::evaluate(cfg, plant, fns, x_now, v, true);
  if (!e.finite) { throw NumericalError("OCP rollout from the warm start is not finite"); }
  VectorXd lam = VectorXd::Zero(e.c.size());
  double mu    = 10.0;
  bool moved   = false;
  int it       = 0;
  bool stalled = false;

  for (; it < max_iters; ++it) {
    if (it >= iters && e.viol_max <= cfg.feas_tol) { break; }

    QpProblem qp;
    const double reg = cfg.hess_reg * (1.0 + e.hess.trace() / static_cast<double>(nv));
    qp.G             = e.hess + reg * MatrixXd::Identity(nv, nv);
    qp.g             = e.grad;
    qp.Aeq.resize(0, nv);
    qp.beq.resize(0);
    qp.Ain = e.Jc;
    qp.bin = -e.c;
    DualActiveSetQp solver;
    QpSolution s = solver.solve(qp);
    VectorXd d;
    if (s.status == QpStatus::Optimal) {
      d   = s.x;
      lam = s.lambda_in;
    } else {
      // Elastic mode: one slack relaxes every soft row, penalized linearly.
      const double M = std::max(mu, 1e3 * (1.0 + qp.g.cwiseAbs().maxCoeff()));
      QpProblem el;
      el.G                          = MatrixXd::Zero(nv + 1, nv + 1);
      el.G.topLeftCorner(nv, nv)    = qp.G;
      el.G(nv, nv)                  = reg;
      el.g                          = VectorXd::Zero(nv + 1);
      el.g.head(nv)                 = qp.g;
      el.g(nv)                      = M;
      el.Aeq.resize(0, nv + 1);
      el.beq.resize(0);
      el.Ain.resize(qp.Ain.rows() + 1, nv + 1);
      el.Ain.topLeftCorner(qp.Ain.rows(), nv) = qp.Ain;
      for (Index r = 0; r < qp.Ain.rows(); ++r) { el.Ain(r, nv) = e.soft[static_cast<size_t>(r)] ? -1.0 : 0.0; }
      el.Ain.row(qp.Ain.rows()).setZero();
      el.Ain(qp.Ain.rows(), nv) = -1.0;
      el.bin.resize(qp.bin.size() + 1);
      el.bin << qp.bin, 0.0;
      QpSolution se = solver.solve(el);
      if (se.status != QpStatus::Optimal) { throw NumericalError(std::string("elastic QP failed: ") + to_string(se.status)); }
      d   = se.x.head(nv);
      lam = se.lambda_in.head(qp.Ain.rows());
    }
    mu = std::max(mu, 2.0 * (lam.size() > 0 ? lam.maxCoeff() : 0.0) + 1.0);

    const double merit0 = e.J + mu * e.viol_sum;
    const double D      = std::min(0.0, e.grad.dot(d) - mu * e.viol_sum);
    const bool keep_feasible = e.viol_max <= cfg.feas_tol;
    double alpha             = 1.0;
    bool ok                  = false;
    for (int ls = 0; ls < 30; ++ls) {
      const detail::OcpEval t = detail::evaluate(cfg, plant, fns, x_now, v + alpha * d, false);
      if (t.finite) {
        const double merit = t.J + mu * t.viol_sum;
        ok = merit <= merit0 + 1e-4 * alpha * D + 1e-12 * std::abs(merit0);
        if (keep_feasible) { ok = ok && t.viol_max <= cfg.feas_tol; }
        if (ok) { break; }
      }
      alpha *= 0.5;
    }
    if (!ok) {
      stalled = true;
      break;
    }
    const VectorXd step = alpha * d;
    v += step;
    moved = true;
    e     = detail::evaluate(cfg, plant, fns, x_now, v, true);
    if (!e.finite) { throw NumericalError("OCP rollout became non-finite after a step"); }
    const double small = 1e-10 * (1.0 + v.cwiseAbs().maxCoeff());
    if (e.viol_max <= cfg.feas_tol && (step.cwiseAbs().maxCoeff() <= small || detail::kkt_residual(e, lam) <= cfg.kkt_tol)
        && it + 1 >= iters) {
      ++it;
      break;
    }
  }
  (void)moved;
  (void)stalled;

  OcpSolution sol;
  sol.v             = v;
  sol.x             = std::move(e.x);
  sol.u             = std::move(e.u);
  sol.objective     = e.J;
  sol.iterations    = it;
  sol.max_violation = e.viol_max;
  sol.kkt_residual  = detail::kkt_residual(e, lam);
  if (e.viol_max > cfg.feas_tol) {
    sol.status = OcpStatus::Infeasible;
    for (Index r = 0; r < e.c.size(); ++r) {
      if (e.c(r) > cfg.feas_tol) { sol.violated_rows.push_back(r); }
    }
  } else {
    sol.status = sol.kkt_residual <= cfg.kkt_tol ? OcpStatus::Converged : OcpStatus::Feasible;
  }
  return sol;
}

// ---------------------------------------------------------------------------
// Sample-set falsification

/// Shifted candidate v' = (v_1, ..., v_{H-1}, u_eq); the last stage applies the terminal law.
inline VectorXd shifted_candidate(const OcpConfig & cfg, const VectorXd & v)
{
  const Index nu = cfg.nu(), H = cfg.H;
  VectorXd out(cfg.nv());
  if (H > 1) { out.head((H - 1) * nu) = v.tail((H - 1) * nu); }
  out.tail(nu) = cfg.u_eq;
  return out;
}

/**
 * @brief Removes every active sample whose re-prediction from x_next strays
 * more than c_i from its previous prediction, and returns the candidate.
 *
 * `prev` must have been computed on the current active set, in order.
 * Throws CertificateViolated when no sample survives.
 */
inline VectorXd update_sample_set(SampleSet & set, const OcpConfig & cfg, const KnownModel & plant,
                                  const OcpSolution & prev, const VectorXd & x_next, Index time)
{
  if (prev.x.size() != set.active.size()) { throw DimensionError("previous solution does not match the active set"); }
  const VectorXd cand = shifted_candidate(cfg, prev.v);
  std::vector<Index> keep;
  for (size_t j = 0; j < set.active.size(); ++j) {
    const Index n = set.active[j];
    const DynamicsFunction * g = set.samples[static_cast<size_t>(n)].get();
    const detail::OcpEval e    = detail::evaluate(cfg, plant, {g}, x_next, cand, false);
    bool ok                    = e.finite;
    Index bad_stage            = 0;
    double bad_dev             = std::numeric_limits<double>::infinity();
    for (Index i = 0; ok && i < cfg.H; ++i) {
      const double dev = cfg.metric.norm(e.x[0][static_cast<size_t>(i)] - prev.x[j][static_cast<size_t>(i + 1)]);
      const double c   = cfg.tight.c(i);
      if (!(dev <= c * (1.0 + 1e-9) + 1e-12)) {
        ok        = false;
        bad_stage = i;
        bad_dev   = dev;
      }
    }
    if (ok) {
      keep.push_back(n);
    } else {
      set.removals.push_back(Removal{time, n, bad_stage, bad_dev, cfg.tight.c(bad_stage)});
    }
  }
  set.active = std::move(keep);
  if (set.active.empty()) {
    throw CertificateViolated("every sample was falsified at step " + std::to_string(time));
  }
  return cand;
}

// ---------------------------------------------------------------------------
// Terminal ingredients

/// Discrete algebraic Riccati equation by the structure-preserving doubling algorithm.
inline MatrixXd solve_dare(const MatrixXd & A, const MatrixXd & B, const MatrixXd & Q, const MatrixXd & R)
{
  const Index n = A.rows();
  MatrixXd Ak = A;
  MatrixXd Gk = B * R.llt().solve(B.transpose());
  MatrixXd Hk = Q;
  const MatrixXd I = MatrixXd::Identity(n, n);
  for (int k = 0; k < 200; ++k) {
    const Eigen::PartialPivLU<MatrixXd> W(I + Gk * Hk);
    const MatrixXd WA  = W.solve(Ak);
    const MatrixXd WG  = W.solve(Gk);
    const MatrixXd Hn  = Hk + Ak.transpose() * Hk * WA;
    Gk                 = Gk + Ak * WG * Ak.transpose();
    Ak                 = Ak * WA;
    const double delta = (Hn - Hk).norm();
    Hk                 = 0.5 * (Hn + Hn.transpose());
    if (!Hk.allFinite()) { break; }
    if (delta <= 1e-13 * (1.0 + Hk.norm())) {
      const MatrixXd BtP = B.transpose() * Hk;
      const MatrixXd res = A.transpose() * Hk * A - Hk + Q
                           - A.transpose() * Hk * B * (R + BtP * B).ldlt().solve(BtP * A);
      if (res.norm() > 1e-8 * (1.0 + Hk.norm())) { break; }
      return Hk;
    }
  }
  throw NumericalError("Riccati iteration did not converge (is (A, B) stabilizable?)");
}

/// u = K x gain of the LQR with cost-to-go P.
inline MatrixXd lqr_gain(const MatrixXd & A, const MatrixXd & B, const MatrixXd & R, const MatrixXd & P)
{
  const MatrixXd BtP = B.transpose() * P;
  return -(R + BtP * B).ldlt().solve(BtP * A);
}

/**
 * @brief Smallest gamma with gamma (P - Acl^T P Acl) >= (1 - margin)(Q + K^T R K) for all closed loops.
 *
 * Returns +inf (and sets `worst`) if some closed loop is not contracting in P.
 */
inline double lyapunov_inflation(const MatrixXd & P, const MatrixXd & K, const std::vector<MatrixXd> & As,
                                 const std::vector<MatrixXd> & Bs, const MatrixXd & Q, const MatrixXd & R,
                                 double margin, Index * worst = nullptr)
{
  const MatrixXd W = (1.0 - margin) * (Q + K.transpose() * R * K);
  double gamma     = 0.0;
  for (size_t n = 0; n < As.size(); ++n) {
    const MatrixXd Acl = As[n] + Bs[n] * K;
    MatrixXd M         = P - Acl.transpose() * P * Acl;
    M                  = 0.5 * (M + M.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
    if (es.eigenvalues().minCoeff() <= 1e-14 * (1.0 + P.norm())) {
      if (worst) { *worst = static_cast<Index>(n); }
      return std::numeric_limits<double>::infinity();
    }
    const MatrixXd Mi = es.operatorInverseSqrt();
    Eigen::SelfAdjointEigenSolver<MatrixXd> ew(Mi * W * Mi);
    const double g = ew.eigenvalues().maxCoeff();
    if (g > gamma) {
      gamma = g;
      if (worst) { *worst = static_cast<Index>(n); }
    }
  }
  return gamma;
}

struct TerminalIngredients
{
  MatrixXd P;            ///< terminal cost weight
  MatrixXd K;            ///< u_f = K (x - x_eq) + u_eq
  VectorXd x_eq, u_eq;
  double rho{0.0};       ///< X_f = {||x - x_eq||_P <= rho}
  double rho_max{0.0};   ///< largest level inside the tightened constraints
  double contraction{0.0};
  double ell_s{0.0};
  double inflation{1.0};
};

/// Input that makes x_eq a fixed point of the mean dynamics (Gauss-Newton on f + B_d g - x_eq).
inline VectorXd equilibrium_input(const KnownModel & plant, const DynamicsFunction & g, const VectorXd & x_eq,
                                  VectorXd u, double tol = 1e-12)
{
  MatrixXd A, B;
  for (int it = 0; it < 50; ++it) {
    const VectorXd gv = g.value(plant.gp_input(x_eq, u));
    const VectorXd r  = plant.step(x_eq, u, gv) - x_eq;
    if (r.norm() <= tol) { return u; }
    dynamics_partials(plant, g, x_eq, u, gv, A, B);
    u -= B.completeOrthogonalDecomposition().solve(r);
  }
  const VectorXd r = plant.step(x_eq, u, g.value(plant.gp_input(x_eq, u))) - x_eq;
  if (r.norm() > 1e-8) { throw NumericalError("no equilibrium input found for the requested state"); }
  return u;
}

/**
 * @brief Riccati design on the mean linearization, inflated into a common
 * Lyapunov certificate for every sampled linearization.
 */
inline TerminalIngredients design_terminal_controller(const KnownModel & plant, const DynamicsFunction & mean,
                                                      const std::vector<const DynamicsFunction *> & lin_samples,
                                                      const VectorXd & x_eq, const VectorXd & u_eq, const MatrixXd & Q,
                                                      const MatrixXd & R, double margin = 0.05)
{
  MatrixXd A, B;
  dynamics_partials(plant, mean, x_eq, u_eq, mean.value(plant.gp_input(x_eq, u_eq)), A, B);
  TerminalIngredients t;
  t.x_eq = x_eq;
  t.u_eq = u_eq;
  t.P    = solve_dare(A, B, Q, R);
  t.K    = lqr_gain(A, B, R, t.P);
  std::vector<MatrixXd> As{A}, Bs{B};
  for (const auto * g : lin_samples) {
    MatrixXd An, Bn;
    dynamics_partials(plant, *g, x_eq, u_eq, g->value(plant.gp_input(x_eq, u_eq)), An, Bn);
    As.push_back(An);
    Bs.push_back(Bn);
  }
  Index worst       = -1;
  const double gmin = lyapunov_inflation(t.P, t.K, As, Bs, Q, R, margin, &worst);
  if (!std::isfinite(gmin)) {
    throw InfeasibleError("no common Lyapunov certificate found (worst sample " + std::to_string(worst - 1) + ")");
  }
  t.inflation = std::max(1.0, gmin);
  t.P *= t.inflation;
  return t;
}

/**
 * @brief Largest terminal level that is robustly invariant for every sample.
 *
 * Starts at the level touching the Delta_{H-1}-tightened state and input
 * constraints and shrinks by 10% until f + B_d g^n maps validation points of
 * X_f into X_f minus a c_{H-1} ball. Also records the decrease offset ell_s.
 */
inline void select_terminal_level(TerminalIngredients & t, const KnownModel & plant,
                                  const std::vector<const DynamicsFunction *> & samples, const Polytope & X,
                                  const Polytope & U, const Metric & metric, double c_last, double delta_prev,
                                  const MatrixXd & Q, const MatrixXd & R, const VectorXd & x_ref, const VectorXd & u_ref,
                                  Index n_dirs = 64, std::uint64_t seed = 3)
{
  const Index nx    = t.x_eq.size();
  const MatrixXd Pi = sym_inv_sqrt(t.P);
  double rmax       = std::numeric_limits<double>::infinity();
  for (Index r = 0; r < X.rows(); ++r) {
    const VectorXd a = X.A.row(r).transpose();
    const double w   = (Pi * a).norm();
    if (w > 0.0) { rmax = std::min(rmax, (X.b(r) - a.dot(t.x_eq) - metric.dual_norm(a) * delta_prev) / w); }
  }
  for (Index r = 0; r < U.rows(); ++r) {
    const VectorXd a  = U.A.row(r).transpose();
    const VectorXd ka = t.K.transpose() * a;
    const double w    = (Pi * ka).norm();
    const double room = U.b(r) - a.dot(t.u_eq) - metric.dual_norm(ka) * delta_prev;
    if (w > 0.0) {
      rmax = std::min(rmax, room / w);
    } else if (room < 0.0) {
      rmax = -1.0;
    }
  }
  if (!(rmax > 0.0) || !std::isfinite(rmax)) {
    throw InfeasibleError("terminal equilibrium violates the tightened constraints");
  }
  t.rho_max = rmax;

  // Pf-norm size of a c_{H-1} ball in the tightening metric.
  const double ratio = metric.is_weighted() ? spectral_norm(sym_sqrt(t.P) * sym_inv_sqrt(metric.weight()))
                                            : spectral_norm(sym_sqrt(t.P));
  const double shrink = c_last * ratio;

  RngStream rng(seed, 0x7e57ULL);
  std::vector<VectorXd> dirs;
  for (Index i = 0; i < nx; ++i) {
    dirs.push_back(VectorXd::Unit(nx, i));
    dirs.push_back(-VectorXd::Unit(nx, i));
  }
  for (Index j = 0; j < n_dirs; ++j) {
    VectorXd d = rng.normals(nx);
    dirs.push_back(d / d.norm());
  }
  const double scales[] = {1.0, 0.75, 0.5, 0.25, 0.0};

  auto F = [&](const DynamicsFunction & g, const VectorXd & x, VectorXd & u) {
    u = t.K * (x - t.x_eq) + t.u_eq;
    return plant.step(x, u, g.value(plant.gp_input(x, u)));
  };

  double rho = rmax;
  for (int shrink_step = 0; shrink_step < 80; ++shrink_step, rho *= 0.9) {
    if (rho <= shrink) { break; }
    bool ok = true;
    double contraction = 0.0, ell_s = 0.0;
    for (const auto * g : samples) {
      for (const auto & d : dirs) {
        for (double s : scales) {
          const VectorXd x = t.x_eq + s * rho * (Pi * d);
          VectorXd u;
          const VectorXd xn  = F(*g, x, u);
          const VectorXd dn  = xn - t.x_eq, dx = x - t.x_eq;
          const double after = std::sqrt(std::max(0.0, dn.dot(t.P * dn)));
          if (!(after <= rho - shrink)) { ok = false; }
          if (s == 1.0) { contraction = std::max(contraction, after / rho); }
          const VectorXd ex = x - x_ref, eu = u - u_ref;
          const double l    = ex.dot(Q * ex) + eu.dot(R * eu);
          ell_s             = std::max(ell_s, dn.dot(t.P * dn) - dx.dot(t.P * dx) + l);
        }
        if (!ok) { break; }
      }
      if (!ok) { break; }
    }
    if (ok) {
      t.rho         = rho;
      t.contraction = contraction;
      t.ell_s       = ell_s;
      return;
    }
  }
  throw InfeasibleError("no common Lyapunov certificate found: no robustly invariant terminal level");
}

// ---------------------------------------------------------------------------
// Cost-decrease constants

struct CostConstants
{
  double K1{0.0}, K2{0.0}, Lc{0.0};
};

/// K1 = |B_d|(sum_{i<=H-2} L^i L_l + L^{H-1} L_f), K2 as in the one-step decrease bound, Lc = K1 wbar + K2 eps.
inline CostConstants cost_constants(double bd_norm, double L, double L_ell, double L_f, Index H, double wbar, double eps)
{
  if (H < 1) { throw ConfigError("horizon must be >= 1"); }
  double s1 = 0.0, s2 = 0.0, geo = 0.0, Li = 1.0;   // geo = sum_{j<i} L^j
  for (Index i = 0; i <= H - 2; ++i) {
    s1 += Li;
    s2 += Li + 2.0 * geo;
    geo += Li;
    Li *= L;
  }
  // Here Li = L^{H-1} and geo = sum_{j=0}^{H-2} L^j.
  CostConstants c;
  c.K1 = bd_norm * (s1 * L_ell + Li * L_f);
  c.K2 = bd_norm * (L_ell * s2 + L_f * (Li + 2.0 * geo));
  c.Lc = c.K1 * wbar + c.K2 * eps;
  return c;
}

/// Lipschitz bound of ||x - x_r||_W^2 over a set of radius r around x_r, in a metric with weight M: 2 ||M^{-1/2}|| ||W|| r.
inline double quadratic_lipschitz(const MatrixXd & W, double radius, const Metric & metric)
{
  const double inv = metric.is_weighted() ? spectral_norm(sym_inv_sqrt(metric.weight())) : 1.0;
  return 2.0 * inv * spectral_norm(W) * radius;
}

// ---------------------------------------------------------------------------
// Receding horizon

struct StepRecord
{
  Index k{0};
  VectorXd x, u;
  double stage_cost{0.0};
  Index n_active{0};
  bool feasible{false};
  bool applied{false};
  double J_star{0.0};
  double kkt{0.0};
  int sqp_iters{0};
  OcpStatus status{OcpStatus::Infeasible};
  bool decrease_ok{true};   ///< J*(k+1) - J*(k) <= |N_{k+1}| (L_c + ell_s - l(x, u))
  bool in_constraints{true};
};

struct RunLog
{
  std::vector<StepRecord> steps;
  std::vector<Removal> removals;
  std::string outcome{"ok"};   ///< ok | infeasible | certificate_violated
  std::vector<std::vector<std::vector<VectorXd>>> predictions;   ///< optional, [k][n][i]
};

struct RecedingOptions
{
  Index steps{0};
  int initial_iters{200};
  double Lc{0.0};
  double ell_s{0.0};
  bool commit_visited{true};
  bool record_predictions{false};
};

/// Average stage cost over the applied steps (all rows if none was applied).
inline double average_cost(const RunLog & log)
{
  if (log.steps.empty()) { throw ConfigError("average_cost needs a nonempty log"); }
  double s = 0.0;
  Index n  = 0;
  for (const auto & r : log.steps) {
    if (r.applied) {
      s += r.stage_cost;
      ++n;
    }
  }
  if (n == 0) {
    for (const auto & r : log.steps) { s += r.stage_cost; }
    n = static_cast<Index>(log.steps.size());
  }
  return s / static_cast<double>(n);
}

/**
 * @brief Solve, apply the first input to the true plant, falsify, repeat.
 *
 * Row k holds x(k) and the plan computed there; rows 0..T-1 were applied.
 * An infeasible OCP or an empty sample set ends the run and is recorded in
 * `outcome`.
 */
inline RunLog receding_horizon(const OcpConfig & cfg, TruePlant & plant, SampleSet & set, const VectorXd & x0,
                               const RecedingOptions & opt)
{
  RunLog log;
  const KnownModel & m = plant.model;
  auto box_ok = [&](const VectorXd & x, const VectorXd & u) {
    return cfg.X.max_violation(x) <= 1e-9 && cfg.U.max_violation(u) <= 1e-9;
  };

  OcpSolution sol = solve_ocp(cfg, m, set.active_functions(), x0, std::nullopt, opt.initial_iters, opt.initial_iters);
  VectorXd x      = x0;
  for (Index k = 0;; ++k) {
    StepRecord r;
    r.k         = k;
    r.x         = x;
    r.n_active  = static_cast<Index>(set.active.size());
    r.feasible  = sol.feasible();
    r.status    = sol.status;
    r.J_star    = sol.objective;
    r.kkt       = sol.kkt_residual;
    r.sqp_iters = sol.iterations;
    r.u         = sol.first_input();
    r.stage_cost     = cfg.stage_cost(x, r.u);
    r.in_constraints = box_ok(x, r.u);
    if (!log.steps.empty()) {
      const StepRecord & p = log.steps.back();
      r.decrease_ok = r.J_star - p.J_star
                      <= static_cast<double>(r.n_active) * (opt.Lc + opt.ell_s - p.stage_cost) + 1e-9 * (1.0 + p.J_star);
    }
    if (opt.record_predictions) { log.predictions.push_back(sol.x); }
    const bool last = k >= opt.steps || !sol.feasible();
    r.applied       = !last;
    log.steps.push_back(r);
    if (!sol.feasible()) {
      log.outcome = "infeasible";
      break;
    }
    if (last) { break; }

    const VectorXd u = r.u;
    const VectorXd z = m.gp_input(x, u);
    x                = plant.step(x, u);
    try {
      const VectorXd cand = update_sample_set(set, cfg, m, sol, x, k);
      if (opt.commit_visited) {
        for (Index n : set.active) {
          if (auto s = std::dynamic_pointer_cast<SampledDynamics>(set.samples[static_cast<size_t>(n)])) { s->sample_at(z); }
        }
      }
      sol = solve_ocp(cfg, m, set.active_functions(), x, cand);
    } catch (const CertificateViolated &) {
      log.outcome = "certificate_violated";
      StepRecord e;
      e.k        = k + 1;
      e.x        = x;
      e.u        = VectorXd::Constant(cfg.nu(), std::numeric_limits<double>::quiet_NaN());
      e.n_active = 0;
      log.steps.push_back(e);
      break;
    }
  }
  log.removals = set.removals;
  return log;
}

}  // namespace gpreach
