#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "linalg.hpp"

namespace gpreach {

/**
 * min 1/2 x^T G x + g^T x  s.t.  Aeq x = beq,  Ain x <= bin,  with G positive definite.
 */
struct QpProblem
{
  MatrixXd G;
  VectorXd g;
  MatrixXd Aeq;
  VectorXd beq;
  MatrixXd Ain;
  VectorXd bin;

  Index n() const { return G.rows(); }
  Index n_eq() const { return Aeq.rows(); }
  Index n_in() const { return Ain.rows(); }
};

enum class QpStatus { Optimal, Infeasible, DependentEqualities, MaxIterations, NotConvex };

inline const char * to_string(QpStatus s)
{
  switch (s) {
  case QpStatus::Optimal: return "optimal";
  case QpStatus::Infeasible: return "infeasible";
  case QpStatus::DependentEqualities: return "dependent_equalities";
  case QpStatus::MaxIterations: return "max_iterations";
  case QpStatus::NotConvex: return "not_convex";
  }
  return "?";
}

struct QpSolution
{
  QpStatus status{QpStatus::Optimal};
  VectorXd x;
  VectorXd lambda_in;   ///< >= 0, paired with Ain x <= bin
  VectorXd nu_eq;       ///< G x + g + Ain^T lambda + Aeq^T nu = 0
  std::vector<Index> active;   ///< active inequality rows at the solution
  double objective{0.0};
  int iterations{0};
  Index violated_row{-1};   ///< set when infeasible
};

/// Largest of stationarity, primal violation, dual sign and complementarity errors.
inline double qp_kkt_residual(const QpProblem & p, const QpSolution & s)
{
  VectorXd r = p.G * s.x + p.g;
  if (p.n_in() > 0) { r += p.Ain.transpose() * s.lambda_in; }
  if (p.n_eq() > 0) { r += p.Aeq.transpose() * s.nu_eq; }
  double res = r.cwiseAbs().maxCoeff();
  if (p.n_eq() > 0) { res = std::max(res, (p.Aeq * s.x - p.beq).cwiseAbs().maxCoeff()); }
  if (p.n_in() > 0) {
    const VectorXd slack = p.Ain * s.x - p.bin;
    res = std::max(res, slack.maxCoeff());
    res = std::max(res, (-s.lambda_in).maxCoeff());
    res = std::max(res, (slack.cwiseProduct(s.lambda_in)).cwiseAbs().maxCoeff());
  }
  return res;
}

/**
 * @brief Dense dual active-set QP solver (Goldfarb-Idnani).
 *
 * Starts from the unconstrained minimizer and adds the most violated
 * constraint each round, keeping J = L^{-T} Q and the triangular R of the
 * active normals up to date with Givens rotations. Only strictly convex
 * problems are accepted.
 */
class DualActiveSetQp
{
public:
  struct Options
  {
    double feas_tol{1e-10};   ///< a row counts as violated below -feas_tol * (1 + |b|)
    int max_iter{0};          ///< 0: 50 (n + m) + 100
  };

  QpSolution solve(const QpProblem & p) { return solve(p, Options{}); }

  QpSolution solve(const QpProblem & p, const Options & opt)
  {
    const Index n = p.n();
    require_dim(p.G.cols(), n, "QP Hessian");
    require_dim(p.g.size(), n, "QP gradient");
    if (p.n_eq() > 0) { require_dim(p.Aeq.cols(), n, "QP equality matrix"); }
    if (p.n_in() > 0) { require_dim(p.Ain.cols(), n, "QP inequality matrix"); }
    require_dim(p.beq.size(), p.n_eq(), "QP equality rhs");
    require_dim(p.bin.size(), p.n_in(), "QP inequality rhs");

    QpSolution sol;
    sol.lambda_in = VectorXd::Zero(p.n_in());
    sol.nu_eq     = VectorXd::Zero(p.n_eq());

    Eigen::LLT<MatrixXd> llt(p.G);
    if (llt.info() != Eigen::Success) {
      sol.status = QpStatus::NotConvex;
      sol.x      = VectorXd::Zero(n);
      return sol;
    }
    const MatrixXd L = llt.matrixL();
    J_               = L.transpose().triangularView<Eigen::Upper>().solve(MatrixXd::Identity(n, n));
    R_.setZero(n, n);
    q_      = 0;
    r_norm_ = 1.0;

    VectorXd x = -llt.solve(p.g);
    // Active set bookkeeping: constraint ids are eq rows [0, n_eq) then n_eq + inequality row.
    std::vector<Index> act;
    std::vector<double> u;
    const Index neq = p.n_eq();

    // Normals in ">=" form: n^T x >= b.
    auto normal = [&](Index id) -> VectorXd {
      return id < neq ? VectorXd(p.Aeq.row(id).transpose()) : VectorXd(-p.Ain.row(id - neq).transpose());
    };
    auto rhs = [&](Index id) -> double { return id < neq ? p.beq(id) : -p.bin(id - neq); };

    VectorXd z, r, d;
    for (Index i = 0; i < neq; ++i) {
      const VectorXd np = normal(i);
      compute_step(np, z, r, d);
      const double zn = z.dot(np);
      if (std::abs(zn) <= 1e-14 * (1.0 + np.norm())) {
        sol.status = QpStatus::DependentEqualities;
        sol.x      = x;
        return sol;
      }
      const double t = -(np.dot(x) - rhs(i)) / zn;
      x += t * z;
      for (Index j = 0; j < q_; ++j) { u[static_cast<size_t>(j)] -= t * r(j); }
      u.push_back(t);
      act.push_back(i);
      if (!add_constraint(d)) {
        sol.status = QpStatus::DependentEqualities;
        sol.x      = x;
        return sol;
      }
    }

    const int max_iter = opt.max_iter > 0 ? opt.max_iter : static_cast<int>(50 * (n + p.n_in()) + 100);
    std::vector<char> is_active(static_cast<size_t>(p.n_in()), 0);
    int iter = 0;
    for (;; ++iter) {
      if (iter >= max_iter) {
        sol.status = QpStatus::MaxIterations;
        break;
      }
      // Step 1: most violated inequality.
      Index ip = -1;
      double worst = 0.0;
      if (p.n_in() > 0) {
        const VectorXd s = p.bin - p.Ain * x;   // >= 0 when satisfied
        for (Index i = 0; i < p.n_in(); ++i) {
          if (is_active[static_cast<size_t>(i)]) { continue; }
          const double viol = s(i) / (1.0 + std::abs(p.bin(i)));
          if (s(i) < -opt.feas_tol * (1.0 + std::abs(p.bin(i))) && viol < worst) {
            worst = viol;
            ip    = i;
          }
        }
      }
      if (ip < 0) {
        sol.status = QpStatus::Optimal;
        break;
      }
      const Index pid   = neq + ip;
      const VectorXd np = normal(pid);
      double up         = 0.0;   // multiplier of the constraint being added

      // Step 2: move until p is active, dropping blocking constraints on the way.
      for (;;) {
        if (++iter > max_iter) {
          sol.status = QpStatus::MaxIterations;
          break;
        }
        compute_step(np, z, r, d);
        const double sp = np.dot(x) - rhs(pid);

        double t1 = std::numeric_limits<double>::infinity();
        Index l   = -1;
        for (Index j = neq; j < q_; ++j) {
          if (r(j) > 0.0) {
            const double ratio = u[static_cast<size_t>(j)] / r(j);
            if (ratio < t1) {
              t1 = ratio;
              l  = j;
            }
          }
        }
        double t2     = std::numeric_limits<double>::infinity();
        const double zn = z.dot(np);
        if (z.norm() > 1e-14 * (1.0 + np.norm()) && zn > 0.0) { t2 = -sp / zn; }
        const double t = std::min(t1, t2);

        if (!std::isfinite(t)) {
          sol.status       = QpStatus::Infeasible;
          sol.violated_row = ip;
          break;
        }
        if (!std::isfinite(t2)) {
          // Dual step only.
          for (Index j = 0; j < q_; ++j) { u[static_cast<size_t>(j)] -= t * r(j); }
          up += t;
          drop(l, act, u, is_active, neq);
          continue;
        }
        x += t * z;
        for (Index j = 0; j < q_; ++j) { u[static_cast<size_t>(j)] -= t * r(j); }
        up += t;
        if (t == t2) {
          if (!add_constraint(d)) {
            // Numerically dependent on the active set: treat as satisfied.
            is_active[static_cast<size_t>(ip)] = 1;
            break;
          }
          act.push_back(pid);
          u.push_back(up);
          is_active[static_cast<size_t>(ip)] = 1;
          break;
        }
        drop(l, act, u, is_active, neq);
      }
      if (sol.status != QpStatus::Optimal) { break; }
    }

    sol.x          = x;
    sol.iterations = iter;
    sol.objective  = 0.5 * x.dot(p.G * x) + p.g.dot(x);
    for (size_t j = 0; j < act.size(); ++j) {
      const Index id = act[j];
      if (id < neq) {
        sol.nu_eq(id) = -u[j];
      } else {
        sol.lambda_in(id - neq) = std::max(0.0, u[j]);
        sol.active.push_back(id - neq);
      }
    }
    return sol;
  }

private:
  // d = J^T n, z = J2 d2 (primal direction), r = R^{-1} d1 (dual direction).
  void compute_step(const VectorXd & np, VectorXd & z, VectorXd & r, VectorXd & d) const
  {
    const Index n = J_.rows();
    d             = J_.transpose() * np;
    z             = J_.rightCols(n - q_) * d.tail(n - q_);
    r             = q_ > 0 ? VectorXd(R_.topLeftCorner(q_, q_).triangularView<Eigen::Upper>().solve(d.head(q_)))
                           : VectorXd(0);
  }

  bool add_constraint(VectorXd & d)
  {
    const Index n = J_.rows();
    for (Index j = n - 1; j >= q_ + 1; --j) {
      double cc = d(j - 1), ss = d(j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) { continue; }
      d(j) = 0.0;
      cc /= h;
      ss /= h;
      if (cc < 0.0) {
        cc       = -cc;
        ss       = -ss;
        d(j - 1) = -h;
      } else {
        d(j - 1) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (Index k = 0; k < n; ++k) {
        const double t1 = J_(k, j - 1), t2 = J_(k, j);
        J_(k, j - 1)    = t1 * cc + t2 * ss;
        J_(k, j)        = xny * (t1 + J_(k, j - 1)) - t2;
      }
    }
    ++q_;
    for (Index i = 0; i < q_; ++i) { R_(i, q_ - 1) = d(i); }
    if (std::abs(d(q_ - 1)) <= std::numeric_limits<double>::epsilon() * r_norm_) {
      // Undo: the normal lies in the span of the active ones.
      for (Index i = 0; i < q_; ++i) { R_(i, q_ - 1) = 0.0; }
      --q_;
      return false;
    }
    r_norm_ = std::max(r_norm_, std::abs(d(q_ - 1)));
    return true;
  }

  void drop(Index pos, std::vector<Index> & act, std::vector<double> & u, std::vector<char> & is_active, Index neq)
  {
    const Index n = J_.rows();
    is_active[static_cast<size_t>(act[static_cast<size_t>(pos)] - neq)] = 0;
    act.erase(act.begin() + pos);
    u.erase(u.begin() + pos);
    for (Index j = pos; j < q_ - 1; ++j) { R_.col(j) = R_.col(j + 1); }
    R_.col(q_ - 1).setZero();
    --q_;
    for (Index j = pos; j < q_; ++j) {
      double cc = R_(j, j), ss = R_(j + 1, j);
      const double h = std::hypot(cc, ss);
      if (h == 0.0) { continue; }
      cc /= h;
      ss /= h;
      R_(j + 1, j) = 0.0;
      if (cc < 0.0) {
        R_(j, j) = -h;
        cc       = -cc;
        ss       = -ss;
      } else {
        R_(j, j) = h;
      }
      const double xny = ss / (1.0 + cc);
      for (Index k = j + 1; k < q_; ++k) {
        const double t1 = R_(j, k), t2 = R_(j + 1, k);
        R_(j, k)        = t1 * cc + t2 * ss;
        R_(j + 1, k)    = xny * (t1 + R_(j, k)) - t2;
      }
      for (Index k = 0; k < n; ++k) {
        const double t1 = J_(k, j), t2 = J_(k, j + 1);
        J_(k, j)        = t1 * cc + t2 * ss;
        J_(k, j + 1)    = xny * (J_(k, j) + t1) - t2;
      }
    }
  }

  mutable MatrixXd J_, R_;
  mutable Index q_{0};
  mutable double r_norm_{1.0};
};

inline QpSolution solve_qp(const QpProblem & p) { return DualActiveSetQp{}.solve(p); }

}  // namespace gpreach
