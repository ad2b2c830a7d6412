#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

#include "errors.hpp"

namespace gpreach {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct CholeskyResult
{
  MatrixXd lower;       ///< L with L L^T = A + jitter I
  double jitter{0.0};   ///< diagonal shift that was finally needed (0 if none)
};

/**
 * @brief Cholesky factor with jitter escalation.
 *
 * Tries A as given first. On failure adds 1e-12 * trace/n to the diagonal and
 * multiplies by ten until 1e-6 * trace/n, then gives up.
 */
inline CholeskyResult robust_cholesky(const MatrixXd & A)
{
  if (A.rows() != A.cols()) { throw DimensionError("robust_cholesky: matrix not square"); }
  const Index n = A.rows();
  CholeskyResult out;
  if (n == 0) { return out; }

  Eigen::LLT<MatrixXd> llt(A);
  if (llt.info() == Eigen::Success) {
    out.lower = llt.matrixL();
    return out;
  }

  double scale = A.trace() / static_cast<double>(n);
  if (!(scale > 0.0) || !std::isfinite(scale)) { scale = 1.0; }
  for (double rel = 1e-12; rel <= 1e-6 * (1.0 + 1e-9); rel *= 10.0) {
    const double j = rel * scale;
    MatrixXd B = A;
    B.diagonal().array() += j;
    llt.compute(B);
    if (llt.info() == Eigen::Success) {
      out.lower  = llt.matrixL();
      out.jitter = j;
      return out;
    }
  }
  throw FactorizationError("Cholesky failed after jitter escalation to 1e-6*trace/n (n=" + std::to_string(n) + ")");
}

/// log det(L L^T) from a Cholesky factor.
inline double logdet_from_factor(const MatrixXd & L)
{
  return 2.0 * L.diagonal().array().log().sum();
}

/// Symmetric positive (semi)definite square root.
inline MatrixXd sym_sqrt(const MatrixXd & P)
{
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (P + P.transpose()));
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

inline MatrixXd sym_inv_sqrt(const MatrixXd & P)
{
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (P + P.transpose()));
  if (es.eigenvalues().minCoeff() <= 0.0) { throw NumericalError("sym_inv_sqrt: matrix not positive definite"); }
  return es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

inline double spectral_norm(const MatrixXd & M)
{
  if (M.size() == 0) { return 0.0; }
  Eigen::JacobiSVD<MatrixXd> svd(M);
  return svd.singularValues()(0);
}

/**
 * @brief Norm ||x||_P = sqrt(x^T P x), or the euclidean norm when no weight is set.
 *
 * Keeps P^{1/2} and P^{-1/2} around because induced and dual norms need them.
 */
class Metric
{
public:
  Metric() = default;

  static Metric euclidean() { return Metric{}; }

  static Metric weighted(const MatrixXd & P)
  {
    if (P.rows() != P.cols()) { throw DimensionError("Metric: weight not square"); }
    if ((P - P.transpose()).norm() > 1e-9 * (1.0 + P.norm())) { throw ConfigError("Metric: weight not symmetric"); }
    Metric m;
    m.weighted_ = true;
    m.P_        = P;
    m.sqrtP_    = sym_sqrt(P);
    m.isqrtP_   = sym_inv_sqrt(P);
    return m;
  }

  bool is_weighted() const { return weighted_; }
  const MatrixXd & weight() const { return P_; }
  const MatrixXd & sqrt_weight() const { return sqrtP_; }

  double norm(const VectorXd & x) const
  {
    if (!weighted_) { return x.norm(); }
    require_dim(x.size(), P_.rows(), "Metric::norm");
    return std::sqrt(std::max(0.0, x.dot(P_ * x)));
  }

  /// sup { a^T x : ||x|| <= 1 }, used for halfspace tightening.
  double dual_norm(const VectorXd & a) const
  {
    if (!weighted_) { return a.norm(); }
    return (isqrtP_ * a).norm();
  }

  /// Operator norm of B from euclidean input space into this metric.
  double induced_from_euclidean(const MatrixXd & B) const
  {
    if (!weighted_) { return spectral_norm(B); }
    return spectral_norm(sqrtP_ * B);
  }

  /// Operator norm of a state map x -> A x with this metric on both sides.
  double operator_norm(const MatrixXd & A) const
  {
    if (!weighted_) { return spectral_norm(A); }
    return spectral_norm(sqrtP_ * A * isqrtP_);
  }

private:
  bool weighted_{false};
  MatrixXd P_, sqrtP_, isqrtP_;
};

}  // namespace gpreach
