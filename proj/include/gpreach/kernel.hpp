#pragma once

#include <cmath>
#include <string>

#include "linalg.hpp"

namespace gpreach {

enum class KernelKind { SquaredExponential, Matern };

/// Half-integer Matern smoothness; only these have closed forms without Bessel functions.
enum class Smoothness { Half, ThreeHalves, FiveHalves };

inline double smoothness_value(Smoothness nu)
{
  switch (nu) {
  case Smoothness::Half: return 0.5;
  case Smoothness::ThreeHalves: return 1.5;
  case Smoothness::FiveHalves: return 2.5;
  }
  return 0.0;
}

inline Smoothness smoothness_from(double nu)
{
  if (nu == 0.5) { return Smoothness::Half; }
  if (nu == 1.5) { return Smoothness::ThreeHalves; }
  if (nu == 2.5) { return Smoothness::FiveHalves; }
  throw ConfigError("Matern smoothness must be 0.5, 1.5 or 2.5, got " + std::to_string(nu));
}

/**
 * @brief Stationary ARD kernel (squared exponential or half-integer Matern).
 *
 * Points are row vectors throughout the library, so Gram matrices are built
 * from the rows of an (n x d) matrix. A lengthscale vector of size one is
 * broadcast to every input dimension.
 */
class Kernel
{
public:
  Kernel() = default;

  static Kernel squared_exponential(double signal_variance, VectorXd lengthscales)
  {
    return Kernel(KernelKind::SquaredExponential, Smoothness::FiveHalves, signal_variance, std::move(lengthscales));
  }

  static Kernel matern(Smoothness nu, double signal_variance, VectorXd lengthscales)
  {
    return Kernel(KernelKind::Matern, nu, signal_variance, std::move(lengthscales));
  }

  KernelKind kind() const { return kind_; }
  Smoothness smoothness() const { return nu_; }
  double signal_variance() const { return sf2_; }
  const VectorXd & lengthscales() const { return ls_; }

  double lengthscale(Index i) const { return ls_.size() == 1 ? ls_(0) : ls_(i); }

  void check_input(Index d) const
  {
    if (ls_.size() != 1 && ls_.size() != d) {
      throw DimensionError("kernel has " + std::to_string(ls_.size()) + " lengthscales, input has dimension "
                           + std::to_string(d));
    }
  }

  double operator()(const Eigen::Ref<const VectorXd> & a, const Eigen::Ref<const VectorXd> & b) const
  {
    require_dim(b.size(), a.size(), "Kernel");
    check_input(a.size());
    return from_r2(scaled_r2(a, b));
  }

  /// d k(a, b) / d a
  VectorXd gradient(const Eigen::Ref<const VectorXd> & a, const Eigen::Ref<const VectorXd> & b) const
  {
    require_dim(b.size(), a.size(), "Kernel::gradient");
    check_input(a.size());
    VectorXd diff = a - b;
    for (Index i = 0; i < diff.size(); ++i) { diff(i) /= lengthscale(i) * lengthscale(i); }
    return dk_dr2_times2(scaled_r2(a, b)) * diff;
  }

  /// Gram matrix on the rows of Z.
  MatrixXd gram(const MatrixXd & Z) const
  {
    const Index n = Z.rows();
    check_input(Z.cols());
    const MatrixXd S = scaled(Z);
    MatrixXd K(n, n);
    for (Index i = 0; i < n; ++i) {
      K(i, i) = sf2_;
      for (Index j = 0; j < i; ++j) {
        K(i, j) = K(j, i) = from_r2((S.row(i) - S.row(j)).squaredNorm());
      }
    }
    return K;
  }

  /// Cross matrix K(A_i, B_j).
  MatrixXd cross(const MatrixXd & A, const MatrixXd & B) const
  {
    require_dim(B.cols(), A.cols(), "Kernel::cross");
    check_input(A.cols());
    const MatrixXd SA = scaled(A), SB = scaled(B);
    MatrixXd K(A.rows(), B.rows());
    for (Index j = 0; j < B.rows(); ++j) {
      for (Index i = 0; i < A.rows(); ++i) { K(i, j) = from_r2((SA.row(i) - SB.row(j)).squaredNorm()); }
    }
    return K;
  }

  /// Column of k(Z_i, z) for every row of Z.
  VectorXd column(const MatrixXd & Z, const Eigen::Ref<const VectorXd> & z) const
  {
    require_dim(z.size(), Z.cols(), "Kernel::column");
    check_input(z.size());
    VectorXd sz(z.size());
    for (Index i = 0; i < z.size(); ++i) { sz(i) = z(i) / lengthscale(i); }
    VectorXd out(Z.rows());
    for (Index r = 0; r < Z.rows(); ++r) {
      double r2 = 0.0;
      for (Index i = 0; i < z.size(); ++i) {
        const double t = Z(r, i) / lengthscale(i) - sz(i);
        r2 += t * t;
      }
      out(r) = from_r2(r2);
    }
    return out;
  }

  /// Row i holds d k(z, Z_i) / d z.
  MatrixXd column_gradient(const MatrixXd & Z, const Eigen::Ref<const VectorXd> & z) const
  {
    require_dim(z.size(), Z.cols(), "Kernel::column_gradient");
    check_input(z.size());
    MatrixXd G(Z.rows(), z.size());
    VectorXd diff(z.size());
    for (Index r = 0; r < Z.rows(); ++r) {
      double r2 = 0.0;
      for (Index i = 0; i < z.size(); ++i) {
        const double l = lengthscale(i);
        const double t = (z(i) - Z(r, i)) / l;
        r2 += t * t;
        diff(i) = (z(i) - Z(r, i)) / (l * l);
      }
      G.row(r) = dk_dr2_times2(r2) * diff.transpose();
    }
    return G;
  }

private:
  Kernel(KernelKind kind, Smoothness nu, double sf2, VectorXd ls) : kind_(kind), nu_(nu), sf2_(sf2), ls_(std::move(ls))
  {
    if (!(sf2_ >= 0.0) || !std::isfinite(sf2_)) { throw ConfigError("kernel signal variance must be >= 0"); }
    if (ls_.size() == 0) { throw ConfigError("kernel needs at least one lengthscale"); }
    if ((ls_.array() <= 0.0).any()) { throw ConfigError("kernel lengthscales must be positive"); }
  }

  double scaled_r2(const Eigen::Ref<const VectorXd> & a, const Eigen::Ref<const VectorXd> & b) const
  {
    double r2 = 0.0;
    for (Index i = 0; i < a.size(); ++i) {
      const double t = (a(i) - b(i)) / lengthscale(i);
      r2 += t * t;
    }
    return r2;
  }

  MatrixXd scaled(const MatrixXd & Z) const
  {
    MatrixXd S = Z;
    for (Index i = 0; i < Z.cols(); ++i) { S.col(i) /= lengthscale(i); }
    return S;
  }

  double from_r2(double r2) const
  {
    if (kind_ == KernelKind::SquaredExponential) { return sf2_ * std::exp(-0.5 * r2); }
    const double r = std::sqrt(r2);
    switch (nu_) {
    case Smoothness::Half: return sf2_ * std::exp(-r);
    case Smoothness::ThreeHalves: {
      const double s = std::sqrt(3.0) * r;
      return sf2_ * (1.0 + s) * std::exp(-s);
    }
    case Smoothness::FiveHalves: {
      const double s = std::sqrt(5.0) * r;
      return sf2_ * (1.0 + s + s * s / 3.0) * std::exp(-s);
    }
    }
    return 0.0;
  }

  // Multiplies (a - b) / l^2 to give the gradient in a. Matern-1/2 has no
  // derivative at r = 0; zero is returned there.
  double dk_dr2_times2(double r2) const
  {
    if (kind_ == KernelKind::SquaredExponential) { return -sf2_ * std::exp(-0.5 * r2); }
    const double r = std::sqrt(r2);
    switch (nu_) {
    case Smoothness::Half: return r > 0.0 ? -sf2_ * std::exp(-r) / r : 0.0;
    case Smoothness::ThreeHalves: return -3.0 * sf2_ * std::exp(-std::sqrt(3.0) * r);
    case Smoothness::FiveHalves: {
      const double s = std::sqrt(5.0) * r;
      return -(5.0 / 3.0) * sf2_ * (1.0 + s) * std::exp(-s);
    }
    }
    return 0.0;
  }

  KernelKind kind_{KernelKind::SquaredExponential};
  Smoothness nu_{Smoothness::FiveHalves};
  double sf2_{1.0};
  VectorXd ls_{VectorXd::Ones(1)};
};

}  // namespace gpreach
