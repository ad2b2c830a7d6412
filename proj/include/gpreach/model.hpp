#pragma once

#include <functional>
#include <string>
#include <vector>

#include "linalg.hpp"

namespace gpreach {

struct Box
{
  VectorXd lo, hi;

  Index dim() const { return lo.size(); }

  bool contains(const VectorXd & x, double tol = 1e-9) const
  {
    return ((x - lo).array() >= -tol).all() && ((hi - x).array() >= -tol).all();
  }

  VectorXd center() const { return 0.5 * (lo + hi); }
};

/// { x : A x <= b }
struct Polytope
{
  MatrixXd A;
  VectorXd b;

  static Polytope from_box(const Box & box)
  {
    const Index n = box.dim();
    Polytope p;
    p.A.setZero(2 * n, n);
    p.b.resize(2 * n);
    for (Index i = 0; i < n; ++i) {
      p.A(2 * i, i)     = 1.0;
      p.b(2 * i)        = box.hi(i);
      p.A(2 * i + 1, i) = -1.0;
      p.b(2 * i + 1)    = -box.lo(i);
    }
    return p;
  }

  Index rows() const { return A.rows(); }

  double max_violation(const VectorXd & x) const
  {
    if (A.rows() == 0) { return 0.0; }
    return (A * x - b).maxCoeff();
  }
};

/**
 * @brief Known part of x+ = f(x, u) + B_d(x) (g(z) + w), z a selection of (x, u).
 *
 * `partials`, when set, returns the exact derivatives of x -> f(x,u) + B_d(x) g
 * and u -> f(x,u) for a frozen g; otherwise central differences are used.
 */
struct KnownModel
{
  using Partials = std::function<void(const VectorXd & x, const VectorXd & u, const VectorXd & g, MatrixXd & A,
                                      MatrixXd & B)>;

  std::string name;
  Index nx{0}, nu{0}, ng{0};
  double dt{0.0};
  std::function<VectorXd(const VectorXd &, const VectorXd &)> f;
  std::function<MatrixXd(const VectorXd &)> Bd;
  Partials partials;
  std::vector<Index> gp_inputs;   ///< indices into the stacked vector [x; u]
  Box state_box, input_box;

  Index gp_dim() const { return static_cast<Index>(gp_inputs.size()); }

  VectorXd gp_input(const VectorXd & x, const VectorXd & u) const
  {
    VectorXd z(gp_dim());
    for (Index i = 0; i < gp_dim(); ++i) {
      const Index j = gp_inputs[static_cast<size_t>(i)];
      z(i)          = j < nx ? x(j) : u(j - nx);
    }
    return z;
  }

  /// dz/dx and dz/du as selection matrices.
  void gp_input_selectors(MatrixXd & Sx, MatrixXd & Su) const
  {
    Sx.setZero(gp_dim(), nx);
    Su.setZero(gp_dim(), nu);
    for (Index i = 0; i < gp_dim(); ++i) {
      const Index j = gp_inputs[static_cast<size_t>(i)];
      if (j < nx) {
        Sx(i, j) = 1.0;
      } else {
        Su(i, j - nx) = 1.0;
      }
    }
  }

  VectorXd step(const VectorXd & x, const VectorXd & u, const VectorXd & g) const { return f(x, u) + Bd(x) * g; }

  void known_partials(const VectorXd & x, const VectorXd & u, const VectorXd & g, MatrixXd & A, MatrixXd & B) const
  {
    if (partials) {
      partials(x, u, g, A, B);
      return;
    }
    A.resize(nx, nx);
    B.resize(nx, nu);
    for (Index j = 0; j < nx; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(x(j)));
      VectorXd xp = x, xm = x;
      xp(j) += h;
      xm(j) -= h;
      A.col(j) = (step(xp, u, g) - step(xm, u, g)) / (2.0 * h);
    }
    for (Index j = 0; j < nu; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(u(j)));
      VectorXd up = u, um = u;
      up(j) += h;
      um(j) -= h;
      B.col(j) = (f(x, up) - f(x, um)) / (2.0 * h);
    }
  }

  void validate() const
  {
    if (nx < 1 || nu < 0 || ng < 1) { throw ConfigError("model dimensions must be positive"); }
    if (!f || !Bd) { throw ConfigError("model needs f and B_d"); }
    for (Index j : gp_inputs) {
      if (j < 0 || j >= nx + nu) { throw ConfigError("GP input index out of range"); }
    }
  }
};

/// A frozen realization of g: value and Jacobian in the GP input z.
class DynamicsFunction
{
public:
  virtual ~DynamicsFunction() = default;
  virtual Index output_dim() const                   = 0;
  virtual Index input_dim() const                    = 0;
  virtual VectorXd value(const VectorXd & z) const   = 0;
  virtual MatrixXd jacobian(const VectorXd & z) const = 0;
};

/// Closed-form g given as lambdas; used for references and constructed counterexamples.
class LambdaFunction : public DynamicsFunction
{
public:
  LambdaFunction(Index d, Index ng, std::function<VectorXd(const VectorXd &)> v,
                 std::function<MatrixXd(const VectorXd &)> j = {})
      : d_(d), ng_(ng), v_(std::move(v)), j_(std::move(j))
  {}

  Index output_dim() const override { return ng_; }
  Index input_dim() const override { return d_; }
  VectorXd value(const VectorXd & z) const override { return v_(z); }

  MatrixXd jacobian(const VectorXd & z) const override
  {
    if (j_) { return j_(z); }
    MatrixXd J(ng_, d_);
    for (Index i = 0; i < d_; ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(z(i)));
      VectorXd zp = z, zm = z;
      zp(i) += h;
      zm(i) -= h;
      J.col(i) = (v_(zp) - v_(zm)) / (2.0 * h);
    }
    return J;
  }

private:
  Index d_, ng_;
  std::function<VectorXd(const VectorXd &)> v_;
  std::function<MatrixXd(const VectorXd &)> j_;
};

}  // namespace gpreach
