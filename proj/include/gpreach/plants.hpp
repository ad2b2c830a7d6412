#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "gp.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "sampler.hpp"

namespace gpreach {

constexpr double kGravity = 9.81;

/// Reference uncertainty of the pendulum, z = (theta, alpha).
inline double pendulum_reference(const VectorXd & z, double l, double dt)
{
  return -(kGravity / l) * std::sin(z(0)) * dt + z(1) * dt;
}

/// State (theta, omega), input alpha; the GP learns g(theta, alpha).
inline KnownModel pendulum_model(double l, double dt)
{
  if (!(l > 0.0) || !(dt > 0.0)) { throw ConfigError("pendulum needs l > 0 and dt > 0"); }
  KnownModel m;
  m.name = "pendulum";
  m.nx = 2;
  m.nu = 1;
  m.ng = 1;
  m.dt = dt;
  m.f  = [dt](const VectorXd & x, const VectorXd &) {
    VectorXd n(2);
    n << x(0) + x(1) * dt, x(1);
    return n;
  };
  m.Bd = [](const VectorXd &) {
    MatrixXd B(2, 1);
    B << 0.0, 1.0;
    return B;
  };
  m.partials = [dt](const VectorXd &, const VectorXd &, const VectorXd &, MatrixXd & A, MatrixXd & B) {
    A.resize(2, 2);
    A << 1.0, dt, 0.0, 1.0;
    B.setZero(2, 1);
  };
  m.gp_inputs = {0, 2};
  m.state_box = Box{VectorXd::Constant(2, -1e9), VectorXd::Constant(2, 1e9)};
  m.input_box = Box{VectorXd::Constant(1, -1e9), VectorXd::Constant(1, 1e9)};
  return m;
}

inline double car_slip(double steer, double lf, double lr) { return std::atan(lr / (lf + lr) * std::tan(steer)); }

/// Reference uncertainty of the car, z = (theta, steering).
inline VectorXd car_reference(const VectorXd & z, double lf, double lr, double dt)
{
  const double zeta = car_slip(z(1), lf, lr);
  VectorXd g(3);
  g << std::cos(z(0) + zeta) * dt, std::sin(z(0) + zeta) * dt, std::sin(zeta) * dt / lr;
  return g;
}

/// Kinematic bicycle, state (x_p, y_p, theta, v), input (steering, acceleration).
inline KnownModel car_model(double lf, double lr, double dt)
{
  if (!(lf > 0.0) || !(lr > 0.0) || !(dt > 0.0)) { throw ConfigError("car needs l_f, l_r, dt > 0"); }
  KnownModel m;
  m.name = "car";
  m.nx = 4;
  m.nu = 2;
  m.ng = 3;
  m.dt = dt;
  m.f  = [dt](const VectorXd & x, const VectorXd & u) {
    VectorXd n = x;
    n(3) += u(1) * dt;
    return n;
  };
  m.Bd = [](const VectorXd & x) {
    MatrixXd B = MatrixXd::Zero(4, 3);
    B.topRows(3) = x(3) * MatrixXd::Identity(3, 3);
    return B;
  };
  m.partials = [dt](const VectorXd &, const VectorXd &, const VectorXd & g, MatrixXd & A, MatrixXd & B) {
    A.setIdentity(4, 4);
    A.block(0, 3, 3, 1) = g.head(3);
    B.setZero(4, 2);
    B(3, 1) = dt;
  };
  m.gp_inputs = {2, 4};
  m.state_box = Box{VectorXd::Constant(4, -1e9), VectorXd::Constant(4, 1e9)};
  m.input_box = Box{VectorXd::Constant(2, -1e9), VectorXd::Constant(2, 1e9)};
  return m;
}

/// Vector-valued g built from one RKHS expansion per output.
class RkhsDynamics : public DynamicsFunction
{
public:
  explicit RkhsDynamics(std::vector<RkhsFunction> fs) : fs_(std::move(fs))
  {
    if (fs_.empty()) { throw DimensionError("RkhsDynamics needs at least one output"); }
  }
  const std::vector<RkhsFunction> & components() const { return fs_; }
  Index output_dim() const override { return static_cast<Index>(fs_.size()); }
  Index input_dim() const override { return fs_.front().centers().cols(); }
  VectorXd value(const VectorXd & z) const override
  {
    VectorXd v(output_dim());
    for (size_t i = 0; i < fs_.size(); ++i) { v(static_cast<Index>(i)) = fs_[i](z); }
    return v;
  }
  MatrixXd jacobian(const VectorXd & z) const override
  {
    MatrixXd J(output_dim(), z.size());
    for (size_t i = 0; i < fs_.size(); ++i) { J.row(static_cast<Index>(i)) = fs_[i].gradient(z).transpose(); }
    return J;
  }

private:
  std::vector<RkhsFunction> fs_;
};

struct RkhsFit
{
  RkhsFunction f;
  double unconstrained_norm{0.0};
  double sup_deviation{0.0};   ///< over the validation grid, after scaling
};

/**
 * @brief Kernel interpolant of a reference on `centers`, scaled into the B_g ball.
 *
 * Pass Bg <= 0 to skip the cap.
 */
inline RkhsFit fit_rkhs_ground_truth(const std::function<double(const VectorXd &)> & reference, const Kernel & k,
                                     const MatrixXd & centers, double Bg, const MatrixXd & validation = MatrixXd())
{
  const Index n = centers.rows();
  VectorXd r(n);
  for (Index i = 0; i < n; ++i) { r(i) = reference(centers.row(i).transpose()); }
  VectorXd w = VectorXd::Zero(n);
  if (n > 0 && r.cwiseAbs().maxCoeff() > 0.0) {
    const MatrixXd L = robust_cholesky(k.gram(centers)).lower;
    w = L.transpose().triangularView<Eigen::Upper>().solve(L.triangularView<Eigen::Lower>().solve(r));
  }
  RkhsFit fit;
  fit.f                  = RkhsFunction(k, centers, w);
  fit.unconstrained_norm = fit.f.rkhs_norm();
  if (Bg > 0.0 && fit.unconstrained_norm > Bg) { fit.f.scale(Bg / fit.unconstrained_norm); }
  for (Index i = 0; i < validation.rows(); ++i) {
    const VectorXd z  = validation.row(i).transpose();
    fit.sup_deviation = std::max(fit.sup_deviation, std::abs(fit.f(z) - reference(z)));
  }
  return fit;
}

enum class NoiseKind { Uniform, TruncatedGaussian };

/// Componentwise bounded disturbance |w_i| <= wbar_i.
class BoundedNoise
{
public:
  BoundedNoise(VectorXd wbar, NoiseKind kind, RngStream stream)
      : wbar_(std::move(wbar)), kind_(kind), stream_(std::move(stream))
  {
    if ((wbar_.array() < 0.0).any()) { throw ConfigError("noise bound must be >= 0"); }
  }

  const VectorXd & bound() const { return wbar_; }

  VectorXd draw()
  {
    VectorXd w(wbar_.size());
    for (Index i = 0; i < w.size(); ++i) {
      const double b = wbar_(i);
      if (b == 0.0) {
        w(i) = 0.0;
      } else if (kind_ == NoiseKind::Uniform) {
        w(i) = stream_.uniform(-b, b);
      } else {
        double v;
        do { v = 0.5 * b * stream_.normal(); } while (std::abs(v) > b);
        w(i) = v;
      }
    }
    return w;
  }

private:
  VectorXd wbar_;
  NoiseKind kind_;
  RngStream stream_;
};

/// Ground-truth simulator: known model, g*, and the noise generator.
struct TruePlant
{
  KnownModel model;
  std::shared_ptr<const DynamicsFunction> g_star;
  BoundedNoise noise;

  VectorXd step(const VectorXd & x, const VectorXd & u)
  {
    const VectorXd z = model.gp_input(x, u);
    VectorXd xn      = model.step(x, u, g_star->value(z) + noise.draw());
    if (!xn.allFinite()) { throw NumericalError("true plant produced a non-finite state"); }
    return xn;
  }
};

inline VectorXd step_true(TruePlant & p, const VectorXd & x, const VectorXd & u) { return p.step(x, u); }

/**
 * @brief Training data from one true step per GP input.
 *
 * Components of (x, u) not selected as GP inputs are taken from the nominal
 * vectors. y = B_d^+ (x+ - f(x,u)) = g*(z) + w.
 */
inline Dataset generate_dataset(TruePlant & plant, const MatrixXd & Zgrid, const VectorXd & x_nom,
                                const VectorXd & u_nom, double lambda, std::optional<double> wbar)
{
  const KnownModel & m = plant.model;
  require_dim(Zgrid.cols(), m.gp_dim(), "generate_dataset grid");
  Dataset ds;
  ds.Z = Zgrid;
  ds.Y.resize(Zgrid.rows(), m.ng);
  for (Index r = 0; r < Zgrid.rows(); ++r) {
    VectorXd x = x_nom, u = u_nom;
    for (Index i = 0; i < m.gp_dim(); ++i) {
      const Index j = m.gp_inputs[static_cast<size_t>(i)];
      if (j < m.nx) {
        x(j) = Zgrid(r, i);
      } else {
        u(j - m.nx) = Zgrid(r, i);
      }
    }
    const VectorXd xn = plant.step(x, u);
    const MatrixXd B  = m.Bd(x);
    ds.Y.row(r)       = B.completeOrthogonalDecomposition().solve(VectorXd(xn - m.f(x, u))).transpose();
  }
  ds.lambda = lambda;
  ds.wbar   = wbar;
  ds.validate();
  return ds;
}

}  // namespace gpreach
