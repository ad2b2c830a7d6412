#pragma once

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kernel.hpp"

namespace gpreach {

/// Inputs are rows of Z; Y holds one column per output dimension.
struct Dataset
{
  MatrixXd Z;
  MatrixXd Y;
  double lambda{1.0};            ///< sub-Gaussian noise proxy, also the Gram regularizer
  std::optional<double> wbar;    ///< bound on |w| when the noise is known to be bounded

  Index size() const { return Z.rows(); }
  Index input_dim() const { return Z.cols(); }
  Index output_dim() const { return Y.cols(); }

  void validate() const
  {
    if (Y.rows() != Z.rows()) {
      throw DimensionError("dataset has " + std::to_string(Z.rows()) + " inputs but " + std::to_string(Y.rows())
                           + " outputs");
    }
    if (!(lambda > 0.0)) { throw ConfigError("dataset noise scale lambda must be > 0"); }
    if (wbar && !(*wbar >= 0.0)) { throw ConfigError("noise bound must be >= 0"); }
    if (!Z.allFinite() || !Y.allFinite()) { throw NumericalError("dataset contains non-finite values"); }
  }
};

/**
 * @brief Exact single-output GP posterior.
 *
 * The factor of (K_D + lambda^2 I) is shared so copies are cheap and the
 * object can be read from several threads once built.
 */
class GpPosterior
{
public:
  GpPosterior(Kernel k, MatrixXd Z, VectorXd y, double lambda, Index input_dim = -1)
      : kernel_(std::move(k)), Z_(std::move(Z)), y_(std::move(y)), lambda_(lambda)
  {
    if (!(lambda_ > 0.0)) { throw ConfigError("GP noise scale lambda must be > 0"); }
    require_dim(y_.size(), Z_.rows(), "GpPosterior outputs");
    d_ = Z_.rows() > 0 ? Z_.cols() : input_dim;
    if (d_ < 1) { throw DimensionError("GpPosterior: input dimension unknown for empty dataset"); }
    if (Z_.rows() == 0) { Z_.resize(0, d_); }
    kernel_.check_input(d_);

    K_ = kernel_.gram(Z_);
    MatrixXd A = K_;
    A.diagonal().array() += lambda_ * lambda_;
    auto chol = robust_cholesky(A);
    L_        = std::make_shared<const MatrixXd>(std::move(chol.lower));
    jitter_   = chol.jitter;
    alpha_    = solve(y_);
  }

  const Kernel & kernel() const { return kernel_; }
  const MatrixXd & inputs() const { return Z_; }
  const VectorXd & outputs() const { return y_; }
  const MatrixXd & gram() const { return K_; }
  const MatrixXd & factor() const { return *L_; }
  const VectorXd & alpha() const { return alpha_; }
  double lambda() const { return lambda_; }
  double jitter() const { return jitter_; }
  Index size() const { return Z_.rows(); }
  Index input_dim() const { return d_; }

  /// (K_D + lambda^2 I)^{-1} b
  VectorXd solve(const VectorXd & b) const
  {
    if (size() == 0) { return VectorXd(0); }
    VectorXd t = L_->triangularView<Eigen::Lower>().solve(b);
    return L_->transpose().triangularView<Eigen::Upper>().solve(t);
  }

  double mean(const Eigen::Ref<const VectorXd> & z) const
  {
    require_dim(z.size(), d_, "posterior_mean");
    if (size() == 0) { return 0.0; }
    return alpha_.dot(kernel_.column(Z_, z));
  }

  VectorXd mean_gradient(const Eigen::Ref<const VectorXd> & z) const
  {
    require_dim(z.size(), d_, "posterior_mean_gradient");
    if (size() == 0) { return VectorXd::Zero(d_); }
    return kernel_.column_gradient(Z_, z).transpose() * alpha_;
  }

  double variance(const Eigen::Ref<const VectorXd> & z) const
  {
    require_dim(z.size(), d_, "posterior_var");
    const double kzz = kernel_.signal_variance();
    if (size() == 0) { return kzz; }
    const VectorXd v = L_->triangularView<Eigen::Lower>().solve(kernel_.column(Z_, z));
    return std::clamp(kzz - v.squaredNorm(), 0.0, kzz);
  }

  double stddev(const Eigen::Ref<const VectorXd> & z) const { return std::sqrt(variance(z)); }

  double covariance(const Eigen::Ref<const VectorXd> & a, const Eigen::Ref<const VectorXd> & b) const
  {
    require_dim(a.size(), d_, "posterior_cov");
    require_dim(b.size(), d_, "posterior_cov");
    const double kab = kernel_(a, b);
    if (size() == 0) { return kab; }
    const VectorXd va = L_->triangularView<Eigen::Lower>().solve(kernel_.column(Z_, a));
    const VectorXd vb = L_->triangularView<Eigen::Lower>().solve(kernel_.column(Z_, b));
    return kab - va.dot(vb);
  }

  VectorXd mean_on(const MatrixXd & G) const
  {
    require_dim(G.cols(), d_, "posterior mean grid");
    if (size() == 0) { return VectorXd::Zero(G.rows()); }
    return kernel_.cross(G, Z_) * alpha_;
  }

  /// Posterior covariance matrix on the rows of G.
  MatrixXd covariance_on(const MatrixXd & G) const
  {
    require_dim(G.cols(), d_, "posterior covariance grid");
    MatrixXd C = kernel_.gram(G);
    if (size() == 0) { return C; }
    const MatrixXd V = L_->triangularView<Eigen::Lower>().solve(kernel_.cross(Z_, G));
    C.noalias() -= V.transpose() * V;
    return 0.5 * (C + C.transpose());
  }

  /// ||mu||_k = sqrt(alpha^T K_D alpha)
  double mean_rkhs_norm() const
  {
    if (size() == 0) { return 0.0; }
    return std::sqrt(std::max(0.0, alpha_.dot(K_ * alpha_)));
  }

  /// log det(I + lambda^-2 K_D), taken from the factor of K_D + lambda^2 I.
  double information_logdet() const
  {
    if (size() == 0) { return 0.0; }
    const double v = logdet_from_factor(*L_) - static_cast<double>(size()) * std::log(lambda_ * lambda_);
    if (!std::isfinite(v)) { throw NumericalError("non-finite log determinant"); }
    return std::max(0.0, v);
  }

  VectorXd mean_at_data() const { return size() == 0 ? VectorXd(0) : VectorXd(K_ * alpha_); }

  VectorXd stddev_at_data() const
  {
    VectorXd s(size());
    for (Index i = 0; i < size(); ++i) { s(i) = stddev(Z_.row(i).transpose()); }
    return s;
  }

private:
  Kernel kernel_;
  MatrixXd Z_;
  VectorXd y_;
  double lambda_;
  Index d_{0};
  MatrixXd K_;
  std::shared_ptr<const MatrixXd> L_;
  double jitter_{0.0};
  VectorXd alpha_;
};

inline double posterior_mean(const GpPosterior & gp, const VectorXd & z) { return gp.mean(z); }
inline double posterior_var(const GpPosterior & gp, const VectorXd & z) { return gp.variance(z); }
inline double posterior_cov(const GpPosterior & gp, const VectorXd & a, const VectorXd & b)
{
  return gp.covariance(a, b);
}
inline double mean_rkhs_norm(const GpPosterior & gp) { return gp.mean_rkhs_norm(); }

/// One independent posterior per output column, all sharing Z.
inline std::vector<std::shared_ptr<const GpPosterior>> fit_posteriors(const Dataset & data,
                                                                       const std::vector<Kernel> & kernels)
{
  data.validate();
  if (kernels.size() != 1 && kernels.size() != static_cast<size_t>(data.output_dim())) {
    throw ConfigError("need one kernel or one per output dimension");
  }
  std::vector<std::shared_ptr<const GpPosterior>> out;
  for (Index j = 0; j < data.output_dim(); ++j) {
    const Kernel & k = kernels.size() == 1 ? kernels[0] : kernels[static_cast<size_t>(j)];
    out.push_back(std::make_shared<const GpPosterior>(k, data.Z, data.Y.col(j), data.lambda, data.input_dim()));
  }
  return out;
}

/// f(z) = sum_i w_i k(c_i, z)
class RkhsFunction
{
public:
  RkhsFunction() = default;
  RkhsFunction(Kernel k, MatrixXd centers, VectorXd weights)
      : kernel_(std::move(k)), C_(std::move(centers)), w_(std::move(weights))
  {
    require_dim(w_.size(), C_.rows(), "RkhsFunction weights");
  }

  const Kernel & kernel() const { return kernel_; }
  const MatrixXd & centers() const { return C_; }
  const VectorXd & weights() const { return w_; }

  double operator()(const Eigen::Ref<const VectorXd> & z) const
  {
    if (C_.rows() == 0) { return 0.0; }
    return w_.dot(kernel_.column(C_, z));
  }

  VectorXd gradient(const Eigen::Ref<const VectorXd> & z) const
  {
    if (C_.rows() == 0) { return VectorXd::Zero(z.size()); }
    return kernel_.column_gradient(C_, z).transpose() * w_;
  }

  double rkhs_norm() const
  {
    if (C_.rows() == 0) { return 0.0; }
    return std::sqrt(std::max(0.0, w_.dot(kernel_.gram(C_) * w_)));
  }

  void scale(double s) { w_ *= s; }

private:
  Kernel kernel_;
  MatrixXd C_;
  VectorXd w_;
};

inline double rkhs_eval(const RkhsFunction & f, const VectorXd & z) { return f(z); }

// ---------------------------------------------------------------------------
// CSV: header z_1..z_d,y_1..y_ng then one row per datum.

inline Dataset read_dataset_csv(std::istream & in, double lambda, std::optional<double> wbar = std::nullopt)
{
  std::string line;
  if (!std::getline(in, line)) { throw ConfigError("dataset CSV is empty (header row required)"); }
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) {
      c.erase(std::remove_if(c.begin(), c.end(), ::isspace), c.end());
      cols.push_back(c);
    }
  }
  Index d = 0, ng = 0;
  for (const auto & c : cols) {
    if (c.rfind("z_", 0) == 0) {
      if (ng > 0) { throw ConfigError("dataset CSV: z columns must precede y columns"); }
      ++d;
    } else if (c.rfind("y_", 0) == 0) {
      ++ng;
    } else {
      throw ConfigError("dataset CSV: unexpected column '" + c + "'");
    }
  }
  if (d == 0 || ng == 0) { throw ConfigError("dataset CSV needs z_ and y_ columns"); }

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) { continue; }
    std::stringstream ss(line);
    std::string c;
    std::vector<double> r;
    while (std::getline(ss, c, ',')) {
      try {
        r.push_back(std::stod(c));
      } catch (const std::exception &) {
        throw ConfigError("dataset CSV: bad number '" + c + "'");
      }
    }
    if (static_cast<Index>(r.size()) != d + ng) { throw ConfigError("dataset CSV: ragged row"); }
    rows.push_back(std::move(r));
  }
  Dataset ds;
  ds.Z.resize(static_cast<Index>(rows.size()), d);
  ds.Y.resize(static_cast<Index>(rows.size()), ng);
  for (size_t i = 0; i < rows.size(); ++i) {
    for (Index j = 0; j < d; ++j) { ds.Z(static_cast<Index>(i), j) = rows[i][static_cast<size_t>(j)]; }
    for (Index j = 0; j < ng; ++j) { ds.Y(static_cast<Index>(i), j) = rows[i][static_cast<size_t>(d + j)]; }
  }
  ds.lambda = lambda;
  ds.wbar   = wbar;
  ds.validate();
  return ds;
}

inline void write_dataset_csv(std::ostream & out, const Dataset & ds)
{
  for (Index j = 0; j < ds.input_dim(); ++j) { out << (j ? "," : "") << "z_" << j + 1; }
  for (Index j = 0; j < ds.output_dim(); ++j) { out << ",y_" << j + 1; }
  out << '\n' << std::setprecision(17);
  for (Index i = 0; i < ds.size(); ++i) {
    for (Index j = 0; j < ds.input_dim(); ++j) { out << (j ? "," : "") << ds.Z(i, j); }
    for (Index j = 0; j < ds.output_dim(); ++j) { out << ',' << ds.Y(i, j); }
    out << '\n';
  }
}

}  // namespace gpreach
