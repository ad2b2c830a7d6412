#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "gp.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace gpreach {

/**
 * Per-output conditioning block shared by many samples: the data, optionally
 * followed by an anchor grid whose values each sample draws once. Values are
 * stored whitened (L^{-1} v); for the data part that is L_D^{-1} y.
 */
struct ConditioningPrefix
{
  std::shared_ptr<const GpPosterior> gp;
  MatrixXd points;            ///< data rows, then anchor rows
  MatrixXd L;                 ///< factor of the joint prefix covariance
  Index n_data{0};
  VectorXd data_whitened;     ///< L_D^{-1} y
  double fantasy_jitter{0.0}; ///< diagonal added to anchor rows

  Index size() const { return points.rows(); }
  Index n_anchor() const { return size() - n_data; }
};

inline std::shared_ptr<const ConditioningPrefix> data_prefix(std::shared_ptr<const GpPosterior> gp)
{
  auto p    = std::make_shared<ConditioningPrefix>();
  p->points = gp->inputs();
  p->L      = gp->factor();
  p->n_data = gp->size();
  if (p->n_data > 0) { p->data_whitened = p->L.triangularView<Eigen::Lower>().solve(gp->outputs()); }
  p->gp = std::move(gp);
  return p;
}

/// Data followed by a grid of anchors, factorized jointly once.
inline std::shared_ptr<const ConditioningPrefix> anchored_prefix(std::shared_ptr<const GpPosterior> gp,
                                                                  const MatrixXd & anchors)
{
  require_dim(anchors.cols(), gp->input_dim(), "anchor grid");
  const Index D = gp->size(), G = anchors.rows();
  const Kernel & k = gp->kernel();
  auto p           = std::make_shared<ConditioningPrefix>();
  p->n_data        = D;
  p->points.resize(D + G, gp->input_dim());
  p->points.topRows(D)    = gp->inputs();
  p->points.bottomRows(G) = anchors;
  p->fantasy_jitter        = 1e-10 * (k.signal_variance() > 0.0 ? k.signal_variance() : 1.0);

  // Lower-right block is the Cholesky factor of the posterior covariance on the anchors.
  const MatrixXd & LD = gp->factor();
  MatrixXd Bt         = D > 0 ? MatrixXd(LD.triangularView<Eigen::Lower>().solve(k.cross(gp->inputs(), anchors)))
                              : MatrixXd(0, G);
  MatrixXd S          = k.gram(anchors);
  if (D > 0) { S.noalias() -= Bt.transpose() * Bt; }
  S = 0.5 * (S + S.transpose());
  S.diagonal().array() += p->fantasy_jitter;
  auto LG = robust_cholesky(S);
  p->fantasy_jitter += LG.jitter;

  p->L.setZero(D + G, D + G);
  p->L.topLeftCorner(D, D)        = LD;
  p->L.bottomLeftCorner(G, D)     = Bt.transpose();
  p->L.bottomRightCorner(G, G)    = LG.lower;
  if (D > 0) { p->data_whitened = LD.triangularView<Eigen::Lower>().solve(gp->outputs()); }
  p->gp = std::move(gp);
  return p;
}

/**
 * @brief One pathwise GP sample g^n, realized lazily.
 *
 * sample_at() draws from the conditional law given data, anchors and earlier
 * fantasies, then commits the draw. conditional_mean() only reads: with a
 * dense anchor grid it is the frozen sample itself, which is what the MPC
 * evaluates and differentiates.
 */
class SampledDynamics : public DynamicsFunction
{
public:
  SampledDynamics(std::vector<std::shared_ptr<const ConditioningPrefix>> prefixes, RngStream stream)
      : stream_(std::move(stream))
  {
    if (prefixes.empty()) { throw DimensionError("SampledDynamics needs at least one output"); }
    d_ = prefixes.front()->gp->input_dim();
    for (auto & p : prefixes) {
      require_dim(p->gp->input_dim(), d_, "SampledDynamics outputs");
      OutputState s;
      s.prefix = p;
      s.u      = VectorXd(p->size());
      if (p->n_data > 0) { s.u.head(p->n_data) = p->data_whitened; }
      // Anchor values: whitened coordinates are plain standard normals.
      for (Index i = p->n_data; i < p->size(); ++i) { s.u(i) = stream_.normal(); }
      outs_.push_back(std::move(s));
    }
    tail_points_.resize(0, d_);
  }

  /// Convenience: no anchors, data only.
  static SampledDynamics from_posteriors(const std::vector<std::shared_ptr<const GpPosterior>> & gps, RngStream s)
  {
    std::vector<std::shared_ptr<const ConditioningPrefix>> p;
    for (const auto & gp : gps) { p.push_back(data_prefix(gp)); }
    return SampledDynamics(std::move(p), std::move(s));
  }

  Index output_dim() const override { return static_cast<Index>(outs_.size()); }
  Index input_dim() const override { return d_; }
  Index fantasy_count() const { return tail_points_.rows(); }
  const MatrixXd & fantasy_inputs() const { return tail_points_; }
  VectorXd fantasy_values(Index output) const
  {
    const auto & s = outs_[static_cast<size_t>(output)];
    return s.tail_values;
  }

  VectorXd sample_at(const VectorXd & z)
  {
    require_dim(z.size(), d_, "sample_at");
    for (Index i = 0; i < tail_points_.rows(); ++i) {
      if ((tail_points_.row(i).transpose() - z).norm() <= 1e-12) {
        VectorXd v(output_dim());
        for (size_t j = 0; j < outs_.size(); ++j) { v(static_cast<Index>(j)) = outs_[j].tail_values(i); }
        return v;
      }
    }

    VectorXd out(output_dim());
    std::vector<VectorXd> rows(outs_.size());
    std::vector<double> us(outs_.size());
    for (size_t j = 0; j < outs_.size(); ++j) {
      auto & s           = outs_[j];
      const Kernel & ker = s.prefix->gp->kernel();
      const double kzz   = ker.signal_variance();
      VectorXd a         = whitened_column(s, z);
      const double mean  = a.dot(s.u);
      const double var   = std::clamp(kzz - a.squaredNorm(), 0.0, kzz);
      const double value = mean + std::sqrt(var) * stream_.normal();

      // Schur complement of the new fantasy row, with escalating jitter.
      const double scale = kzz > 0.0 ? kzz : 1.0;
      double jit         = 1e-10 * scale;
      double d2          = kzz - a.squaredNorm() + jit;
      while (!(d2 > 0.0)) {
        jit *= 10.0;
        if (jit > 1e-6 * scale) { throw FactorizationError("fantasy conditioning failed at a degenerate point"); }
        d2 = kzz - a.squaredNorm() + jit;
      }
      const double diag = std::sqrt(d2);
      rows[j].resize(a.size() + 1);
      rows[j] << a, diag;
      us[j]                         = (value - mean) / diag;
      out(static_cast<Index>(j)) = value;
    }

    const Index m = tail_points_.rows();
    tail_points_.conservativeResize(m + 1, Eigen::NoChange);
    tail_points_.row(m) = z.transpose();
    for (size_t j = 0; j < outs_.size(); ++j) {
      auto & s = outs_[j];
      s.tail_rows.push_back(std::move(rows[j]));
      s.u.conservativeResize(s.u.size() + 1);
      s.u(s.u.size() - 1) = us[j];
      s.tail_values.conservativeResize(m + 1);
      s.tail_values(m) = out(static_cast<Index>(j));
      s.beta_valid     = false;
    }
    return out;
  }

  /// Mean of each output given data, anchors and fantasies.
  VectorXd conditional_mean(const VectorXd & z) const
  {
    require_dim(z.size(), d_, "conditional_mean");
    VectorXd v(output_dim());
    for (size_t j = 0; j < outs_.size(); ++j) {
      const auto & s = outs_[j];
      ensure_beta(s);
      const Kernel & ker = s.prefix->gp->kernel();
      double acc         = s.beta.head(s.prefix->size()).dot(ker.column(s.prefix->points, z));
      if (tail_points_.rows() > 0) { acc += s.beta.tail(tail_points_.rows()).dot(ker.column(tail_points_, z)); }
      v(static_cast<Index>(j)) = acc;
    }
    return v;
  }

  /// d conditional_mean / dz, one row per output.
  MatrixXd conditional_mean_jacobian(const VectorXd & z) const
  {
    require_dim(z.size(), d_, "conditional_mean_jacobian");
    MatrixXd J(output_dim(), d_);
    for (size_t j = 0; j < outs_.size(); ++j) {
      const auto & s = outs_[j];
      ensure_beta(s);
      const Kernel & ker = s.prefix->gp->kernel();
      VectorXd g         = ker.column_gradient(s.prefix->points, z).transpose() * s.beta.head(s.prefix->size());
      if (tail_points_.rows() > 0) {
        g += ker.column_gradient(tail_points_, z).transpose() * s.beta.tail(tail_points_.rows());
      }
      J.row(static_cast<Index>(j)) = g.transpose();
    }
    return J;
  }

  VectorXd conditional_variance(const VectorXd & z) const
  {
    require_dim(z.size(), d_, "conditional_variance");
    VectorXd v(output_dim());
    for (size_t j = 0; j < outs_.size(); ++j) {
      const double kzz         = outs_[j].prefix->gp->kernel().signal_variance();
      v(static_cast<Index>(j)) = std::clamp(kzz - whitened_column(outs_[j], z).squaredNorm(), 0.0, kzz);
    }
    return v;
  }

  VectorXd value(const VectorXd & z) const override { return conditional_mean(z); }
  MatrixXd jacobian(const VectorXd & z) const override { return conditional_mean_jacobian(z); }

private:
  struct OutputState
  {
    std::shared_ptr<const ConditioningPrefix> prefix;
    std::vector<VectorXd> tail_rows;   ///< row i of the tail factor, length n0 + i + 1
    VectorXd u;                        ///< whitened values, prefix then tail
    VectorXd tail_values;
    mutable VectorXd beta;             ///< L^{-T} u, the kernel weights
    mutable bool beta_valid{false};
  };

  // a = L^{-1} k(points, z) for the full (prefix + tail) factor.
  VectorXd whitened_column(const OutputState & s, const VectorXd & z) const
  {
    const auto & p     = *s.prefix;
    const Kernel & ker = p.gp->kernel();
    const Index n0 = p.size(), m = tail_points_.rows();
    VectorXd a(n0 + m);
    if (n0 > 0) { a.head(n0) = p.L.triangularView<Eigen::Lower>().solve(ker.column(p.points, z)); }
    if (m > 0) {
      const VectorXd k1 = ker.column(tail_points_, z);
      for (Index i = 0; i < m; ++i) {
        const VectorXd & r = s.tail_rows[static_cast<size_t>(i)];
        a(n0 + i)          = (k1(i) - r.head(n0 + i).dot(a.head(n0 + i))) / r(n0 + i);
      }
    }
    return a;
  }

  void ensure_beta(const OutputState & s) const
  {
    if (s.beta_valid) { return; }
    const auto & p  = *s.prefix;
    const Index n0 = p.size(), m = tail_points_.rows();
    VectorXd r = s.u;
    // Back substitution through the tail rows, then the prefix block.
    for (Index i = m - 1; i >= 0; --i) {
      const VectorXd & row = s.tail_rows[static_cast<size_t>(i)];
      r(n0 + i) /= row(n0 + i);
      r.head(n0 + i) -= r(n0 + i) * row.head(n0 + i);
    }
    if (n0 > 0) { r.head(n0) = p.L.transpose().triangularView<Eigen::Upper>().solve(VectorXd(r.head(n0))); }
    s.beta       = std::move(r);
    s.beta_valid = true;
  }

  RngStream stream_;
  Index d_{0};
  std::vector<OutputState> outs_;
  MatrixXd tail_points_;
};

inline VectorXd sample_at(SampledDynamics & s, const VectorXd & z) { return s.sample_at(z); }

/// Read-only view of a SampledDynamics as a frozen function.
class FrozenSample : public DynamicsFunction
{
public:
  explicit FrozenSample(std::shared_ptr<const SampledDynamics> s) : s_(std::move(s)) {}
  Index output_dim() const override { return s_->output_dim(); }
  Index input_dim() const override { return s_->input_dim(); }
  VectorXd value(const VectorXd & z) const override { return s_->conditional_mean(z); }
  MatrixXd jacobian(const VectorXd & z) const override { return s_->conditional_mean_jacobian(z); }

private:
  std::shared_ptr<const SampledDynamics> s_;
};

// ---------------------------------------------------------------------------
// Grids

/// Tensor grid with `per_dim` equally spaced points per coordinate (endpoints included).
inline MatrixXd tensor_grid(const Box & box, Index per_dim)
{
  const Index d = box.dim();
  if (per_dim < 1) { throw ConfigError("grid needs at least one point per dimension"); }
  Index n = 1;
  for (Index i = 0; i < d; ++i) { n *= per_dim; }
  MatrixXd G(n, d);
  for (Index r = 0; r < n; ++r) {
    Index rem = r;
    for (Index i = d - 1; i >= 0; --i) {
      const Index c = rem % per_dim;
      rem /= per_dim;
      const double t = per_dim == 1 ? 0.5 : static_cast<double>(c) / static_cast<double>(per_dim - 1);
      G(r, i)        = box.lo(i) + t * (box.hi(i) - box.lo(i));
    }
  }
  return G;
}

/// Tensor grid with a per-dimension count.
inline MatrixXd tensor_grid(const Box & box, const std::vector<Index> & counts)
{
  const Index d = box.dim();
  require_dim(static_cast<Index>(counts.size()), d, "tensor_grid counts");
  Index n = 1;
  for (Index c : counts) { n *= c; }
  MatrixXd G(n, d);
  for (Index r = 0; r < n; ++r) {
    Index rem = r;
    for (Index i = d - 1; i >= 0; --i) {
      const Index k  = counts[static_cast<size_t>(i)];
      const Index c  = rem % k;
      rem /= k;
      const double t = k == 1 ? 0.5 : static_cast<double>(c) / static_cast<double>(k - 1);
      G(r, i)        = box.lo(i) + t * (box.hi(i) - box.lo(i));
    }
  }
  return G;
}

inline MatrixXd latin_hypercube(const Box & box, Index n, RngStream & rng)
{
  const Index d = box.dim();
  MatrixXd G(n, d);
  std::vector<Index> perm(static_cast<size_t>(n));
  for (Index i = 0; i < d; ++i) {
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    for (Index r = 0; r < n; ++r) {
      const double t = (static_cast<double>(perm[static_cast<size_t>(r)]) + rng.uniform()) / static_cast<double>(n);
      G(r, i)        = box.lo(i) + t * (box.hi(i) - box.lo(i));
    }
  }
  return G;
}

/// 30 points per dimension for d <= 2, otherwise a 1000-point Latin hypercube.
inline MatrixXd default_eval_grid(const Box & box, std::uint64_t seed, Index per_dim = 30, Index lhs_points = 1000)
{
  if (box.dim() <= 2) { return tensor_grid(box, per_dim); }
  RngStream rng(seed, 0x6c6873ULL);
  return latin_hypercube(box, lhs_points, rng);
}

// ---------------------------------------------------------------------------
// Joint draws on a grid, for small-ball estimation.

enum class Center { ZeroMeanPrior, PosteriorMean };

/// Caches the factor of the prior or posterior covariance on a grid.
class GridSampler
{
public:
  GridSampler(const GpPosterior & gp, const MatrixXd & grid, Center center)
  {
    if (grid.rows() == 0) { throw ConfigError("sampling grid is empty"); }
    const MatrixXd C = center == Center::ZeroMeanPrior ? gp.kernel().gram(grid) : gp.covariance_on(grid);
    if (C.diagonal().maxCoeff() <= 0.0) {
      L_.setZero(grid.rows(), grid.rows());
    } else {
      L_ = robust_cholesky(C).lower;
    }
  }

  Index size() const { return L_.rows(); }
  const MatrixXd & factor() const { return L_; }

  VectorXd draw(RngStream & s) const { return L_.triangularView<Eigen::Lower>() * s.normals(L_.rows()); }

private:
  MatrixXd L_;
};

/// One joint draw on the grid, minus the chosen center.
inline VectorXd sample_function_on_grid(const GpPosterior & gp, const MatrixXd & grid, Center center, RngStream & s)
{
  return GridSampler(gp, grid, center).draw(s);
}

// ---------------------------------------------------------------------------

/// x^n_{k+1} = f(x^n_k, u_k) + B_d sample_at(z_k); optional feedback u_k = K x_k + v_k.
inline std::vector<VectorXd> rollout_sample(SampledDynamics & s, const KnownModel & plant, const VectorXd & x0,
                                            const std::vector<VectorXd> & inputs, const MatrixXd * feedback = nullptr)
{
  require_dim(x0.size(), plant.nx, "rollout_sample x0");
  std::vector<VectorXd> xs{x0};
  xs.reserve(inputs.size() + 1);
  for (size_t k = 0; k < inputs.size(); ++k) {
    const VectorXd & x = xs.back();
    VectorXd u         = inputs[k];
    if (feedback) { u += (*feedback) * x; }
    VectorXd xn = plant.step(x, u, s.sample_at(plant.gp_input(x, u)));
    if (!xn.allFinite()) {
      throw NumericalError("sample rollout produced a non-finite state at step " + std::to_string(k + 1));
    }
    xs.push_back(std::move(xn));
  }
  return xs;
}

}  // namespace gpreach
