#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "gp.hpp"
#include "model.hpp"
#include "sampler.hpp"

namespace gpreach {

struct LipschitzConfig
{
  double L{1.0};
  Metric metric;
  std::optional<MatrixXd> feedback;   ///< inputs realized as u = K x + v when set

  void validate() const
  {
    if (!(L > 0.0) || !std::isfinite(L)) { throw ConfigError("Lipschitz constant must be > 0"); }
  }
};

/**
 * Per-output tolerance and noise bound together with the column norms of B_d
 * in the tube metric. In the scalar case epsbar() = ||B_d|| (eps + wbar).
 */
struct UncertaintyBudget
{
  VectorXd eps;
  VectorXd wbar;
  VectorXd bd_norm;

  static UncertaintyBudget make(const MatrixXd & Bd, const VectorXd & eps, const VectorXd & wbar,
                                const Metric & metric = Metric{})
  {
    require_dim(eps.size(), Bd.cols(), "budget eps");
    require_dim(wbar.size(), Bd.cols(), "budget wbar");
    UncertaintyBudget b{eps, wbar, VectorXd(Bd.cols())};
    for (Index i = 0; i < Bd.cols(); ++i) { b.bd_norm(i) = metric.induced_from_euclidean(Bd.col(i)); }
    return b;
  }

  double epsbar() const { return bd_norm.dot(eps + wbar); }
  double epistemic() const { return bd_norm.dot(eps); }
};

/// eps_0 = 0, eps_{k+1} = L eps_k + epsbar.
inline VectorXd tube_radii(double L, double epsbar, Index H)
{
  if (H < 0) { throw ConfigError("horizon must be >= 0"); }
  VectorXd r(H + 1);
  r(0) = 0.0;
  for (Index k = 0; k < H; ++k) { r(k + 1) = L * r(k) + epsbar; }
  return r;
}

inline VectorXd tube_radii(const LipschitzConfig & lip, const UncertaintyBudget & b, Index H)
{
  return tube_radii(lip.L, b.epsbar(), H);
}

/// epsbar * sum_{i<k} L^i in closed form; used to cross-check the recursion.
inline double tube_radius_closed_form(double L, double epsbar, Index k)
{
  if (L == 1.0) { return static_cast<double>(k) * epsbar; }
  return epsbar * (std::pow(L, static_cast<double>(k)) - 1.0) / (L - 1.0);
}

/**
 * How c_i is formed:
 *  - Lemma: c_i = L^i epsbar + 2 ||B_d|| eps sum_{j<i} L^j, with L a Lipschitz
 *    constant of the true dynamics.
 *  - SampleLipschitz: c_i = L^i epsbar, valid when L bounds every sampled
 *    dynamics f + B_d g^n instead.
 */
enum class TighteningRule { Lemma, SampleLipschitz };

struct Tightenings
{
  VectorXd c;       ///< c_0 .. c_{H-1}
  VectorXd Delta;   ///< Delta_0 .. Delta_H, Delta_i = sum_{j<i} c_j
};

inline Tightenings tightenings(double L, double epsbar, double epistemic, Index H,
                               TighteningRule rule = TighteningRule::Lemma)
{
  if (H < 1) { throw ConfigError("tightenings need H >= 1"); }
  Tightenings t;
  t.c.resize(H);
  t.Delta.resize(H + 1);
  double Li = 1.0, geo = 0.0;   // L^i and sum_{j<i} L^j
  for (Index i = 0; i < H; ++i) {
    t.c(i) = Li * epsbar + (rule == TighteningRule::Lemma ? 2.0 * epistemic * geo : 0.0);
    geo += Li;
    Li *= L;
  }
  t.Delta(0) = 0.0;
  for (Index i = 0; i < H; ++i) { t.Delta(i + 1) = t.Delta(i) + t.c(i); }
  return t;
}

inline Tightenings tightenings(const LipschitzConfig & lip, const UncertaintyBudget & b, Index H,
                               TighteningRule rule = TighteningRule::Lemma)
{
  return tightenings(lip.L, b.epsbar(), b.epistemic(), H, rule);
}

struct ReachTube
{
  std::vector<std::vector<VectorXd>> centers;   ///< [n][k]
  VectorXd radii;
  Metric metric;

  Index horizon() const { return radii.size() - 1; }

  bool contains(Index k, const VectorXd & x) const
  {
    if (k < 0 || k > horizon()) { throw DimensionError("tube stage out of range"); }
    for (const auto & c : centers) {
      if (metric.norm(x - c[static_cast<size_t>(k)]) <= radii(k) + 1e-12) { return true; }
    }
    return false;
  }
};

inline bool contains(const ReachTube & t, Index k, const VectorXd & x) { return t.contains(k, x); }

/// Rolls out every sample under the shared inputs and attaches the radii.
inline ReachTube build_tube(std::vector<SampledDynamics> & samples, const KnownModel & plant, const VectorXd & x0,
                            const std::vector<VectorXd> & inputs, const LipschitzConfig & lip,
                            const UncertaintyBudget & budget)
{
  lip.validate();
  ReachTube t;
  t.metric = lip.metric;
  t.radii  = tube_radii(lip, budget, static_cast<Index>(inputs.size()));
  t.centers.resize(samples.size());
  const MatrixXd * K = lip.feedback ? &*lip.feedback : nullptr;
  for (size_t n = 0; n < samples.size(); ++n) { t.centers[n] = rollout_sample(samples[n], plant, x0, inputs, K); }
  return t;
}

struct BaselineTube
{
  VectorXd radii;
  std::vector<VectorXd> centers;   ///< mean-dynamics path
  VectorXd sigma_max;              ///< per step, largest posterior std on the shell
};

/**
 * @brief Sequential worst-case ball propagation around the mean path.
 *
 * r_{k+1} = L r_k + max over the shell of sum_i ||B_{d,i}|| (sqrt(beta_i) sigma_i + wbar_i).
 * The shell is `n_dirs` seeded directions at distance r_k plus the center.
 */
inline BaselineTube baseline_sequential_tube(const std::vector<std::shared_ptr<const GpPosterior>> & gps,
                                             const KnownModel & plant, const VectorXd & x0,
                                             const std::vector<VectorXd> & inputs, const LipschitzConfig & lip,
                                             const VectorXd & beta, const VectorXd & wbar, Index n_dirs = 64,
                                             std::uint64_t seed = 7)
{
  lip.validate();
  require_dim(static_cast<Index>(gps.size()), plant.ng, "baseline outputs");
  require_dim(beta.size(), plant.ng, "baseline beta");
  require_dim(wbar.size(), plant.ng, "baseline wbar");
  if (n_dirs < 1) { throw ConfigError("baseline shell sampling failed: no directions"); }

  const Index H = static_cast<Index>(inputs.size());
  BaselineTube out;
  out.radii.setZero(H + 1);
  out.sigma_max.setZero(H);
  out.centers.push_back(x0);

  RngStream rng(seed, 0xba5eULL);
  MatrixXd dirs(plant.nx, n_dirs);
  for (Index j = 0; j < n_dirs; ++j) {
    VectorXd d = rng.normals(plant.nx);
    d /= lip.metric.norm(d);
    dirs.col(j) = d;
  }

  auto input_at = [&](const VectorXd & x, Index k) {
    VectorXd u = inputs[static_cast<size_t>(k)];
    if (lip.feedback) { u += (*lip.feedback) * x; }
    return u;
  };

  for (Index k = 0; k < H; ++k) {
    const VectorXd & c = out.centers.back();
    const double r     = out.radii(k);
    double worst = -1.0, smax = 0.0;
    const Index count = r > 0.0 ? n_dirs + 1 : 1;
    for (Index j = 0; j < count; ++j) {
      const VectorXd x = j == 0 ? c : VectorXd(c + r * dirs.col(j - 1));
      const VectorXd u = input_at(x, k);
      const VectorXd z = plant.gp_input(x, u);
      const MatrixXd B = plant.Bd(x);
      double term      = 0.0;
      for (Index i = 0; i < plant.ng; ++i) {
        const double s = gps[static_cast<size_t>(i)]->stddev(z);
        smax           = std::max(smax, s);
        term += lip.metric.induced_from_euclidean(B.col(i)) * (std::sqrt(beta(i)) * s + wbar(i));
      }
      worst = std::max(worst, term);
    }
    if (worst < 0.0) { throw NumericalError("baseline shell sampling failed: empty shell"); }
    out.sigma_max(k)   = smax;
    out.radii(k + 1)   = lip.L * r + worst;

    const VectorXd u = input_at(c, k);
    const VectorXd z = plant.gp_input(c, u);
    VectorXd mu(plant.ng);
    for (Index i = 0; i < plant.ng; ++i) { mu(i) = gps[static_cast<size_t>(i)]->mean(z); }
    VectorXd cn = plant.step(c, u, mu);
    if (!cn.allFinite()) { throw NumericalError("baseline mean path became non-finite"); }
    out.centers.push_back(std::move(cn));
  }
  return out;
}

/// Total state Jacobian of x -> f(x, u) + B_d(x) g(z(x, u)), with u = K x + v if K is given.
inline MatrixXd closed_loop_jacobian(const KnownModel & plant, const DynamicsFunction & g, const VectorXd & x,
                                     const VectorXd & u, const MatrixXd * K)
{
  const VectorXd z = plant.gp_input(x, u);
  const VectorXd gv = g.value(z);
  MatrixXd A, B, Sx, Su;
  plant.known_partials(x, u, gv, A, B);
  plant.gp_input_selectors(Sx, Su);
  const MatrixXd Bd = plant.Bd(x);
  const MatrixXd Jg = g.jacobian(z);
  A += Bd * Jg * Sx;
  B += Bd * Jg * Su;
  if (K) { A += B * (*K); }
  return A;
}

/**
 * @brief Largest closed-loop Jacobian norm over (x, u) points and functions, times `inflation`.
 *
 * Rows of XU are stacked [x; u] vectors, u being the applied input.
 */
inline double estimate_lipschitz(const KnownModel & plant, const std::vector<const DynamicsFunction *> & fns,
                                 const MatrixXd & XU, const Metric & metric, const MatrixXd * K = nullptr,
                                 double inflation = 1.10)
{
  require_dim(XU.cols(), plant.nx + plant.nu, "estimate_lipschitz points");
  double L = 0.0;
  for (Index r = 0; r < XU.rows(); ++r) {
    const VectorXd x = XU.row(r).head(plant.nx).transpose();
    const VectorXd u = XU.row(r).tail(plant.nu).transpose();
    for (const auto * g : fns) { L = std::max(L, metric.operator_norm(closed_loop_jacobian(plant, *g, x, u, K))); }
  }
  return inflation * L;
}

/**
 * @brief Diagonal tube metric that keeps the final tube small in euclidean terms.
 *
 * Minimizes epsbar_P * sum_{k<H} L_P^k * max_i P_ii^{-1/2} by multiplicative
 * coordinate search, where L_P is the worst operator norm over `jacobians`.
 */
inline VectorXd optimize_diagonal_metric(const std::vector<MatrixXd> & jacobians, const MatrixXd & Bd,
                                         const VectorXd & eps_plus_w, Index H, int sweeps = 30)
{
  const Index n = Bd.rows();
  auto objective = [&](const VectorXd & w) {
    const Metric m = Metric::weighted(MatrixXd(w.asDiagonal()));
    double L = 0.0;
    for (const auto & J : jacobians) { L = std::max(L, m.operator_norm(J)); }
    double eb = 0.0;
    for (Index i = 0; i < Bd.cols(); ++i) { eb += m.induced_from_euclidean(Bd.col(i)) * eps_plus_w(i); }
    return tube_radius_closed_form(L, eb, H) / std::sqrt(w.minCoeff());
  };
  VectorXd w    = VectorXd::Ones(n);
  double best   = objective(w);
  const double factors[] = {8.0, 2.0, 0.5, 0.125};
  for (int s = 0; s < sweeps; ++s) {
    bool improved = false;
    for (Index i = 0; i < n; ++i) {
      for (double f : factors) {
        VectorXd t = w;
        t(i) *= f;
        const double v = objective(t);
        if (v < best * (1.0 - 1e-9)) {
          best     = v;
          w        = t;
          improved = true;
        }
      }
    }
    if (!improved) { break; }
  }
  return w / w.minCoeff();
}

}  // namespace gpreach
