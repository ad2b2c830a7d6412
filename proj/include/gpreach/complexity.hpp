#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <vector>

#include "gp.hpp"
#include "sampler.hpp"

namespace gpreach {

enum class NoiseMode { SubGaussian, Bounded };

inline const char * to_string(NoiseMode m) { return m == NoiseMode::SubGaussian ? "subgaussian" : "bounded"; }

inline NoiseMode noise_mode_from(const std::string & s)
{
  if (s == "subgaussian") { return NoiseMode::SubGaussian; }
  if (s == "bounded") { return NoiseMode::Bounded; }
  throw ConfigError("mode must be subgaussian or bounded, got '" + s + "'");
}

inline void check_delta(double delta)
{
  if (!(delta > 0.0 && delta < 1.0)) { throw ConfigError("delta must lie in (0,1)"); }
}

/// beta_D = (B_g + sqrt(logdet(I + lambda^-2 K_D) + 2 ln(2/delta)))^2
inline double beta_d(const GpPosterior & gp, double Bg, double delta)
{
  check_delta(delta);
  const double root = Bg + std::sqrt(gp.information_logdet() + 2.0 * std::log(2.0 / delta));
  return root * root;
}

/// Cameron-Martin shift cost for sub-Gaussian noise; holds with probability 1 - delta/2.
inline double c_d_subgaussian(const GpPosterior & gp, double Bg, double delta)
{
  const double beta   = beta_d(gp, Bg, delta);
  const double mu2    = std::pow(gp.mean_rkhs_norm(), 2);
  if (gp.size() == 0) { return 0.5 * (Bg * Bg - mu2); }
  const VectorXd sd   = gp.stddev_at_data();
  const double lam2   = gp.lambda() * gp.lambda();
  const double cross  = 2.0 * std::sqrt(beta) * gp.alpha().cwiseAbs().dot(sd);
  const double resid  = beta / lam2 * sd.squaredNorm();
  return 0.5 * (Bg * Bg - mu2 + cross + resid);
}

/// Deterministic shift cost when |w_i| <= wbar.
inline double c_d_bounded(const GpPosterior & gp, double Bg, double wbar)
{
  if (!(wbar >= 0.0)) { throw ConfigError("wbar must be >= 0"); }
  const double mu2 = std::pow(gp.mean_rkhs_norm(), 2);
  if (gp.size() == 0) { return 0.5 * (Bg * Bg + mu2); }
  const VectorXd & a = gp.alpha();
  const VectorXd & y = gp.outputs();
  const VectorXd mu  = gp.mean_at_data();
  const double lam2  = gp.lambda() * gp.lambda();
  const double s1    = (a.cwiseProduct(y).array() - a.cwiseAbs().array() * wbar).sum();
  const double s2    = ((y - mu).cwiseAbs().array() + wbar).square().sum();
  return 0.5 * (Bg * Bg + mu2 - 2.0 * s1 + s2 / lam2);
}

struct PhiEstimate
{
  double eps{0.0};
  double phi_hat{0.0};
  double phi_lo{0.0};
  double phi_hi{0.0};
  double p_hat{0.0};
  std::int64_t hits{0};
  std::int64_t draws{0};
  bool censored{false};
};

/// Wilson score interval for a binomial proportion.
inline std::pair<double, double> wilson_interval(std::int64_t hits, std::int64_t n, double z = 1.96)
{
  if (n <= 0) { return {0.0, 1.0}; }
  const double N = static_cast<double>(n), p = static_cast<double>(hits) / N, z2 = z * z;
  const double denom  = 1.0 + z2 / N;
  const double center = (p + z2 / (2.0 * N)) / denom;
  const double half   = z * std::sqrt(p * (1.0 - p) / N + z2 / (4.0 * N * N)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

inline PhiEstimate phi_from_counts(double eps, std::int64_t hits, std::int64_t M, double z = 1.96)
{
  PhiEstimate e;
  e.eps   = eps;
  e.hits  = hits;
  e.draws = M;
  e.p_hat = static_cast<double>(hits) / static_cast<double>(M);
  const auto [lo, hi] = wilson_interval(hits, M, z);
  e.phi_lo = -std::log(hi);
  e.phi_hi = lo > 0.0 ? -std::log(lo) : std::numeric_limits<double>::infinity();
  if (hits == 0) {
    e.censored = true;
    e.phi_hat  = std::log(static_cast<double>(M) + 1.0);
  } else {
    e.phi_hat = -std::log(e.p_hat);
  }
  if (e.phi_lo < 0.0) { e.phi_lo = 0.0; }
  return e;
}

/**
 * @brief Sup-norm ball probabilities for several tolerances from one batch of draws.
 *
 * Draw m uses stream (seed, m), so the result does not depend on batching.
 */
inline std::vector<PhiEstimate> estimate_phi_table(const GpPosterior & gp, const std::vector<double> & eps,
                                                   const MatrixXd & grid, std::int64_t M, std::uint64_t seed,
                                                   Center center = Center::PosteriorMean)
{
  if (M < 1) { throw ConfigError("estimate_phi needs M >= 1"); }
  const GridSampler sampler(gp, grid, center);
  std::vector<std::int64_t> hits(eps.size(), 0);
  const Index G = sampler.size();
  constexpr std::int64_t batch = 256;
  MatrixXd Xi(G, batch);
  for (std::int64_t start = 0; start < M; start += batch) {
    const std::int64_t b = std::min(batch, M - start);
    for (std::int64_t j = 0; j < b; ++j) {
      RngStream s(seed, static_cast<std::uint64_t>(start + j));
      Xi.col(static_cast<Index>(j)) = s.normals(G);
    }
    const MatrixXd V = sampler.factor().triangularView<Eigen::Lower>() * Xi.leftCols(static_cast<Index>(b));
    for (Index j = 0; j < V.cols(); ++j) {
      const double sup = V.col(j).cwiseAbs().maxCoeff();
      for (size_t e = 0; e < eps.size(); ++e) {
        if (sup <= eps[e]) { ++hits[e]; }
      }
    }
  }
  std::vector<PhiEstimate> out;
  for (size_t e = 0; e < eps.size(); ++e) { out.push_back(phi_from_counts(eps[e], hits[e], M)); }
  return out;
}

inline PhiEstimate estimate_phi(const GpPosterior & gp, double eps, const MatrixXd & grid, std::int64_t M,
                                std::uint64_t seed, Center center = Center::PosteriorMean)
{
  return estimate_phi_table(gp, {eps}, grid, M, seed, center).front();
}

/// Returned when the certificate would need more samples than can be counted.
class InfeasibleSampleCount : public NumericalError
{
public:
  explicit InfeasibleSampleCount(double exponent)
      : NumericalError(message(exponent)), exponent_(exponent)
  {}
  double exponent() const { return exponent_; }

private:
  static std::string message(double e)
  {
    std::ostringstream os;
    os << "infeasible at this eps: exponent C_D + phi = " << e;
    return os.str();
  }
  double exponent_;
};

/**
 * @brief N = ceil(log(delta') / log(1 - exp(-s))) with s = C_D + phi.
 *
 * delta' = delta/2 for sub-Gaussian noise, delta for bounded noise. The
 * denominator is formed with log1p/expm1 and the ratio in long double.
 */
inline std::uint64_t n_samples(double exponent, double delta, NoiseMode mode)
{
  check_delta(delta);
  if (!(exponent > 0.0)) {
    if (exponent == 0.0) { return 1; }
    throw ConfigError("C_D + phi must be positive");
  }
  if (!std::isfinite(exponent)) { throw InfeasibleSampleCount(exponent); }
  const long double s   = exponent;
  const long double num = std::log(static_cast<long double>(mode == NoiseMode::SubGaussian ? delta / 2.0 : delta));
  long double den;
  if (s < std::log(2.0L)) {
    den = std::log(-std::expm1(-s));
  } else {
    den = std::log1p(-std::exp(-s));
  }
  if (den == 0.0L) { throw InfeasibleSampleCount(exponent); }
  const long double ratio = num / den;
  if (!(ratio < 9.0e18L)) { throw InfeasibleSampleCount(exponent); }
  const long double n = std::ceil(ratio);
  return n < 1.0L ? 1 : static_cast<std::uint64_t>(n);
}

/// Vector-valued g: the exponent is the sum over output dimensions.
inline std::uint64_t n_samples_vector(const std::vector<double> & c_d, const std::vector<double> & phi, double delta,
                                      NoiseMode mode)
{
  if (c_d.size() != phi.size() || c_d.empty()) { throw DimensionError("n_samples_vector: need matching C_D and phi"); }
  double s = 0.0;
  for (size_t i = 0; i < c_d.size(); ++i) { s += c_d[i] + phi[i]; }
  return n_samples(s, delta, mode);
}

/// exp of the small-ball exponent envelope: SE C (ln 1/eps)^{1+d}, Matern C (1/eps)^{d/nu}.
inline double rate_bound(KernelKind kind, double eps, double d, double C, double nu = 2.5)
{
  if (!(eps > 0.0 && eps < 1.0)) { throw ConfigError("rate_bound needs eps in (0,1)"); }
  const double phi = kind == KernelKind::SquaredExponential ? C * std::pow(std::log(1.0 / eps), 1.0 + d)
                                                            : C * std::pow(1.0 / eps, d / nu);
  return std::exp(phi);
}

/// Certificate for one tolerance: per-output constants plus N.
struct ComplexityRow
{
  double eps{0.0};
  std::vector<double> eps_per_output;
  std::vector<PhiEstimate> phi;     ///< per output
  std::vector<double> C_D;          ///< per output
  std::vector<double> beta_D;       ///< per output
  double exponent{0.0};
  std::uint64_t N{0};
  bool feasible{true};
  bool censored{false};
};

struct ComplexityReport
{
  NoiseMode mode{NoiseMode::Bounded};
  double delta{0.1};
  std::vector<ComplexityRow> rows;
};

struct ComplexityOptions
{
  std::vector<double> eps;            ///< total tolerance; split equally across outputs
  double delta{0.1};
  NoiseMode mode{NoiseMode::Bounded};
  std::vector<double> Bg;             ///< one per output (or a single value)
  double wbar{0.0};
  std::int64_t draws{10000};
  std::uint64_t seed{1};
  Center center{Center::PosteriorMean};
};

/// Runs the whole certificate pipeline for every tolerance in the sweep.
inline ComplexityReport certify(const std::vector<std::shared_ptr<const GpPosterior>> & gps, const MatrixXd & grid,
                                const ComplexityOptions & opt)
{
  if (opt.eps.empty()) { throw ConfigError("eps list is empty"); }
  for (double e : opt.eps) {
    if (!(e > 0.0)) { throw ConfigError("eps must be > 0"); }
  }
  check_delta(opt.delta);
  const size_t ng = gps.size();
  if (opt.Bg.size() != 1 && opt.Bg.size() != ng) { throw ConfigError("B_g needs one value or one per output"); }

  ComplexityReport rep;
  rep.mode  = opt.mode;
  rep.delta = opt.delta;

  std::vector<double> cd(ng), beta(ng);
  std::vector<std::vector<PhiEstimate>> phis(ng);
  for (size_t j = 0; j < ng; ++j) {
    const double Bg = opt.Bg.size() == 1 ? opt.Bg[0] : opt.Bg[j];
    beta[j]         = beta_d(*gps[j], Bg, opt.delta);
    cd[j] = opt.mode == NoiseMode::SubGaussian ? c_d_subgaussian(*gps[j], Bg, opt.delta) : c_d_bounded(*gps[j], Bg, opt.wbar);
    std::vector<double> eps_j;
    for (double e : opt.eps) { eps_j.push_back(e / static_cast<double>(ng)); }
    phis[j] = estimate_phi_table(*gps[j], eps_j, grid, opt.draws, opt.seed + 7919ULL * j, opt.center);
  }

  for (size_t i = 0; i < opt.eps.size(); ++i) {
    ComplexityRow r;
    r.eps    = opt.eps[i];
    r.C_D    = cd;
    r.beta_D = beta;
    std::vector<double> ph;
    for (size_t j = 0; j < ng; ++j) {
      r.eps_per_output.push_back(opt.eps[i] / static_cast<double>(ng));
      r.phi.push_back(phis[j][i]);
      ph.push_back(phis[j][i].phi_hat);
      r.censored = r.censored || phis[j][i].censored;
      r.exponent += cd[j] + phis[j][i].phi_hat;
    }
    try {
      r.N = n_samples_vector(cd, ph, opt.delta, opt.mode);
    } catch (const InfeasibleSampleCount &) {
      r.feasible = false;
      r.N        = 0;
    }
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

}  // namespace gpreach
