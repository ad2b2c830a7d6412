#pragma once

#include <chrono>
#include <fstream>
#include <sstream>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "complexity.hpp"
#include "config.hpp"
#include "mpc.hpp"
#include "plants.hpp"
#include "reachability.hpp"
#include "sampler.hpp"

namespace gpreach {

// ---------------------------------------------------------------------------
// Helper dynamics

/// Posterior means of independent outputs as one DynamicsFunction.
class MeanDynamics : public DynamicsFunction
{
public:
  explicit MeanDynamics(std::vector<std::shared_ptr<const GpPosterior>> gps) : gps_(std::move(gps)) {}
  Index output_dim() const override { return static_cast<Index>(gps_.size()); }
  Index input_dim() const override { return gps_.front()->input_dim(); }
  VectorXd value(const VectorXd & z) const override
  {
    VectorXd v(output_dim());
    for (Index i = 0; i < output_dim(); ++i) { v(i) = gps_[static_cast<size_t>(i)]->mean(z); }
    return v;
  }
  MatrixXd jacobian(const VectorXd & z) const override
  {
    MatrixXd J(output_dim(), z.size());
    for (Index i = 0; i < output_dim(); ++i) { J.row(i) = gps_[static_cast<size_t>(i)]->mean_gradient(z).transpose(); }
    return J;
  }

private:
  std::vector<std::shared_ptr<const GpPosterior>> gps_;
};

/**
 * @brief g* plus a smooth bounded perturbation, |g - g*| <= amp componentwise.
 *
 * Stands in for the sample that the certificate promises to be eps-close.
 */
class PerturbedTruth : public DynamicsFunction
{
public:
  PerturbedTruth(std::shared_ptr<const DynamicsFunction> truth, VectorXd amp, MatrixXd freq, VectorXd phase)
      : g_(std::move(truth)), amp_(std::move(amp)), W_(std::move(freq)), ph_(std::move(phase))
  {}

  static std::shared_ptr<PerturbedTruth> random(std::shared_ptr<const DynamicsFunction> truth, const VectorXd & amp,
                                                RngStream rng, double max_freq = 2.0)
  {
    const Index m = truth->output_dim(), d = truth->input_dim();
    MatrixXd W(m, d);
    VectorXd ph(m);
    for (Index i = 0; i < m; ++i) {
      for (Index j = 0; j < d; ++j) { W(i, j) = rng.uniform(-max_freq, max_freq); }
      ph(i) = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    return std::make_shared<PerturbedTruth>(std::move(truth), amp, W, ph);
  }

  Index output_dim() const override { return g_->output_dim(); }
  Index input_dim() const override { return g_->input_dim(); }
  VectorXd value(const VectorXd & z) const override
  {
    return g_->value(z) + amp_.cwiseProduct((W_ * z + ph_).array().sin().matrix());
  }
  MatrixXd jacobian(const VectorXd & z) const override
  {
    const VectorXd c = amp_.cwiseProduct((W_ * z + ph_).array().cos().matrix());
    return g_->jacobian(z) + c.asDiagonal() * W_;
  }

private:
  std::shared_ptr<const DynamicsFunction> g_;
  VectorXd amp_;
  MatrixXd W_;
  VectorXd ph_;
};

// ---------------------------------------------------------------------------
// Problem: plant, ground truth, data, GP

inline VectorXd to_vec(const std::vector<double> & v) { return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size())); }

inline Box make_box(const std::vector<double> & lo, const std::vector<double> & hi) { return Box{to_vec(lo), to_vec(hi)}; }

inline std::vector<Index> counts(const std::vector<double> & c)
{
  std::vector<Index> out;
  for (double v : c) { out.push_back(static_cast<Index>(std::llround(v))); }
  return out;
}

struct Problem
{
  RunConfig cfg;
  KnownModel model;
  std::vector<Kernel> kernels;
  std::shared_ptr<RkhsDynamics> truth;
  std::vector<double> Bg;             ///< RKHS norm of each truth component
  std::vector<double> truth_fit_error;
  Dataset data;
  std::vector<std::shared_ptr<const GpPosterior>> gps;
  std::shared_ptr<MeanDynamics> mean;
  Box gp_box;
  MatrixXd eval_grid;
  Polytope X, U;
  VectorXd x_nom, u_nom;

  Index ng() const { return model.ng; }
  NoiseMode mode() const { return noise_mode_from(cfg.noise_mode); }
  NoiseKind noise_kind() const { return cfg.noise_kind == "uniform" ? NoiseKind::Uniform : NoiseKind::TruncatedGaussian; }

  /// Per-output tolerance for a total eps (equal split).
  VectorXd eps_split(double eps) const { return VectorXd::Constant(ng(), eps / static_cast<double>(ng())); }

  TruePlant true_plant(std::uint64_t stream) const
  {
    return TruePlant{model, truth, BoundedNoise(VectorXd::Constant(ng(), cfg.wbar), noise_kind(), RngStream(cfg.seed, stream))};
  }
};

inline Kernel make_kernel(const RunConfig & c)
{
  const VectorXd ls = to_vec(c.kernel_ls);
  if (c.kernel_type == "se") { return Kernel::squared_exponential(c.kernel_sf2, ls); }
  return Kernel::matern(smoothness_from(c.kernel_nu), c.kernel_sf2, ls);
}

inline Problem build_problem(const RunConfig & cfg)
{
  cfg.validate();
  Problem p;
  p.cfg = cfg;
  std::function<VectorXd(const VectorXd &)> reference;
  if (cfg.plant == "pendulum") {
    p.model   = pendulum_model(cfg.pend_l, cfg.pend_dt);
    reference = [l = cfg.pend_l, dt = cfg.pend_dt](const VectorXd & z) {
      return VectorXd::Constant(1, pendulum_reference(z, l, dt));
    };
    p.x_nom = VectorXd::Zero(2);
    p.u_nom = VectorXd::Zero(1);
  } else {
    p.model   = car_model(cfg.car_lf, cfg.car_lr, cfg.car_dt);
    reference = [lf = cfg.car_lf, lr = cfg.car_lr, dt = cfg.car_dt](const VectorXd & z) {
      return car_reference(z, lf, lr, dt);
    };
    p.x_nom = VectorXd::Zero(4);
    p.x_nom(3) = cfg.car_v;
    p.u_nom = VectorXd::Zero(2);
  }
  p.X = Polytope::from_box(make_box(cfg.x_lo, cfg.x_hi));
  p.U = Polytope::from_box(make_box(cfg.u_lo, cfg.u_hi));

  const Kernel k = make_kernel(cfg);
  p.kernels      = {k};
  const MatrixXd centers = tensor_grid(make_box(cfg.truth_lo, cfg.truth_hi), counts(cfg.truth_centers));
  p.gp_box               = make_box(cfg.data_lo, cfg.data_hi);
  const MatrixXd check   = tensor_grid(p.gp_box, 15);
  std::vector<RkhsFunction> comps;
  for (Index j = 0; j < p.model.ng; ++j) {
    auto ref_j     = [&reference, j](const VectorXd & z) { return reference(z)(j); };
    const auto fit = fit_rkhs_ground_truth(ref_j, k, centers, cfg.truth_bg, check);
    comps.push_back(fit.f);
    p.Bg.push_back(fit.f.rkhs_norm());
    p.truth_fit_error.push_back(fit.sup_deviation);
  }
  p.truth = std::make_shared<RkhsDynamics>(comps);

  // Training data from the truth with its own noise bound.
  TruePlant data_plant{p.model, p.truth,
                       BoundedNoise(VectorXd::Constant(p.model.ng, cfg.data_wbar), p.noise_kind(), RngStream(cfg.seed, 0xda7aULL))};
  const MatrixXd Z = tensor_grid(p.gp_box, counts(cfg.data_grid));
  p.data           = generate_dataset(data_plant, Z, p.x_nom, p.u_nom, cfg.lambda, cfg.data_wbar);
  p.gps            = fit_posteriors(p.data, p.kernels);
  p.mean           = std::make_shared<MeanDynamics>(p.gps);
  p.eval_grid      = default_eval_grid(p.gp_box, cfg.seed, cfg.grid_per_dim);
  return p;
}

// ---------------------------------------------------------------------------
// Certificate

inline ComplexityReport run_certificate(const Problem & p, std::optional<std::vector<double>> eps = std::nullopt)
{
  ComplexityOptions o;
  o.eps   = eps ? *eps : p.cfg.eps;
  o.delta = p.cfg.delta;
  o.mode  = p.mode();
  o.Bg    = p.Bg;
  // Bounded mode certifies with the data noise bound.
  o.wbar   = p.cfg.data_wbar;
  o.draws  = p.cfg.draws;
  o.seed   = p.cfg.seed;
  o.center = Center::PosteriorMean;
  return certify(p.gps, p.eval_grid, o);
}

struct SampleChoice
{
  double eps{0.0};
  std::uint64_t N{0};
  bool certified{false};
  bool censored{false};
};

/**
 * @brief N and eps used downstream.
 *
 * With samples.n = 0: the smallest eps in the list whose certified N fits
 * samples.max. Otherwise the configured N with the first eps (no guarantee).
 */
inline SampleChoice choose_samples(const Problem & p, const ComplexityReport & rep)
{
  SampleChoice c;
  if (p.cfg.n_samples > 0) {
    c.N   = static_cast<std::uint64_t>(p.cfg.n_samples);
    c.eps = p.cfg.eps.front();
    for (const auto & r : rep.rows) {
      if (r.eps == c.eps) { c.certified = r.feasible && r.N <= c.N; }
    }
    return c;
  }
  const ComplexityRow * best = nullptr;
  for (const auto & r : rep.rows) {
    if (!r.feasible || r.N > static_cast<std::uint64_t>(p.cfg.max_samples)) { continue; }
    if (r.censored && !p.cfg.allow_censored) { continue; }
    if (!best || r.eps < best->eps) { best = &r; }
  }
  if (!best) {
    throw ConfigError("no tolerance in complexity.eps has a certified N within samples.max = "
                      + std::to_string(p.cfg.max_samples));
  }
  c.eps       = best->eps;
  c.N         = best->N;
  c.certified = true;
  c.censored  = best->censored;
  return c;
}

/// N anchored samples; sample n uses stream (seed, base + n).
inline std::vector<std::shared_ptr<SampledDynamics>> draw_samples(const Problem & p, std::uint64_t N, std::uint64_t base)
{
  const MatrixXd anchors = tensor_grid(make_box(p.cfg.anchor_lo, p.cfg.anchor_hi), counts(p.cfg.anchor_grid));
  std::vector<std::shared_ptr<const ConditioningPrefix>> prefixes;
  for (const auto & gp : p.gps) { prefixes.push_back(anchored_prefix(gp, anchors)); }
  std::vector<std::shared_ptr<SampledDynamics>> out;
  for (std::uint64_t n = 0; n < N; ++n) {
    out.push_back(std::make_shared<SampledDynamics>(prefixes, RngStream(p.cfg.seed, base + n)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lipschitz constant and metric

/// Stacked [x; u] points on a tensor grid over X x U.
inline MatrixXd lipschitz_points(const Problem & p)
{
  std::vector<double> lo = p.cfg.x_lo, hi = p.cfg.x_hi;
  lo.insert(lo.end(), p.cfg.u_lo.begin(), p.cfg.u_lo.end());
  hi.insert(hi.end(), p.cfg.u_hi.begin(), p.cfg.u_hi.end());
  const auto c = counts(p.cfg.lip_grid);
  // A single point per axis sits at the box center.
  Box b = make_box(lo, hi);
  for (size_t i = 0; i < c.size(); ++i) {
    if (c[i] == 1) { b.lo(static_cast<Index>(i)) = b.hi(static_cast<Index>(i)) = b.center()(static_cast<Index>(i)); }
  }
  return tensor_grid(b, c);
}

/// B_d with the largest column norms over the Lipschitz grid (B_d may depend on the state).
inline MatrixXd worst_bd(const Problem & p, const MatrixXd & XU, const Metric & metric)
{
  MatrixXd best = p.model.Bd(XU.row(0).head(p.model.nx).transpose());
  double top    = -1.0;
  for (Index r = 0; r < XU.rows(); ++r) {
    const MatrixXd B = p.model.Bd(XU.row(r).head(p.model.nx).transpose());
    double s         = 0.0;
    for (Index i = 0; i < B.cols(); ++i) { s += metric.induced_from_euclidean(B.col(i)); }
    if (s > top) {
      top  = s;
      best = B;
    }
  }
  return best;
}

/**
 * @brief Diagonal metric fitted to closed-loop Jacobians of the mean and up to
 * 30 of `fns` over the Lipschitz grid.
 */
inline Metric diagonal_metric(const Problem & p, const MatrixXd & XU, const std::vector<const DynamicsFunction *> & fns,
                              double eps, Index H)
{
  const KnownModel & m = p.model;
  std::vector<const DynamicsFunction *> use{p.mean.get()};
  for (size_t i = 0; i < fns.size() && i < 30; ++i) { use.push_back(fns[i]); }
  std::vector<MatrixXd> jac;
  for (Index r = 0; r < XU.rows(); ++r) {
    const VectorXd x = XU.row(r).head(m.nx).transpose(), u = XU.row(r).tail(m.nu).transpose();
    for (const auto * g : use) { jac.push_back(closed_loop_jacobian(m, *g, x, u, nullptr)); }
  }
  const VectorXd epw = p.eps_split(eps) + VectorXd::Constant(m.ng, p.cfg.wbar);
  return Metric::weighted(MatrixXd(optimize_diagonal_metric(jac, worst_bd(p, XU, Metric{}), epw, H).asDiagonal()));
}

inline VectorXd equilibrium_or_zero(const Problem & p, const VectorXd & x_eq)
{
  // The car has no rest point at positive speed; its inputs are centered at zero.
  if (p.cfg.plant == "car") { return p.u_nom; }
  return equilibrium_input(p.model, *p.mean, x_eq, p.u_nom);
}

// ---------------------------------------------------------------------------
// MPC design

struct MpcDesign
{
  SampleChoice choice;
  OcpConfig ocp;
  TerminalIngredients terminal;
  double L{0.0};
  UncertaintyBudget budget;
  CostConstants cost;
  double L_ell{0.0}, L_f{0.0};
  std::vector<std::shared_ptr<DynamicsFunction>> samples;
  Index eps_close_index{-1};
};

/**
 * @brief Terminal ingredients, metric, Lipschitz constant, tightenings and the OCP.
 *
 * Sample 0 is replaced by a constructed eps-close function when mpc.eps_close
 * is set, so falsification can be checked against a known survivor.
 */
inline MpcDesign design_mpc(const Problem & p, const SampleChoice & choice, std::uint64_t sample_base = 1000)
{
  const RunConfig & c = p.cfg;
  const KnownModel & m = p.model;
  MpcDesign d;
  d.choice = choice;
  if (choice.N > static_cast<std::uint64_t>(c.max_samples)) {
    throw ConfigError("N = " + std::to_string(choice.N) + " exceeds samples.max");
  }

  auto drawn = draw_samples(p, choice.N, sample_base);
  for (auto & s : drawn) { d.samples.push_back(s); }
  if (c.eps_close && !d.samples.empty()) {
    const VectorXd amp = 0.9 * p.eps_split(choice.eps);
    d.samples[0]       = PerturbedTruth::random(p.truth, amp, RngStream(c.seed, 0xc105eULL));
    d.eps_close_index  = 0;
  }
  std::vector<const DynamicsFunction *> fns;
  for (const auto & s : d.samples) { fns.push_back(s.get()); }

  // Terminal controller: Riccati on the mean, certified on extra linearization samples and the MPC samples.
  const VectorXd x_eq = to_vec(c.x_eq);
  const VectorXd u_eq = equilibrium_input(m, *p.mean, x_eq, p.u_nom);
  const MatrixXd Q = to_vec(c.q_diag).asDiagonal(), R = to_vec(c.r_diag).asDiagonal();
  auto lin = draw_samples(p, static_cast<std::uint64_t>(c.n_lin), 500000);
  std::vector<const DynamicsFunction *> lin_fns(fns);
  for (const auto & s : lin) { lin_fns.push_back(s.get()); }
  d.terminal = design_terminal_controller(m, *p.mean, lin_fns, x_eq, u_eq, Q, R, c.terminal_margin);

  // Metric and prediction feedback.
  Metric metric;
  MatrixXd K = MatrixXd::Zero(m.nu, m.nx);
  const MatrixXd XU = lipschitz_points(p);
  if (c.metric == "lyapunov") {
    metric = Metric::weighted(d.terminal.P);
    K      = d.terminal.K;
  } else if (c.metric == "diagonal") {
    metric = diagonal_metric(p, XU, fns, choice.eps, c.horizon);
  }
  d.L = estimate_lipschitz(m, fns, XU, metric, &K, c.lip_inflation);

  d.budget = UncertaintyBudget::make(worst_bd(p, XU, metric), p.eps_split(choice.eps), VectorXd::Constant(m.ng, c.wbar), metric);
  const TighteningRule rule = c.tightening == "lemma" ? TighteningRule::Lemma : TighteningRule::SampleLipschitz;
  const Tightenings tight   = tightenings(d.L, d.budget.epsbar(), d.budget.epistemic(), c.horizon, rule);

  select_terminal_level(d.terminal, m, fns, p.X, p.U, metric, tight.c(c.horizon - 1), tight.Delta(c.horizon - 1), Q, R,
                        x_eq, u_eq, 64, c.seed);

  OcpConfig& o    = d.ocp;
  o.H             = c.horizon;
  o.Q             = Q;
  o.R             = R;
  o.x_ref         = x_eq;
  o.u_ref         = u_eq;
  o.Pf            = d.terminal.P;
  o.x_eq          = x_eq;
  o.u_eq          = u_eq;
  o.K             = K;
  o.X             = p.X;
  o.U             = p.U;
  o.rho           = d.terminal.rho;
  o.tight         = tight;
  o.metric        = metric;
  o.sqp_iters     = static_cast<int>(c.sqp_iters);
  o.max_sqp_iters = static_cast<int>(c.max_sqp_iters);
  o.validate();

  // Cost-decrease constants over the compact X.
  const Box xb = make_box(c.x_lo, c.x_hi), ub = make_box(c.u_lo, c.u_hi);
  double rx = 0.0, ru = 0.0, rp = 0.0;
  for (Index corner = 0; corner < (Index(1) << m.nx); ++corner) {
    VectorXd x(m.nx);
    for (Index i = 0; i < m.nx; ++i) { x(i) = (corner >> i) & 1 ? xb.hi(i) : xb.lo(i); }
    rx = std::max(rx, (x - x_eq).norm());
    rp = std::max(rp, std::sqrt((x - x_eq).dot(d.terminal.P * (x - x_eq))));
  }
  for (Index corner = 0; corner < (Index(1) << m.nu); ++corner) {
    VectorXd u(m.nu);
    for (Index i = 0; i < m.nu; ++i) { u(i) = (corner >> i) & 1 ? ub.hi(i) : ub.lo(i); }
    ru = std::max(ru, (u - u_eq).norm());
  }
  const double inv = metric.is_weighted() ? spectral_norm(sym_inv_sqrt(metric.weight())) : 1.0;
  const double pf_over_metric =
      metric.is_weighted() ? spectral_norm(sym_sqrt(d.terminal.P) * sym_inv_sqrt(metric.weight())) : spectral_norm(sym_sqrt(d.terminal.P));
  d.L_ell = 2.0 * inv * (spectral_norm(Q) * rx + spectral_norm(K) * spectral_norm(R) * ru);
  d.L_f   = 2.0 * rp * pf_over_metric;
  d.cost  = cost_constants(metric.induced_from_euclidean(worst_bd(p, XU, metric)), d.L, d.L_ell, d.L_f, c.horizon, c.wbar, choice.eps);
  return d;
}

// ---------------------------------------------------------------------------
// Closed loop

struct MpcRun
{
  RunLog log;
  SampleSet set;
  bool eps_close_removed{false};
  bool monotone{true};
  bool constraints_ok{true};
  double average_cost{0.0};
  double bound{0.0};               ///< L_c + ell_s
  Index final_in_terminal{0};      ///< trailing steps with ||x - x_eq||_P <= rho
  double seconds{0.0};
};

inline MpcRun run_mpc(const Problem & p, const MpcDesign & d, std::uint64_t run_seed, Index steps,
                      bool record_predictions = false)
{
  const auto t0 = std::chrono::steady_clock::now();
  MpcRun r;
  // Each run conditions its own copies, so runs do not see each other's visited points.
  std::vector<std::shared_ptr<DynamicsFunction>> own;
  for (const auto & s : d.samples) {
    if (auto g = std::dynamic_pointer_cast<SampledDynamics>(s)) {
      own.push_back(std::make_shared<SampledDynamics>(*g));
    } else {
      own.push_back(s);
    }
  }
  r.set = SampleSet::all(std::move(own));
  TruePlant plant = p.true_plant(0x5eed0000ULL + run_seed);
  RecedingOptions o;
  o.steps              = steps;
  o.initial_iters      = static_cast<int>(p.cfg.initial_sqp_iters);
  o.Lc                 = d.cost.Lc;
  o.ell_s              = d.terminal.ell_s;
  o.commit_visited     = p.cfg.commit_visited;
  o.record_predictions = record_predictions;
  r.log = receding_horizon(d.ocp, plant, r.set, to_vec(p.cfg.x0), o);

  for (const auto & rm : r.log.removals) {
    if (rm.sample == d.eps_close_index) { r.eps_close_removed = true; }
  }
  for (size_t k = 0; k + 1 < r.log.steps.size(); ++k) {
    if (r.log.steps[k + 1].n_active > r.log.steps[k].n_active) { r.monotone = false; }
  }
  for (const auto & s : r.log.steps) {
    if (s.applied && !s.in_constraints) { r.constraints_ok = false; }
    // The state reached after the last applied input must also lie in X.
    if (s.x.allFinite() && p.X.max_violation(s.x) > 1e-9) { r.constraints_ok = false; }
  }
  r.average_cost = average_cost(r.log);
  r.bound        = d.cost.Lc + d.terminal.ell_s;
  for (auto it = r.log.steps.rbegin(); it != r.log.steps.rend(); ++it) {
    if (!it->x.allFinite()) { break; }
    const VectorXd e = it->x - d.ocp.x_eq;
    if (std::sqrt(e.dot(d.ocp.Pf * e)) > d.ocp.rho) { break; }
    ++r.final_in_terminal;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------------------
// Reachable tube

/**
 * @brief Built-in shared input sequence: optimized on the true dynamics with
 * no tightening or terminal set, so it is a plan a designer might hand over.
 */
inline std::vector<VectorXd> reference_inputs(const Problem & p, const MatrixXd & K, const VectorXd & x_eq,
                                              const VectorXd & u_eq, Index H)
{
  const RunConfig & c = p.cfg;
  OcpConfig o;
  o.H     = H;
  o.Q     = to_vec(c.q_diag).asDiagonal();
  o.R     = to_vec(c.r_diag).asDiagonal();
  o.x_ref = x_eq;
  o.u_ref = u_eq;
  o.x_eq  = x_eq;
  o.u_eq  = u_eq;
  o.Pf    = o.Q;
  o.K     = K;
  o.X     = p.X;
  o.U     = p.U;
  o.tight = no_tightening(H);
  VectorXd x0 = to_vec(c.x0);
  if (p.cfg.plant == "car") {
    // Lane change: move 3.5 m sideways over the horizon at constant speed.
    o.Q       = MatrixXd::Zero(4, 4);
    o.Q(1, 1) = 0.01;
    o.Q(3, 3) = 1.0;
    o.x_ref    = x0;
    o.x_ref(1) = 3.5;
    o.x_eq     = o.x_ref;
    o.Pf       = MatrixXd::Zero(4, 4);
    o.Pf(1, 1) = 100.0;
    o.Pf(2, 2) = 100.0;
    o.R       = VectorXd::Constant(2, 10.0).asDiagonal();
  }
  const OcpSolution s = solve_ocp(o, p.model, {p.truth.get()}, x0, std::nullopt, 200, 200);
  std::vector<VectorXd> v;
  for (Index i = 0; i < H; ++i) { v.push_back(s.v.segment(i * p.model.nu, p.model.nu)); }
  return v;
}

struct ReachResult
{
  SampleChoice choice;
  double L{0.0};
  Metric metric;
  UncertaintyBudget budget;
  ReachTube tube;
  std::vector<VectorXd> inputs;        ///< shared v sequence
  std::optional<MatrixXd> feedback;    ///< u = K x + v when set
  std::optional<BaselineTube> baseline;
  Index rollouts{0}, contained{0};
  VectorXd stage_coverage;             ///< fraction of rollouts inside the tube at stage k
  std::vector<std::vector<VectorXd>> true_paths;   ///< the first few rollouts, for plotting
};

/// Open-loop input file: one row per step, one column per input, optional header line.
inline std::vector<VectorXd> read_inputs_csv(const std::string & path, Index nu)
{
  std::ifstream in(path);
  if (!in) { throw ConfigError("cannot open input sequence '" + path + "'"); }
  std::vector<VectorXd> out;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) { continue; }
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(detail::parse_double("inputs", cell));
      } catch (const ConfigError &) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (out.empty()) { continue; }   // header
      throw ConfigError("input sequence '" + path + "' has a non-numeric row");
    }
    if (static_cast<Index>(row.size()) != nu) { throw ConfigError("input sequence rows need " + std::to_string(nu) + " columns"); }
    out.push_back(to_vec(row));
  }
  if (out.empty()) { throw ConfigError("input sequence '" + path + "' is empty"); }
  return out;
}

/**
 * @brief Sampling tube around a shared input sequence, optional baseline, and
 * containment of noisy true rollouts.
 *
 * Without `given` the built-in sequence is used (in feedback form for the
 * lyapunov metric); a given sequence is applied open loop.
 */
inline ReachResult run_reach(const Problem & p, const SampleChoice & choice, bool with_baseline,
                             const std::vector<VectorXd> * given = nullptr)
{
  const RunConfig & c  = p.cfg;
  const KnownModel & m = p.model;
  ReachResult r;
  r.choice = choice;
  const Index H = given ? static_cast<Index>(given->size()) : c.reach_horizon;

  const VectorXd x_eq = to_vec(c.x_eq);
  const VectorXd u_eq = equilibrium_or_zero(p, x_eq);
  MatrixXd K = MatrixXd::Zero(m.nu, m.nx);
  Metric metric;
  const MatrixXd XU = lipschitz_points(p);
  if (c.metric == "lyapunov") {
    const MatrixXd Q = to_vec(c.q_diag).asDiagonal(), R = to_vec(c.r_diag).asDiagonal();
    const auto t = design_terminal_controller(m, *p.mean, {}, x_eq, u_eq, Q, R, c.terminal_margin);
    metric       = Metric::weighted(t.P);
    K            = t.K;
  }
  auto samples = draw_samples(p, choice.N, 1000);
  std::vector<const DynamicsFunction *> fns;
  for (const auto & s : samples) { fns.push_back(s.get()); }
  fns.push_back(p.truth.get());
  if (c.metric == "diagonal") { metric = diagonal_metric(p, XU, fns, choice.eps, H); }
  r.metric = metric;

  if (given) {
    r.inputs = *given;
    K.setZero();
  } else {
    // Shared inputs in the u = K x + v form used by rollouts.
    const std::vector<VectorXd> v = reference_inputs(p, K, x_eq, u_eq, H);
    for (const auto & vi : v) { r.inputs.push_back(vi - K * x_eq); }
    if (K.cwiseAbs().maxCoeff() > 0.0) { r.feedback = K; }
  }

  std::vector<SampledDynamics> sv;
  for (auto & s : samples) { sv.push_back(*s); }
  r.L = estimate_lipschitz(m, fns, XU, metric, r.feedback ? &*r.feedback : nullptr, c.lip_inflation);

  LipschitzConfig lip;
  lip.L        = r.L;
  lip.metric   = metric;
  lip.feedback = r.feedback;
  r.budget     = UncertaintyBudget::make(worst_bd(p, XU, metric), p.eps_split(choice.eps), VectorXd::Constant(m.ng, c.wbar), metric);
  r.tube       = build_tube(sv, m, to_vec(c.x0), r.inputs, lip, r.budget);

  if (with_baseline) {
    VectorXd beta(m.ng), wb = VectorXd::Constant(m.ng, c.wbar);
    for (Index i = 0; i < m.ng; ++i) { beta(i) = beta_d(*p.gps[static_cast<size_t>(i)], p.Bg[static_cast<size_t>(i)], c.delta); }
    r.baseline = baseline_sequential_tube(p.gps, m, to_vec(c.x0), r.inputs, lip, beta, wb, c.baseline_dirs, c.seed);
  }

  // Containment of noisy true rollouts.
  r.rollouts = c.rollouts;
  r.stage_coverage.setZero(H + 1);
  for (Index j = 0; j < c.rollouts; ++j) {
    TruePlant tp = p.true_plant(0x7e11ULL + static_cast<std::uint64_t>(j));
    VectorXd x   = to_vec(c.x0);
    std::vector<VectorXd> path{x};
    bool all = r.tube.contains(0, x);
    r.stage_coverage(0) += all ? 1.0 : 0.0;
    for (Index k = 0; k < H; ++k) {
      VectorXd u = r.inputs[static_cast<size_t>(k)];
      if (r.feedback) { u += *r.feedback * x; }
      x = tp.step(x, u);
      path.push_back(x);
      const bool in = r.tube.contains(k + 1, x);
      r.stage_coverage(k + 1) += in ? 1.0 : 0.0;
      all = all && in;
    }
    if (all) { ++r.contained; }
    if (j < 10) { r.true_paths.push_back(std::move(path)); }
  }
  if (c.rollouts > 0) { r.stage_coverage /= static_cast<double>(c.rollouts); }
  return r;
}

}  // namespace gpreach
