#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "errors.hpp"

namespace gpreach {

/**
 * @brief Every knob of a run, read from a flat `dotted.key = value` file.
 *
 * Lists are comma separated. Keys not present keep the plant defaults, unknown
 * keys are rejected. emit() writes every key so a snapshot fully reproduces a
 * run.
 */
struct RunConfig
{
  std::string experiment{"mpc"};   ///< complexity | reach | mpc
  std::string plant{"pendulum"};   ///< pendulum | car
  std::uint64_t seed{1};
  std::string out{"run"};

  double pend_l{10.0}, pend_dt{0.015};
  double car_lf{1.105}, car_lr{1.738}, car_dt{0.06}, car_v{8.0};

  std::string kernel_type{"se"};   ///< se | matern
  double kernel_nu{2.5};
  double kernel_sf2{0.1};
  std::vector<double> kernel_ls{1.5, 10.0};

  double lambda{1.2e-3};
  double wbar{1e-4};           ///< bound used by the certificate, the tube and the simulated plant
  double data_wbar{1e-4};      ///< noise bound on the training data
  std::string noise_kind{"uniform"};
  std::string noise_mode{"bounded"};

  double truth_bg{0.0};        ///< cap on ||g*||_k; 0 keeps the interpolant's own norm
  std::vector<double> truth_centers{8, 10};
  std::vector<double> truth_lo{1.8, -6.0}, truth_hi{3.9, 6.0};

  std::vector<double> data_grid{4, 9};
  std::vector<double> data_lo{2.1, -5.0}, data_hi{3.6, 5.0};

  double delta{1e-3};
  std::vector<double> eps{2e-3};
  std::int64_t draws{20000};
  std::int64_t grid_per_dim{30};
  bool allow_censored{false};

  std::int64_t n_samples{0};   ///< 0 takes N from the certificate
  std::int64_t max_samples{100};
  std::vector<double> anchor_grid{12, 10};
  std::vector<double> anchor_lo{1.9, -6.0}, anchor_hi{3.8, 6.0};

  std::int64_t horizon{40};
  std::int64_t steps{300};
  std::int64_t sqp_iters{1};
  std::int64_t max_sqp_iters{20};
  std::int64_t initial_sqp_iters{200};
  std::vector<double> q_diag{1.0, 0.1};
  std::vector<double> r_diag{0.01};
  std::vector<double> x0{2.15, 2.3};
  std::vector<double> x_eq{3.141592653589793, 0.0};
  std::vector<double> x_lo{2.0, -3.0}, x_hi{3.6, 3.0};
  std::vector<double> u_lo{-5.0}, u_hi{5.0};
  std::int64_t n_lin{100};
  double terminal_margin{0.05};
  double lip_inflation{1.02};
  std::vector<double> lip_grid{15, 15, 7};
  std::string tightening{"sample_lipschitz"};   ///< sample_lipschitz | lemma
  std::string metric{"lyapunov"};               ///< lyapunov | euclidean | diagonal
  bool eps_close{true};
  bool commit_visited{true};
  std::int64_t snapshot_every{10};   ///< stride of the per-step tube snapshots

  std::int64_t reach_horizon{30};
  std::int64_t rollouts{200};
  bool baseline{false};
  std::int64_t baseline_dirs{64};
  std::string inputs_file;     ///< empty: built-in input sequence for the plant

  static RunConfig defaults(const std::string & plant);

  void set(const std::string & key, const std::string & value);
  std::string emit() const;
  static RunConfig parse(const std::string & text);
  static RunConfig load(const std::string & path);
  void validate() const;

  bool operator==(const RunConfig &) const = default;

private:
  using Field = std::variant<std::string *, double *, std::int64_t *, std::uint64_t *, bool *, std::vector<double> *>;
  void visit(const std::function<void(const char *, Field)> & fn);
  void visit(const std::function<void(const char *, Field)> & fn) const
  {
    const_cast<RunConfig *>(this)->visit(fn);
  }
};

namespace detail {

inline std::string trim(const std::string & s)
{
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) { return ""; }
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string & key, const std::string & s)
{
  const std::string t = trim(s);
  double v{};
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (r.ec != std::errc() || r.ptr != t.data() + t.size()) {
    throw ConfigError("key '" + key + "': '" + t + "' is not a number");
  }
  return v;
}

template <class Int>
Int parse_int(const std::string & key, const std::string & s)
{
  const std::string t = trim(s);
  Int v{};
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (r.ec != std::errc() || r.ptr != t.data() + t.size()) {
    throw ConfigError("key '" + key + "': '" + t + "' is not an integer");
  }
  return v;
}

inline std::string format_double(double v)
{
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

inline void RunConfig::visit(const std::function<void(const char *, Field)> & fn)
{
  fn("experiment", &experiment);
  fn("plant", &plant);
  fn("seed", &seed);
  fn("out", &out);
  fn("plant.pendulum.l", &pend_l);
  fn("plant.pendulum.dt", &pend_dt);
  fn("plant.car.lf", &car_lf);
  fn("plant.car.lr", &car_lr);
  fn("plant.car.dt", &car_dt);
  fn("plant.car.velocity", &car_v);
  fn("kernel.type", &kernel_type);
  fn("kernel.nu", &kernel_nu);
  fn("kernel.signal_variance", &kernel_sf2);
  fn("kernel.lengthscales", &kernel_ls);
  fn("gp.lambda", &lambda);
  fn("noise.wbar", &wbar);
  fn("noise.data_wbar", &data_wbar);
  fn("noise.kind", &noise_kind);
  fn("noise.mode", &noise_mode);
  fn("truth.bg", &truth_bg);
  fn("truth.centers", &truth_centers);
  fn("truth.lo", &truth_lo);
  fn("truth.hi", &truth_hi);
  fn("data.grid", &data_grid);
  fn("data.lo", &data_lo);
  fn("data.hi", &data_hi);
  fn("complexity.delta", &delta);
  fn("complexity.eps", &eps);
  fn("complexity.draws", &draws);
  fn("complexity.grid_per_dim", &grid_per_dim);
  fn("complexity.allow_censored", &allow_censored);
  fn("samples.n", &n_samples);
  fn("samples.max", &max_samples);
  fn("samples.anchor_grid", &anchor_grid);
  fn("samples.anchor_lo", &anchor_lo);
  fn("samples.anchor_hi", &anchor_hi);
  fn("mpc.horizon", &horizon);
  fn("mpc.steps", &steps);
  fn("mpc.sqp_iters", &sqp_iters);
  fn("mpc.max_sqp_iters", &max_sqp_iters);
  fn("mpc.initial_sqp_iters", &initial_sqp_iters);
  fn("mpc.q_diag", &q_diag);
  fn("mpc.r_diag", &r_diag);
  fn("mpc.x0", &x0);
  fn("mpc.x_eq", &x_eq);
  fn("mpc.x_lo", &x_lo);
  fn("mpc.x_hi", &x_hi);
  fn("mpc.u_lo", &u_lo);
  fn("mpc.u_hi", &u_hi);
  fn("mpc.n_lin", &n_lin);
  fn("mpc.terminal_margin", &terminal_margin);
  fn("mpc.lip_inflation", &lip_inflation);
  fn("mpc.lip_grid", &lip_grid);
  fn("mpc.tightening", &tightening);
  fn("mpc.metric", &metric);
  fn("mpc.eps_close", &eps_close);
  fn("mpc.commit_visited", &commit_visited);
  fn("mpc.snapshot_every", &snapshot_every);
  fn("reach.horizon", &reach_horizon);
  fn("reach.rollouts", &rollouts);
  fn("reach.baseline", &baseline);
  fn("reach.baseline_dirs", &baseline_dirs);
  fn("reach.inputs_file", &inputs_file);
}

inline void RunConfig::set(const std::string & key, const std::string & value)
{
  bool found = false;
  visit([&](const char * name, Field f) {
    if (key != name) { return; }
    found = true;
    std::visit(
        [&](auto * p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::string>) {
            *p = detail::trim(value);
          } else if constexpr (std::is_same_v<T, double>) {
            *p = detail::parse_double(key, value);
          } else if constexpr (std::is_same_v<T, std::int64_t> || std::is_same_v<T, std::uint64_t>) {
            *p = detail::parse_int<T>(key, value);
          } else if constexpr (std::is_same_v<T, bool>) {
            const std::string t = detail::trim(value);
            if (t == "true" || t == "1") {
              *p = true;
            } else if (t == "false" || t == "0") {
              *p = false;
            } else {
              throw ConfigError("key '" + key + "': expected true or false");
            }
          } else {
            p->clear();
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ',')) {
              if (!detail::trim(item).empty()) { p->push_back(detail::parse_double(key, item)); }
            }
          }
        },
        f);
  });
  if (!found) { throw ConfigError("unknown config key '" + key + "'"); }
}

inline std::string RunConfig::emit() const
{
  std::ostringstream out;
  visit([&](const char * name, Field f) {
    out << name << " = ";
    std::visit(
        [&](auto * p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::string>) {
            out << *p;
          } else if constexpr (std::is_same_v<T, double>) {
            out << detail::format_double(*p);
          } else if constexpr (std::is_same_v<T, bool>) {
            out << (*p ? "true" : "false");
          } else if constexpr (std::is_same_v<T, std::int64_t> || std::is_same_v<T, std::uint64_t>) {
            out << *p;
          } else {
            for (size_t i = 0; i < p->size(); ++i) { out << (i ? ", " : "") << detail::format_double((*p)[i]); }
          }
        },
        f);
    out << '\n';
  });
  return out.str();
}

inline RunConfig RunConfig::defaults(const std::string & plant)
{
  RunConfig c;
  if (plant == "pendulum") { return c; }
  if (plant != "car") { throw ConfigError("unknown plant '" + plant + "'"); }
  c.plant          = "car";
  c.experiment     = "reach";
  c.kernel_sf2     = 1e-2;
  c.kernel_ls      = {1.5, 0.8};
  c.lambda         = 1e-6;
  c.wbar           = 1e-6;
  c.data_wbar      = 0.0;
  c.truth_centers  = {9, 9};
  c.truth_lo       = {-1.4, -0.9};
  c.truth_hi       = {1.4, 0.9};
  c.data_grid      = {5, 9};
  c.data_lo        = {-1.0, -0.6};
  c.data_hi        = {1.0, 0.6};
  c.delta          = 0.01;
  c.eps            = {5e-4, 7e-4, 1e-3, 1.5e-3, 2e-3, 3e-3};
  c.anchor_grid    = {9, 9};
  c.anchor_lo      = {-1.2, -0.8};
  c.anchor_hi      = {1.2, 0.8};
  c.max_samples    = 1000;
  c.horizon        = 51;
  c.q_diag         = {1.0, 1.0, 1.0, 1.0};
  c.r_diag         = {1.0, 1.0};
  c.x0             = {0.0, 0.0, 0.0, 8.0};
  c.x_eq           = {0.0, 0.0, 0.0, 8.0};
  c.x_lo           = {-1e3, -1e3, -0.5, 6.0};
  c.x_hi           = {1e3, 1e3, 0.5, 10.0};
  c.u_lo           = {-0.3, -5.0};
  c.u_hi           = {0.3, 5.0};
  c.lip_grid       = {1, 1, 9, 3, 9, 1};
  c.metric         = "diagonal";
  c.eps_close      = false;
  c.reach_horizon  = 51;
  c.baseline       = true;
  return c;
}

inline RunConfig RunConfig::parse(const std::string & text)
{
  // A plant line selects the defaults the other keys override.
  std::vector<std::pair<std::string, std::string>> kv;
  std::string plant = "pendulum";
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) { line = line.substr(0, hash); }
    if (detail::trim(line).empty()) { continue; }
    const auto eq = line.find('=');
    if (eq == std::string::npos) { throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value"); }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key == "plant") { plant = val; }
    kv.emplace_back(key, val);
  }
  RunConfig c = defaults(plant);
  for (const auto & [k, v] : kv) { c.set(k, v); }
  c.validate();
  return c;
}

inline RunConfig RunConfig::load(const std::string & path)
{
  std::ifstream f(path);
  if (!f) { throw ConfigError("cannot open config file '" + path + "'"); }
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

inline void RunConfig::validate() const
{
  auto need = [](bool ok, const std::string & msg) {
    if (!ok) { throw ConfigError(msg); }
  };
  need(experiment == "complexity" || experiment == "reach" || experiment == "mpc", "experiment must be complexity, reach or mpc");
  need(plant == "pendulum" || plant == "car", "plant must be pendulum or car");
  const size_t nx = plant == "pendulum" ? 2 : 4, nu = plant == "pendulum" ? 1 : 2;
  need(pend_l > 0 && pend_dt > 0 && car_lf > 0 && car_lr > 0 && car_dt > 0, "plant parameters must be > 0");
  need(car_v > 0, "plant.car.velocity must be > 0");
  need(kernel_type == "se" || kernel_type == "matern", "kernel.type must be se or matern");
  need(kernel_nu == 0.5 || kernel_nu == 1.5 || kernel_nu == 2.5, "kernel.nu must be 0.5, 1.5 or 2.5");
  need(kernel_sf2 >= 0, "kernel.signal_variance must be >= 0");
  need(kernel_ls.size() == 2, "kernel.lengthscales needs one value per GP input (2)");
  for (double l : kernel_ls) { need(l > 0, "lengthscales must be > 0"); }
  need(lambda > 0, "gp.lambda must be > 0");
  need(wbar >= 0 && data_wbar >= 0, "noise bounds must be >= 0");
  need(noise_kind == "uniform" || noise_kind == "truncated_gaussian", "noise.kind must be uniform or truncated_gaussian");
  need(noise_mode == "bounded" || noise_mode == "subgaussian", "noise.mode must be bounded or subgaussian");
  need(truth_bg >= 0, "truth.bg must be >= 0");
  for (const auto * v : {&truth_centers, &truth_lo, &truth_hi, &data_grid, &data_lo, &data_hi, &anchor_grid, &anchor_lo, &anchor_hi}) {
    need(v->size() == 2, "truth, data and anchor boxes are 2-dimensional");
  }
  for (size_t i = 0; i < 2; ++i) {
    need(truth_lo[i] < truth_hi[i] && data_lo[i] < data_hi[i] && anchor_lo[i] < anchor_hi[i], "box bounds must satisfy lo < hi");
    need(truth_centers[i] >= 1 && data_grid[i] >= 1 && anchor_grid[i] >= 1, "grid counts must be >= 1");
  }
  need(delta > 0 && delta < 1, "complexity.delta must be in (0,1)");
  need(!eps.empty(), "complexity.eps is empty");
  for (double e : eps) { need(e > 0, "complexity.eps values must be > 0"); }
  need(draws >= 1 && grid_per_dim >= 1, "complexity.draws and grid_per_dim must be >= 1");
  need(n_samples >= 0 && max_samples >= 1, "samples.n must be >= 0 and samples.max >= 1");
  need(horizon >= 1 && steps >= 0, "mpc.horizon must be >= 1 and mpc.steps >= 0");
  need(sqp_iters >= 1 && max_sqp_iters >= sqp_iters && initial_sqp_iters >= 1, "SQP iteration counts are inconsistent");
  need(q_diag.size() == nx && x0.size() == nx && x_eq.size() == nx && x_lo.size() == nx && x_hi.size() == nx,
       "state vectors have the wrong length");
  need(r_diag.size() == nu && u_lo.size() == nu && u_hi.size() == nu, "input vectors have the wrong length");
  for (size_t i = 0; i < nx; ++i) { need(q_diag[i] >= 0 && x_lo[i] < x_hi[i], "need Q >= 0 and x_lo < x_hi"); }
  for (size_t i = 0; i < nu; ++i) { need(r_diag[i] > 0 && u_lo[i] < u_hi[i], "need R > 0 and u_lo < u_hi"); }
  need(n_lin >= 0, "mpc.n_lin must be >= 0");
  need(terminal_margin >= 0 && terminal_margin < 1, "mpc.terminal_margin must be in [0,1)");
  need(lip_inflation >= 1, "mpc.lip_inflation must be >= 1");
  need(lip_grid.size() == nx + nu, "mpc.lip_grid needs one count per state and input");
  need(tightening == "sample_lipschitz" || tightening == "lemma", "mpc.tightening must be sample_lipschitz or lemma");
  need(metric == "lyapunov" || metric == "euclidean" || metric == "diagonal", "mpc.metric must be lyapunov, euclidean or diagonal");
  need(snapshot_every >= 1, "mpc.snapshot_every must be >= 1");
  need(reach_horizon >= 1 && rollouts >= 0 && baseline_dirs >= 1, "reach.horizon and reach.baseline_dirs must be >= 1, reach.rollouts >= 0");
}

}  // namespace gpreach
