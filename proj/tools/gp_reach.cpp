// gp-reach: certified sample counts, sampling-based reachable tubes and
// sampling GP-MPC runs. Every run writes a directory with CSV/JSON outputs,
// the effective config and a SHA-256 manifest.

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <gpreach/config.hpp>
#include <gpreach/experiments.hpp>

namespace fs = std::filesystem;
using json   = nlohmann::json;
using namespace gpreach;

namespace {

constexpr const char * kVersion = "gp-reach 1.0.0";

enum Exit : int { Ok = 0, Config = 2, Infeasible = 3, Certificate = 4, Numerical = 5 };

std::string num(double v) { return detail::format_double(v); }

/// CSV writer that formats doubles in shortest round-trip form so reruns are byte-identical.
class Csv
{
public:
  Csv(const fs::path & path, const std::vector<std::string> & header) : out_(path)
  {
    if (!out_) { throw ConfigError("cannot write " + path.string()); }
    row(header);
  }
  void row(const std::vector<std::string> & cells)
  {
    for (size_t i = 0; i < cells.size(); ++i) { out_ << (i ? "," : "") << cells[i]; }
    out_ << '\n';
  }

private:
  std::ofstream out_;
};

std::vector<std::string> cols(const std::string & prefix, Index n)
{
  std::vector<std::string> c;
  for (Index i = 0; i < n; ++i) { c.push_back(prefix + std::to_string(i)); }
  return c;
}

void append(std::vector<std::string> & row, const VectorXd & v)
{
  for (Index i = 0; i < v.size(); ++i) { row.push_back(num(v(i))); }
}

json to_json(const VectorXd & v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json to_json(const MatrixXd & M)
{
  json rows = json::array();
  for (Index r = 0; r < M.rows(); ++r) { rows.push_back(to_json(VectorXd(M.row(r).transpose()))); }
  return rows;
}

std::string sha256_file(const fs::path & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw ConfigError("cannot read " + path.string() + " for hashing"); }
  EVP_MD_CTX * ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) { EVP_DigestUpdate(ctx, buf, static_cast<size_t>(in.gcount())); }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) { hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]); }
  return hex.str();
}

void write_text(const fs::path & path, const std::string & text)
{
  std::ofstream out(path);
  if (!out) { throw ConfigError("cannot write " + path.string()); }
  out << text;
}

/// Lists every file under the run directory (except itself) with its hash.
void write_manifest(const fs::path & dir)
{
  std::set<std::string> names;
  for (const auto & e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) { names.insert(fs::relative(e.path(), dir).generic_string()); }
  }
  names.erase("manifest.json");
  json files = json::array();
  for (const auto & n : names) {
    files.push_back({{"path", n}, {"sha256", sha256_file(dir / n)}, {"bytes", fs::file_size(dir / n)}});
  }
  write_text(dir / "manifest.json", json({{"version", kVersion}, {"files", files}}).dump(2) + "\n");
}

class Stopwatch
{
public:
  double lap(const std::string & name)
  {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_          = now;
    timings_[name] = s;
    return s;
  }
  const json & timings() const { return timings_; }

private:
  std::chrono::steady_clock::time_point last_{std::chrono::steady_clock::now()};
  json timings_ = json::object();
};

// ---------------------------------------------------------------------------
// Options shared by the subcommands

struct Common
{
  std::string config_path;
  std::optional<std::string> plant, out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

void add_common(CLI::App * app, Common & c)
{
  app->add_option("--config", c.config_path, "Config file with dotted keys (see README)");
  app->add_option("--plant", c.plant, "pendulum or car")->check(CLI::IsMember({"pendulum", "car"}));
  app->add_option("--out", c.out, "Output directory (overrides the out key)");
  app->add_option("--seed", c.seed, "Master seed");
  app->add_option("--set", c.sets, "Override any config key, e.g. --set mpc.horizon=20 (repeatable)");
}

RunConfig resolve(const Common & c)
{
  RunConfig cfg;
  if (!c.config_path.empty()) {
    cfg = RunConfig::load(c.config_path);
    if (c.plant && *c.plant != cfg.plant) {
      throw ConfigError("--plant " + *c.plant + " contradicts plant = " + cfg.plant + " in " + c.config_path);
    }
  } else {
    cfg = RunConfig::defaults(c.plant.value_or("pendulum"));
  }
  if (c.out) { cfg.out = *c.out; }
  if (c.seed) { cfg.seed = *c.seed; }
  for (const auto & kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) { throw ConfigError("--set expects key=value, got '" + kv + "'"); }
    cfg.set(detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  return cfg;
}

fs::path prepare_dir(const RunConfig & cfg)
{
  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  write_text(dir / "config.cfg", cfg.emit());
  return dir;
}

// ---------------------------------------------------------------------------
// complexity

json report_json(const ComplexityReport & rep)
{
  json rows = json::array();
  for (const auto & r : rep.rows) {
    json phi = json::array();
    for (const auto & p : r.phi) {
      phi.push_back({{"eps", p.eps}, {"phi_hat", p.phi_hat}, {"phi_lo", p.phi_lo}, {"phi_hi", p.phi_hi},
                     {"p_hat", p.p_hat}, {"hits", p.hits}, {"draws", p.draws}});
    }
    rows.push_back({{"eps", r.eps}, {"eps_per_output", r.eps_per_output}, {"phi", phi}, {"C_D", r.C_D},
                    {"beta_D", r.beta_D}, {"exponent", r.exponent}, {"N", r.N}, {"feasible", r.feasible},
                    {"censored", r.censored}});
  }
  return {{"mode", to_string(rep.mode)}, {"delta", rep.delta}, {"rows", rows}};
}

/// Rows of a report written by the complexity subcommand (only what choose_samples reads).
ComplexityReport report_from_json(const std::string & path)
{
  std::ifstream in(path);
  if (!in) { throw ConfigError("cannot open complexity report '" + path + "'"); }
  ComplexityReport rep;
  try {
    const json j = json::parse(in);
    for (const auto & r : j.at("rows")) {
      ComplexityRow row;
      row.eps      = r.at("eps").get<double>();
      row.N        = r.at("N").get<std::uint64_t>();
      row.feasible = r.at("feasible").get<bool>();
      row.censored = r.at("censored").get<bool>();
      rep.rows.push_back(row);
    }
  } catch (const json::exception & e) {
    throw ConfigError("malformed complexity report '" + path + "': " + e.what());
  }
  return rep;
}

int cmd_complexity(const RunConfig & cfg, std::optional<double> bg)
{
  Stopwatch sw;
  const fs::path dir = prepare_dir(cfg);
  Problem p          = build_problem(cfg);
  if (bg) { p.Bg.assign(p.Bg.size(), *bg); }
  sw.lap("setup");
  const ComplexityReport rep = run_certificate(p);
  sw.lap("certificate");

  bool censored = false;
  {
    Csv csv(dir / "complexity.csv", {"eps", "phi_hat", "phi_lo", "phi_hi", "C_D", "beta_D", "N", "feasible", "censored"});
    for (const auto & r : rep.rows) {
      // Vector outputs: exponents add up, beta_D is reported as the largest.
      double ph = 0, lo = 0, hi = 0, cd = 0, beta = 0;
      for (size_t j = 0; j < r.phi.size(); ++j) {
        ph += r.phi[j].phi_hat;
        lo += r.phi[j].phi_lo;
        hi += r.phi[j].phi_hi;
        cd += r.C_D[j];
        beta = std::max(beta, r.beta_D[j]);
      }
      csv.row({num(r.eps), num(ph), num(lo), num(hi), num(cd), num(beta), std::to_string(r.N), r.feasible ? "1" : "0",
               r.censored ? "1" : "0"});
      censored = censored || r.censored;
    }
  }
  write_text(dir / "complexity.json", report_json(rep).dump(2) + "\n");
  json summary = {{"version", kVersion}, {"experiment", "complexity"}, {"plant", cfg.plant},
                  {"Bg", p.Bg},          {"report", report_json(rep)}, {"timings", sw.timings()}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  write_manifest(dir);

  for (const auto & r : rep.rows) {
    std::cout << "eps=" << num(r.eps) << " N=" << r.N << (r.censored ? " (censored)" : "") << (r.feasible ? "" : " (infeasible)")
              << '\n';
  }
  if (censored && !cfg.allow_censored) {
    std::cerr << "error: phi estimate censored (no hit in " << cfg.draws
              << " draws); N is not certified. Increase complexity.draws or pass --allow-censored\n";
    return Exit::Config;
  }
  return Exit::Ok;
}

// ---------------------------------------------------------------------------
// reach

int cmd_reach(const RunConfig & cfg)
{
  Stopwatch sw;
  const fs::path dir = prepare_dir(cfg);
  const Problem p    = build_problem(cfg);
  const Index nx = p.model.nx, nu = p.model.nu;
  SampleChoice choice;
  if (cfg.n_samples > 0) {
    choice = choose_samples(p, ComplexityReport{});
  } else {
    choice = choose_samples(p, run_certificate(p));
  }
  sw.lap("certificate");
  std::optional<std::vector<VectorXd>> given;
  if (!cfg.inputs_file.empty()) { given = read_inputs_csv(cfg.inputs_file, nu); }
  const ReachResult r = run_reach(p, choice, cfg.baseline, given ? &*given : nullptr);
  sw.lap("reach");
  const Index H = r.tube.horizon();

  {
    std::vector<std::string> h{"n", "k"};
    for (auto & s : cols("x", nx)) { h.push_back(s); }
    Csv csv(dir / "centers.csv", h);
    for (size_t n = 0; n < r.tube.centers.size(); ++n) {
      for (Index k = 0; k <= H; ++k) {
        std::vector<std::string> row{std::to_string(n), std::to_string(k)};
        append(row, r.tube.centers[n][static_cast<size_t>(k)]);
        csv.row(row);
      }
    }
  }
  {
    std::vector<std::string> h{"k", "eps_k"};
    if (r.baseline) { h.push_back("baseline_r_k"); }
    Csv csv(dir / "radii.csv", h);
    for (Index k = 0; k <= H; ++k) {
      std::vector<std::string> row{std::to_string(k), num(r.tube.radii(k))};
      if (r.baseline) { row.push_back(num(r.baseline->radii(k))); }
      csv.row(row);
    }
  }
  {
    std::vector<std::string> h{"k"};
    for (auto & s : cols("v", nu)) { h.push_back(s); }
    Csv csv(dir / "inputs.csv", h);
    for (size_t k = 0; k < r.inputs.size(); ++k) {
      std::vector<std::string> row{std::to_string(k)};
      append(row, r.inputs[k]);
      csv.row(row);
    }
  }
  {
    Csv csv(dir / "coverage.csv", {"k", "coverage"});
    for (Index k = 0; k <= H; ++k) { csv.row({std::to_string(k), num(r.stage_coverage(k))}); }
  }
  {
    std::vector<std::string> h{"rollout", "k"};
    for (auto & s : cols("x", nx)) { h.push_back(s); }
    Csv csv(dir / "rollouts.csv", h);
    for (size_t j = 0; j < r.true_paths.size(); ++j) {
      for (size_t k = 0; k < r.true_paths[j].size(); ++k) {
        std::vector<std::string> row{std::to_string(j), std::to_string(k)};
        append(row, r.true_paths[j][k]);
        csv.row(row);
      }
    }
  }

  const double frac = r.rollouts > 0 ? static_cast<double>(r.contained) / static_cast<double>(r.rollouts) : 1.0;
  json summary      = {{"version", kVersion},
                       {"experiment", "reach"},
                       {"plant", cfg.plant},
                       {"N", choice.N},
                       {"eps", choice.eps},
                       {"certified", choice.certified},
                       {"L", r.L},
                       {"epsbar", r.budget.epsbar()},
                       {"metric_weight", r.metric.is_weighted() ? to_json(r.metric.weight()) : json(nullptr)},
                       {"feedback", r.feedback ? to_json(*r.feedback) : json(nullptr)},
                       {"horizon", H},
                       {"rollouts", r.rollouts},
                       {"contained", r.contained},
                       {"containment", frac},
                       {"target", 1.0 - cfg.delta},
                       {"final_radius", r.tube.radii(H)},
                       {"timings", sw.timings()}};
  if (r.baseline) {
    Index first = -1;
    for (Index k = H; k >= 1; --k) {
      if (!(r.baseline->radii(k) > r.tube.radii(k))) { break; }
      first = k;
    }
    summary["baseline_final_radius"] = r.baseline->radii(H);
    summary["baseline_dominates_from"] = first;
  }
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  write_manifest(dir);
  std::cout << "N=" << choice.N << " eps=" << num(choice.eps) << " L=" << num(r.L) << " final radius=" << num(r.tube.radii(H))
            << " contained " << r.contained << "/" << r.rollouts << '\n';
  return Exit::Ok;
}

// ---------------------------------------------------------------------------
// mpc-run

int cmd_mpc(const RunConfig & cfg, const std::string & certify_path)
{
  if (cfg.plant != "pendulum") { throw ConfigError("mpc-run is set up for the pendulum plant only"); }
  Stopwatch sw;
  const fs::path dir = prepare_dir(cfg);
  const Problem p    = build_problem(cfg);
  const Index nx = p.model.nx, nu = p.model.nu;
  SampleChoice choice;
  if (cfg.n_samples > 0) {
    choice = choose_samples(p, ComplexityReport{});
  } else if (!certify_path.empty()) {
    choice = choose_samples(p, report_from_json(certify_path));
  } else {
    choice = choose_samples(p, run_certificate(p));
  }
  sw.lap("certificate");
  const MpcDesign d = design_mpc(p, choice);
  sw.lap("design");
  const MpcRun run = run_mpc(p, d, cfg.seed, cfg.steps, true);
  sw.lap("closed_loop");

  {
    std::vector<std::string> h{"k"};
    for (auto & s : cols("x", nx)) { h.push_back(s); }
    for (auto & s : cols("u", nu)) { h.push_back(s); }
    for (const char * s : {"cost", "n_active", "feasible", "J_star", "applied", "status", "sqp_iters", "kkt", "decrease_ok",
                           "in_constraints"}) {
      h.push_back(s);
    }
    Csv csv(dir / "runlog.csv", h);
    for (const auto & s : run.log.steps) {
      std::vector<std::string> row{std::to_string(s.k)};
      append(row, s.x);
      append(row, s.u);
      row.insert(row.end(), {num(s.stage_cost), std::to_string(s.n_active), s.feasible ? "1" : "0", num(s.J_star),
                             s.applied ? "1" : "0", to_string(s.status), std::to_string(s.sqp_iters), num(s.kkt),
                             s.decrease_ok ? "1" : "0", s.in_constraints ? "1" : "0"});
      csv.row(row);
    }
  }
  {
    Csv csv(dir / "removals.csv", {"time", "sample", "stage", "deviation", "bound"});
    for (const auto & rm : run.log.removals) {
      csv.row({std::to_string(rm.time), std::to_string(rm.sample), std::to_string(rm.stage), num(rm.deviation), num(rm.bound)});
    }
  }
  {
    // Predicted trajectories of the active samples with their tightening radii.
    std::vector<std::string> h{"k", "sample", "i"};
    for (auto & s : cols("x", nx)) { h.push_back(s); }
    h.push_back("radius");
    Csv csv(dir / "tubes.csv", h);
    for (size_t k = 0; k < run.log.predictions.size(); k += static_cast<size_t>(cfg.snapshot_every)) {
      std::vector<Index> active;
      for (Index n = 0; n < static_cast<Index>(d.samples.size()); ++n) {
        bool gone = false;
        for (const auto & rm : run.log.removals) { gone = gone || (rm.sample == n && rm.time < static_cast<Index>(k)); }
        if (!gone) { active.push_back(n); }
      }
      const auto & pred = run.log.predictions[k];
      for (size_t n = 0; n < pred.size() && n < active.size(); ++n) {
        for (size_t i = 0; i < pred[n].size(); ++i) {
          std::vector<std::string> row{std::to_string(k), std::to_string(active[n]), std::to_string(i)};
          append(row, pred[n][i]);
          row.push_back(num(i == 0 ? 0.0 : d.ocp.tight.c(static_cast<Index>(i) - 1)));
          csv.row(row);
        }
      }
    }
  }

  json summary = {{"version", kVersion},
                  {"experiment", "mpc"},
                  {"plant", cfg.plant},
                  {"outcome", run.log.outcome},
                  {"N", choice.N},
                  {"eps", choice.eps},
                  {"certified", choice.certified},
                  {"L", d.L},
                  {"epsbar", d.budget.epsbar()},
                  {"terminal", {{"P", to_json(d.terminal.P)}, {"K", to_json(d.terminal.K)}, {"rho", d.terminal.rho},
                                {"rho_max", d.terminal.rho_max}, {"contraction", d.terminal.contraction},
                                {"inflation", d.terminal.inflation}, {"ell_s", d.terminal.ell_s}}},
                  {"u_eq", to_json(d.ocp.u_eq)},
                  {"cost_constants", {{"K1", d.cost.K1}, {"K2", d.cost.K2}, {"Lc", d.cost.Lc}, {"L_ell", d.L_ell}, {"L_f", d.L_f}}},
                  {"average_cost", run.average_cost},
                  {"cost_bound", run.bound},
                  {"removals", run.log.removals.size()},
                  {"final_active", run.log.steps.back().n_active},
                  {"eps_close_sample", d.eps_close_index},
                  {"eps_close_removed", run.eps_close_removed},
                  {"monotone_sample_set", run.monotone},
                  {"constraints_ok", run.constraints_ok},
                  {"final_steps_in_terminal_set", run.final_in_terminal},
                  {"timings", sw.timings()}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  write_manifest(dir);
  std::cout << "outcome=" << run.log.outcome << " N=" << choice.N << " steps=" << run.log.steps.size() - 1
            << " removals=" << run.log.removals.size() << " average cost=" << num(run.average_cost)
            << " bound=" << num(run.bound) << '\n';
  if (run.log.outcome == "infeasible") { return Exit::Infeasible; }
  if (run.log.outcome == "certificate_violated") { return Exit::Certificate; }
  return Exit::Ok;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Sampling-based reachable sets and GP-MPC with certified sample counts"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Common cc, rc, mc;

  auto * complexity = app.add_subcommand("complexity", "Certified number of samples for each tolerance");
  add_common(complexity, cc);
  std::vector<double> eps;
  std::optional<double> delta, bg;
  std::optional<std::string> mode;
  std::optional<std::int64_t> draws;
  bool allow_censored = false;
  complexity->add_option("--eps", eps, "Tolerance (repeatable; replaces complexity.eps)");
  complexity->add_option("--delta", delta, "Failure probability in (0,1)");
  complexity->add_option("--bg", bg, "RKHS norm bound used for every output (default: norm of the ground truth)");
  complexity->add_option("--mode", mode, "Noise model")->check(CLI::IsMember({"subgaussian", "bounded"}));
  complexity->add_option("--draws", draws, "Monte Carlo draws per tolerance for the small-ball estimate");
  complexity->add_flag("--allow-censored", allow_censored, "Accept tolerances with no small-ball hit");

  auto * reach = app.add_subcommand("reach", "Sampling tube around a shared input sequence");
  add_common(reach, rc);
  std::optional<std::int64_t> r_n, r_h;
  std::optional<double> r_eps;
  std::optional<std::string> r_inputs;
  bool r_baseline = false;
  reach->add_option("--n-samples", r_n, "Use N samples instead of the certified count");
  reach->add_option("--eps", r_eps, "Tolerance (with --n-samples: the tolerance assumed for the tube)");
  reach->add_option("--horizon", r_h, "Tube horizon");
  reach->add_option("--inputs", r_inputs, "CSV of open-loop inputs, one row per step");
  reach->add_flag("--baseline", r_baseline, "Also propagate the sequential worst-case baseline");

  auto * mpc = app.add_subcommand("mpc-run", "Closed-loop sampling GP-MPC on the simulated plant");
  add_common(mpc, mc);
  std::optional<std::int64_t> m_steps, m_n, m_iters, m_h;
  std::optional<double> m_eps;
  std::string m_certify;
  mpc->add_option("--steps", m_steps, "Closed-loop steps T");
  mpc->add_option("--n-samples", m_n, "Use N samples instead of the certified count");
  mpc->add_option("--eps", m_eps, "Tolerance (with --n-samples: the tolerance assumed for the tightenings)");
  mpc->add_option("--certify", m_certify, "Take N from a complexity.json written by the complexity subcommand");
  mpc->add_option("--sqp-iters", m_iters, "SQP iterations per step");
  mpc->add_option("--horizon", m_h, "Prediction horizon H");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    const int code = app.exit(e);
    return code == 0 ? Exit::Ok : Exit::Config;
  }

  try {
    if (complexity->parsed()) {
      RunConfig cfg = resolve(cc);
      if (!eps.empty()) { cfg.eps = eps; }
      if (delta) { cfg.delta = *delta; }
      if (mode) { cfg.noise_mode = *mode; }
      if (draws) { cfg.draws = *draws; }
      if (allow_censored) { cfg.allow_censored = true; }
      if (bg && !(*bg > 0.0)) { throw ConfigError("--bg must be > 0"); }
      cfg.experiment = "complexity";
      cfg.validate();
      return cmd_complexity(cfg, bg);
    }
    if (reach->parsed()) {
      RunConfig cfg = resolve(rc);
      if (r_n) { cfg.n_samples = *r_n; }
      if (r_eps) { cfg.eps = {*r_eps}; }
      if (r_h) { cfg.reach_horizon = *r_h; }
      if (r_inputs) { cfg.inputs_file = *r_inputs; }
      if (r_baseline) { cfg.baseline = true; }
      cfg.experiment = "reach";
      cfg.validate();
      return cmd_reach(cfg);
    }
    RunConfig cfg = resolve(mc);
    if (m_steps) { cfg.steps = *m_steps; }
    if (m_n) { cfg.n_samples = *m_n; }
    if (m_eps) { cfg.eps = {*m_eps}; }
    if (m_iters) {
      cfg.sqp_iters     = *m_iters;
      cfg.max_sqp_iters = std::max(cfg.max_sqp_iters, *m_iters);
    }
    if (m_h) { cfg.horizon = *m_h; }
    cfg.experiment = "mpc";
    cfg.validate();
    return cmd_mpc(cfg, m_certify);
  } catch (const ConfigError & e) {
    std::cerr << "config error: " << e.what() << '\n';
    return Exit::Config;
  } catch (const DimensionError & e) {
    std::cerr << "config error: " << e.what() << '\n';
    return Exit::Config;
  } catch (const InfeasibleError & e) {
    std::cerr << "infeasible: " << e.what() << '\n';
    return Exit::Infeasible;
  } catch (const CertificateViolated & e) {
    std::cerr << "certificate violated: " << e.what() << '\n';
    return Exit::Certificate;
  } catch (const NumericalError & e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return Exit::Numerical;
  } catch (const FactorizationError & e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return Exit::Numerical;
  } catch (const fs::filesystem_error & e) {
    std::cerr << "config error: " << e.what() << '\n';
    return Exit::Config;
  }
}
