#pragma once

// Experiment runners behind the msense CLI. Each runner computes its data
// in a plain struct (used directly by the tests) and has a writer that turns
// it into CSV or JSON. Everything is a deterministic function of the config.

#include "msense/common.hpp"
#include "msense/landscape.hpp"
#include "msense/losses.hpp"
#include "msense/operators.hpp"
#include "msense/optimizer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace msense {

/// Thrown for malformed or inconsistent experiment configs.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct OperatorParams {
  std::string kind = "epsilon_mask";  // epsilon_mask | gaussian | identity
  int n = 3;
  int m = 0;  // gaussian only
  double epsilon = 0.3;
};

struct SearchParams {
  int n_starts = 20;
  double grad_tol = 1e-8;
  double eig_tol = 1e-8;
};

struct CompareParams {
  int runs = 10;
  double target_tol = 1e-3;
  int curve_stride = 1;
};

struct LandscapeParams {
  std::string point = "zero";  // zero | spurious
  double half_width = 0.0;     // <= 0 uses ||X* - X-hat||_F
  int grid_points = 11;
};

struct AuditParams {
  int zero_points = 40;
};

struct RipParams {
  int p = 2;
  int samples = 10000;
};

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  OperatorParams op;
  std::vector<int> sizes;  // table1 / ratio; empty means {op.n}
  int r = 1;
  int rstar = 1;
  int l = 4;
  std::vector<double> lambdas{0.0};
  std::string ground_truth = "odd_indicator";  // odd_indicator | random
  PGDConfig optimizer;
  SearchParams search;
  CompareParams compare;
  LandscapeParams landscape;
  AuditParams audit;
  RipParams rip;
  std::string output;

  LossSpec spec(double lambda) const { return {l, lambda}; }
  std::vector<int> size_list() const { return sizes.empty() ? std::vector<int>{op.n} : sizes; }
  void validate() const;
};

inline const std::set<std::string>& experiment_names() {
  static const std::set<std::string> names{"table1",    "ratio",          "pgd_compare",
                                           "landscape", "theorem_audit", "rip_estimate"};
  return names;
}

namespace detail {

inline void config_require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

inline void check_keys(const nlohmann::json& j, const std::string& where,
                       const std::set<std::string>& allowed) {
  config_require(j.is_object(), where + " must be an object");
  for (const auto& [key, _] : j.items())
    config_require(allowed.count(key) > 0, "unknown key '" + key + "' in " + where);
}

template <class T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
  using detail::config_require;
  config_require(experiment_names().count(experiment) > 0,
                 "unknown experiment '" + experiment + "'");
  config_require(op.kind == "epsilon_mask" || op.kind == "gaussian" || op.kind == "identity",
                 "operator.kind must be epsilon_mask, gaussian or identity");
  for (int n : size_list()) config_require(n >= 1, "operator sizes must be >= 1");
  if (op.kind == "epsilon_mask") {
    config_require(op.epsilon > 0.0 && op.epsilon < 1.0, "operator.epsilon must lie in (0, 1)");
    for (int n : size_list()) config_require(n >= 2, "epsilon_mask needs n >= 2");
  }
  if (op.kind == "gaussian") config_require(op.m >= 1, "operator.m must be >= 1 for gaussian");
  config_require(rstar >= 1 && r >= rstar, "rank: need 1 <= rstar <= r");
  for (int n : size_list()) config_require(r <= n, "rank.r must not exceed n");
  config_require(l >= 2 && l % 2 == 0, "loss.l must be an even integer >= 2");
  config_require(!lambdas.empty(), "loss.lambdas must be non-empty");
  for (double lam : lambdas)
    config_require(std::isfinite(lam) && lam >= 0.0, "loss.lambdas must be finite and >= 0");
  config_require(ground_truth == "odd_indicator" || ground_truth == "random",
                 "ground_truth must be odd_indicator or random");
  if (ground_truth == "odd_indicator") config_require(rstar == 1, "odd_indicator has rank 1");
  try {
    optimizer.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("optimizer: ") + e.what());
  }
  config_require(search.n_starts >= 1, "search.n_starts must be >= 1");
  config_require(search.grad_tol > 0.0 && search.eig_tol > 0.0, "search tolerances must be > 0");
  config_require(compare.runs >= 1, "pgd_compare.runs must be >= 1");
  config_require(compare.target_tol > 0.0, "pgd_compare.target_tol must be > 0");
  config_require(compare.curve_stride >= 1, "pgd_compare.curve_stride must be >= 1");
  config_require(landscape.point == "zero" || landscape.point == "spurious",
                 "landscape.point must be zero or spurious");
  config_require(landscape.grid_points >= 1 && landscape.grid_points % 2 == 1,
                 "landscape.grid_points must be odd");
  config_require(audit.zero_points >= 0, "audit.zero_points must be >= 0");
  config_require(rip.samples >= 2, "rip.samples must be >= 2");
  for (int n : size_list()) config_require(rip.p >= 1 && rip.p <= n, "rip.p must lie in [1, n]");
  if (experiment == "table1" || experiment == "ratio")
    config_require(op.kind == "epsilon_mask", experiment + " needs the epsilon_mask operator");
  if (experiment == "pgd_compare")
    config_require(op.kind == "gaussian", "pgd_compare needs the gaussian operator");
}

/// Parse and validate a config document. Unknown keys are rejected.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::read_key;
  check_keys(j, "config",
             {"experiment", "seed", "operator", "sizes", "rank", "loss", "ground_truth",
              "optimizer", "search", "pgd_compare", "landscape", "audit", "rip", "output"});
  detail::config_require(j.contains("experiment"), "missing key 'experiment'");
  ExperimentConfig cfg;
  read_key(j, "experiment", cfg.experiment);
  read_key(j, "seed", cfg.seed);
  read_key(j, "sizes", cfg.sizes);
  read_key(j, "ground_truth", cfg.ground_truth);
  read_key(j, "output", cfg.output);
  if (j.contains("operator")) {
    const auto& o = j.at("operator");
    check_keys(o, "operator", {"kind", "n", "m", "epsilon"});
    read_key(o, "kind", cfg.op.kind);
    read_key(o, "n", cfg.op.n);
    read_key(o, "m", cfg.op.m);
    read_key(o, "epsilon", cfg.op.epsilon);
  }
  if (j.contains("rank")) {
    const auto& o = j.at("rank");
    check_keys(o, "rank", {"r", "rstar"});
    read_key(o, "r", cfg.r);
    read_key(o, "rstar", cfg.rstar);
  }
  if (j.contains("loss")) {
    const auto& o = j.at("loss");
    check_keys(o, "loss", {"l", "lambdas"});
    read_key(o, "l", cfg.l);
    read_key(o, "lambdas", cfg.lambdas);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    check_keys(o, "optimizer",
               {"step", "max_iters", "grad_trigger", "perturb_radius", "init_scale",
                "converge_tol"});
    read_key(o, "step", cfg.optimizer.step);
    read_key(o, "max_iters", cfg.optimizer.max_iters);
    read_key(o, "grad_trigger", cfg.optimizer.grad_trigger);
    read_key(o, "perturb_radius", cfg.optimizer.perturb_radius);
    read_key(o, "init_scale", cfg.optimizer.init_scale);
    read_key(o, "converge_tol", cfg.optimizer.converge_tol);
  }
  if (j.contains("search")) {
    const auto& o = j.at("search");
    check_keys(o, "search", {"n_starts", "grad_tol", "eig_tol"});
    read_key(o, "n_starts", cfg.search.n_starts);
    read_key(o, "grad_tol", cfg.search.grad_tol);
    read_key(o, "eig_tol", cfg.search.eig_tol);
  }
  if (j.contains("pgd_compare")) {
    const auto& o = j.at("pgd_compare");
    check_keys(o, "pgd_compare", {"runs", "target_tol", "curve_stride"});
    read_key(o, "runs", cfg.compare.runs);
    read_key(o, "target_tol", cfg.compare.target_tol);
    read_key(o, "curve_stride", cfg.compare.curve_stride);
  }
  if (j.contains("landscape")) {
    const auto& o = j.at("landscape");
    check_keys(o, "landscape", {"point", "half_width", "grid_points"});
    read_key(o, "point", cfg.landscape.point);
    read_key(o, "half_width", cfg.landscape.half_width);
    read_key(o, "grid_points", cfg.landscape.grid_points);
  }
  if (j.contains("audit")) {
    const auto& o = j.at("audit");
    check_keys(o, "audit", {"zero_points"});
    read_key(o, "zero_points", cfg.audit.zero_points);
  }
  if (j.contains("rip")) {
    const auto& o = j.at("rip");
    check_keys(o, "rip", {"p", "samples"});
    read_key(o, "p", cfg.rip.p);
    read_key(o, "samples", cfg.rip.samples);
  }
  cfg.optimizer.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  detail::config_require(static_cast<bool>(is), "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

/// Override the master seed after parsing.
inline void set_seed(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.optimizer.seed = seed;
}

// ---------------------------------------------------------------------------
// Instances
// ---------------------------------------------------------------------------

inline SensingOperator make_operator(const OperatorParams& p, int n, std::uint64_t seed) {
  if (p.kind == "epsilon_mask") return make_epsilon_operator(n, p.epsilon);
  if (p.kind == "gaussian") return make_gaussian_operator(n, p.m, seed);
  return make_identity_operator(n);
}

/// n x rstar factor with orthonormal columns, so M* has every nonzero
/// eigenvalue equal to one.
inline Matrix random_unit_factor(int n, int rstar, std::uint64_t seed) {
  Rng rng(seed);
  const Matrix g = gaussian_matrix(n, rstar, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(n, rstar);
}

/// Ground-truth factor padded with zero columns to the search rank.
inline Matrix truth_factor(const ExperimentConfig& cfg, int n) {
  Matrix x = Matrix::Zero(n, cfg.r);
  if (cfg.ground_truth == "odd_indicator")
    x.col(0) = odd_indicator_factor(n).col(0);
  else
    x.leftCols(cfg.rstar) = random_unit_factor(n, cfg.rstar, cfg.seed + static_cast<std::uint64_t>(n));
  return x;
}

inline ProblemInstance make_config_instance(const ExperimentConfig& cfg, int n) {
  return make_instance(make_operator(cfg.op, n, cfg.seed), truth_factor(cfg, n), cfg.r);
}

/// Shortest decimal that round-trips; used in identifiers only.
inline std::string fmt_short(double v) {
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Spurious-point tables
// ---------------------------------------------------------------------------

struct Table1Row {
  int n = 0;
  double lambda = 0.0;
  std::optional<CriticalPointReport> spurious;  // empty: NOT_FOUND
  std::optional<Matrix> x;
  double truth_lambda_min = 0.0;
  double truth_lambda_max = 0.0;
};

namespace detail {

/// Descend from `x0` to a nearby critical point of the given loss and
/// polish it; returns the point if it is a second-order point away from M*.
inline std::optional<SpuriousPoint> track_point(const ProblemInstance& inst, const LossSpec& spec,
                                                const Matrix& x0, PGDConfig cfg,
                                                const SearchParams& search) {
  cfg.stationary_tol = search.grad_tol;
  const Trajectory traj = gradient_descent(inst, spec, cfg, x0);
  if (traj.reason == Termination::converged || traj.reason == Termination::diverged)
    return std::nullopt;
  const Matrix x = polish_critical_point(inst, traj.final_x, spec, 0.1 * search.grad_tol);
  const auto rep = classify_point(inst, x, spec, search.grad_tol, search.eig_tol);
  if (rep.classification != PointClass::second_order_point) return std::nullopt;
  if (rep.distance <= 10.0 * cfg.converge_tol) return std::nullopt;
  return SpuriousPoint{x, rep, cfg.seed};
}

}  // namespace detail

/// One row per (n, lambda), lambdas in ascending order. A spurious point is
/// hunted at the smallest lambda and then followed through the larger ones
/// by warm-started descent, so every row of one n describes the same point.
/// When the followed point is lost, a fresh hunt at that lambda is tried.
inline std::vector<Table1Row> run_table1(const ExperimentConfig& cfg) {
  std::vector<double> lambdas = cfg.lambdas;
  std::sort(lambdas.begin(), lambdas.end());
  std::vector<Table1Row> rows;
  for (int n : cfg.size_list()) {
    const auto inst = make_config_instance(cfg, n);
    const Matrix xstar = truth_factor(cfg, n);
    std::optional<Matrix> current;
    for (double lam : lambdas) {
      const LossSpec spec = cfg.spec(lam);
      Table1Row row;
      row.n = n;
      row.lambda = lam;
      std::tie(row.truth_lambda_min, row.truth_lambda_max) = hessian_extremes(inst, xstar, spec);
      std::optional<SpuriousPoint> found;
      if (current) found = detail::track_point(inst, spec, *current, cfg.optimizer, cfg.search);
      if (!found) {
        const auto hunt = find_spurious_minima(inst, spec, cfg.search.n_starts, cfg.optimizer,
                                               cfg.search.grad_tol, cfg.search.eig_tol);
        if (!hunt.empty()) found = hunt.front();
      }
      if (found) {
        current = found->x;
        row.spurious = found->report;
        row.x = found->x;
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline void write_table1_csv(std::ostream& os, const std::vector<Table1Row>& rows) {
  os << "n,lambda,lambda_min_hat,lambda_max_hat,lambda_min_star,lambda_max_star\n";
  for (const auto& row : rows) {
    os << row.n << "," << fmt17(row.lambda) << ",";
    if (row.spurious)
      os << fmt17(row.spurious->lambda_min) << "," << fmt17(row.spurious->lambda_max);
    else
      os << "NOT_FOUND,NOT_FOUND";
    os << "," << fmt17(row.truth_lambda_min) << "," << fmt17(row.truth_lambda_max) << "\n";
  }
}

struct RatioRow {
  int n = 0;
  double lambda = 0.0;
  double ratio = 0.0;
};

struct RatioResult {
  std::vector<RatioRow> rows;
  std::vector<std::string> warnings;
};

/// lambda_max / lambda_min at the spurious point of each table row.
inline RatioResult ratios_from_table(const std::vector<Table1Row>& table) {
  RatioResult out;
  for (const auto& row : table) {
    if (!row.spurious) {
      out.warnings.push_back("n=" + std::to_string(row.n) + " lambda=" + fmt_short(row.lambda) +
                             ": no spurious point, row skipped");
      continue;
    }
    out.rows.push_back({row.n, row.lambda, row.spurious->lambda_max / row.spurious->lambda_min});
  }
  return out;
}

inline RatioResult run_ratio(const ExperimentConfig& cfg) { return ratios_from_table(run_table1(cfg)); }

inline void write_ratio_csv(std::ostream& os, const RatioResult& res) {
  os << "n,lambda,ratio\n";
  for (const auto& row : res.rows)
    os << row.n << "," << fmt17(row.lambda) << "," << fmt17(row.ratio) << "\n";
}

// ---------------------------------------------------------------------------
// Convergence comparison
// ---------------------------------------------------------------------------

struct CompareRun {
  std::uint64_t seed = 0;
  double lambda = 0.0;
  Trajectory traj;
  // First recorded iteration with D <= target_tol, else max_iters. Exact
  // when curve_stride is 1 or the run stops at target_tol.
  int iterations = 0;
  bool reached = false;
};

struct CompareResult {
  std::vector<CompareRun> runs;  // seed-major, lambdas in config order
  double target_tol = 0.0;

  /// Median of `iterations` over the runs with this lambda.
  double median_iterations(double lambda) const {
    std::vector<int> its;
    for (const auto& r : runs)
      if (r.lambda == lambda) its.push_back(r.iterations);
    detail::require(!its.empty(), "median_iterations: no runs for this lambda");
    std::sort(its.begin(), its.end());
    const std::size_t k = its.size() / 2;
    return its.size() % 2 ? its[k] : 0.5 * (its[k - 1] + its[k]);
  }

  int reached_count(double lambda) const {
    return static_cast<int>(std::count_if(runs.begin(), runs.end(), [&](const CompareRun& r) {
      return r.lambda == lambda && r.reached;
    }));
  }
};

/// Perturbed descent for every (seed, lambda). Run k uses seed cfg.seed + k
/// for the Gaussian operator, the ground truth and the initial point; all
/// lambdas of one seed start from the same point with the same step, taken
/// as the default step of the largest lambda unless set explicitly.
/// Trajectories keep every curve_stride-th record.
inline CompareResult run_pgd_compare(const ExperimentConfig& cfg) {
  CompareResult res;
  res.target_tol = cfg.compare.target_tol;
  const double lam_max = *std::max_element(cfg.lambdas.begin(), cfg.lambdas.end());
  const int n = cfg.op.n;
  for (int k = 0; k < cfg.compare.runs; ++k) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(k);
    ExperimentConfig run_cfg = cfg;
    set_seed(run_cfg, seed);
    const auto inst = make_config_instance(run_cfg, n);
    const Matrix x0 = small_initialization(inst, cfg.optimizer.init_scale, seed);
    PGDConfig pcfg = run_cfg.optimizer;
    pcfg.record_stride = cfg.compare.curve_stride;
    if (pcfg.step <= 0.0) pcfg.step = default_step(inst, cfg.spec(lam_max), x0);
    for (double lam : cfg.lambdas) {
      CompareRun run;
      run.seed = seed;
      run.lambda = lam;
      run.traj = perturbed_gd(inst, cfg.spec(lam), pcfg, x0);
      const auto hit = run.traj.iterations_to(cfg.compare.target_tol);
      run.reached = hit.has_value();
      run.iterations = hit.value_or(pcfg.max_iters);
      res.runs.push_back(std::move(run));
    }
  }
  return res;
}

inline void write_compare_curves_csv(std::ostream& os, const CompareResult& res) {
  os << "seed,lambda,iter,f,dist,grad_norm,perturbed\n";
  for (const auto& run : res.runs)
    for (const auto& r : run.traj.records)
      os << run.seed << "," << fmt17(run.lambda) << "," << r.iter << "," << fmt17(r.f) << ","
         << fmt17(r.dist) << "," << fmt17(r.grad_norm) << "," << (r.perturbed ? 1 : 0) << "\n";
}

inline void write_compare_summary_csv(std::ostream& os, const CompareResult& res) {
  os << "seed,lambda,iterations,reached,reason,final_dist,perturbations\n";
  for (const auto& run : res.runs)
    os << run.seed << "," << fmt17(run.lambda) << "," << run.iterations << ","
       << (run.reached ? 1 : 0) << "," << to_string(run.traj.reason) << ","
       << fmt17(run.traj.records.back().dist) << "," << run.traj.perturbations << "\n";
}

// ---------------------------------------------------------------------------
// Landscape grids
// ---------------------------------------------------------------------------

struct LandscapeResult {
  Matrix xhat;
  Matrix xstar;
  double half_width = 0.0;
  std::vector<std::pair<double, SweepGrid>> grids;  // config lambda order
};

/// One sweep per lambda on a shared lattice around X-hat. X-hat is the zero
/// point or, with point = "spurious", the first spurious point found at the
/// smallest lambda.
inline LandscapeResult run_landscape(const ExperimentConfig& cfg) {
  const int n = cfg.op.n;
  const auto inst = make_config_instance(cfg, n);
  LandscapeResult res;
  res.xstar = truth_factor(cfg, n);
  res.xhat = Matrix::Zero(n, cfg.r);
  if (cfg.landscape.point == "spurious") {
    const double lam0 = *std::min_element(cfg.lambdas.begin(), cfg.lambdas.end());
    const auto hunt = find_spurious_minima(inst, cfg.spec(lam0), cfg.search.n_starts,
                                           cfg.optimizer, cfg.search.grad_tol, cfg.search.eig_tol);
    detail::config_require(!hunt.empty(), "landscape: no spurious point found to sweep around");
    res.xhat = hunt.front().x;
  }
  res.half_width =
      cfg.landscape.half_width > 0.0 ? cfg.landscape.half_width : (res.xstar - res.xhat).norm();
  for (double lam : cfg.lambdas)
    res.grids.emplace_back(lam, landscape_sweep(inst, res.xhat, res.xstar, res.half_width,
                                                cfg.landscape.grid_points, cfg.spec(lam),
                                                cfg.seed));
  return res;
}

inline void write_landscape_csv(std::ostream& os, const LandscapeResult& res) {
  os << "lambda,s,t,lambda_min\n";
  for (const auto& [lam, grid] : res.grids) {
    const auto g = static_cast<Eigen::Index>(grid.offsets.size());
    for (Eigen::Index i = 0; i < g; ++i)
      for (Eigen::Index j = 0; j < g; ++j)
        os << fmt17(lam) << "," << fmt17(grid.offsets[static_cast<std::size_t>(i)]) << ","
           << fmt17(grid.offsets[static_cast<std::size_t>(j)]) << ","
           << fmt17(grid.lambda_min(i, j)) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Theorem audit
// ---------------------------------------------------------------------------

/// A generated critical point. `lambdas` lists the penalty weights at which
/// it is first-order critical; delta is a valid RIP constant for the
/// instance's operator.
struct AuditPoint {
  std::string id;
  ProblemInstance inst;
  Matrix x;
  double delta = 0.0;
  std::vector<double> lambdas;
};

struct EscapeRow {
  std::string point_id;
  double quadratic_form = 0.0;
};

struct AuditResult {
  std::vector<VerdictRow> verdicts;
  std::vector<EscapeRow> escapes;
  int points = 0;
  int dropped = 0;  // generated points whose gradient exceeded the audit tolerance
  int inconsistent_first = 0;
  int inconsistent_second = 0;
  int escape_failures = 0;
  double max_reduction_gap = 0.0;  // |second(lambda = 0) - first| over all points

  bool consistent() const { return inconsistent_first == 0 && inconsistent_second == 0; }
};

inline constexpr double kAuditGradTol = 1e-8;

namespace detail {

inline std::string padded(int k) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03d", k);
  return buf;
}

inline std::vector<AuditPoint> zero_points(const ExperimentConfig& cfg) {
  std::vector<AuditPoint> pts;
  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> eps(0.3, 0.95);
  for (int k = 0; k < cfg.audit.zero_points; ++k) {
    const int kind = k % 3;
    const int n = 2 + (k / 3) % 4;
    const int rstar = 1 + k % 2;
    const Matrix xstar = gaussian_matrix(n, rstar, rng);
    SensingOperator op = make_identity_operator(n);
    double delta = 0.0;
    if (kind == 1) {
      op = make_epsilon_operator(n, eps(rng));
      delta = uniform_rip_bound(op);
    } else if (kind == 2) {
      const int dim = n * (n + 1) / 2;
      op = make_gaussian_operator(n, 8 * dim, rng());
      delta = uniform_rip_bound(op);
      if (delta >= 1.0) continue;
    }
    AuditPoint p{"zero-" + padded(k), make_instance(std::move(op), xstar, rstar),
                 Matrix::Zero(n, rstar), delta, cfg.lambdas};
    pts.push_back(std::move(p));
  }
  return pts;
}

/// Coordinate saddles: with a diagonal M* and an operator that weighs the
/// diagonal by one, every subset of the scaled coordinate columns is a
/// critical point for every loss.
inline std::vector<AuditPoint> coordinate_points(const ExperimentConfig& cfg) {
  std::vector<AuditPoint> pts;
  const int n = 4;
  Rng rng(cfg.seed + 1);
  std::uniform_real_distribution<double> spread(0.0, 1.0);
  Vector d(n);
  for (int i = 0; i < n; ++i) d(i) = std::pow(10.0, 1.0 - 1.5 * i + 0.5 * spread(rng));
  const Matrix xstar = Matrix(d.cwiseSqrt().asDiagonal());
  const std::pair<std::string, double> ops[] = {{"identity", 0.0}, {"mask0.9", 0.9}, {"mask0.95", 0.95}};
  for (const auto& [name, eps] : ops) {
    SensingOperator op = eps == 0.0 ? make_identity_operator(n) : make_epsilon_operator(n, eps);
    const double delta = uniform_rip_bound(op);
    const auto inst = make_instance(std::move(op), xstar, n);
    for (int mask = 0; mask < (1 << n); ++mask) {
      Matrix x = Matrix::Zero(n, n);
      for (int i = 0; i < n; ++i)
        if (mask & (1 << i)) x(i, i) = std::sqrt(d(i));
      pts.push_back({"coord-" + name + "-" + padded(mask), inst, x, delta, cfg.lambdas});
    }
  }
  return pts;
}

/// Saddles reached by descent: starting with some coordinate rows zeroed,
/// descent stays in that invariant subspace and stops at a saddle.
inline std::vector<AuditPoint> descent_saddles(const ExperimentConfig& cfg) {
  std::vector<AuditPoint> pts;
  const int n = 4;
  Vector d(n);
  d << 4.0, 2.0, 1.0, 0.5;
  const Matrix xstar = Matrix(d.cwiseSqrt().asDiagonal());
  const int zeroed[] = {0b0001, 0b0011, 0b0101};
  const std::pair<std::string, double> ops[] = {{"identity", 0.0}, {"mask0.9", 0.9}};
  for (const auto& [name, eps] : ops) {
    SensingOperator op = eps == 0.0 ? make_identity_operator(n) : make_epsilon_operator(n, eps);
    const double delta = uniform_rip_bound(op);
    const auto inst = make_instance(std::move(op), xstar, n);
    for (double lam : cfg.lambdas) {
      for (int z : zeroed) {
        Matrix x0 = small_initialization(inst, 0.1, cfg.seed + static_cast<std::uint64_t>(z));
        for (int i = 0; i < n; ++i)
          if (z & (1 << i)) x0.row(i).setZero();
        PGDConfig pcfg;
        pcfg.stationary_tol = 1e-9;
        pcfg.max_iters = 200000;
        const LossSpec spec = cfg.spec(lam);
        const auto traj = gradient_descent(inst, spec, pcfg, x0);
        const Matrix x = polish_critical_point(inst, traj.final_x, spec, 1e-10);
        pts.push_back({"descent-" + name + "-lam" + fmt_short(lam) + "-" + padded(z), inst, x,
                       delta, {lam}});
      }
    }
  }
  return pts;
}

/// Spurious second-order points of the small mask problems, hunted per lambda.
inline std::vector<AuditPoint> hunted_points(const ExperimentConfig& cfg) {
  std::vector<AuditPoint> pts;
  for (int n : {3, 4}) {
    auto op = make_epsilon_operator(n, 0.3);
    const double delta = uniform_rip_bound(op);
    const auto inst = make_instance(std::move(op), odd_indicator_factor(n), 1);
    PGDConfig pcfg;
    pcfg.init_scale = 1.0;
    pcfg.seed = cfg.seed;
    for (double lam : cfg.lambdas) {
      const auto found = find_spurious_minima(inst, cfg.spec(lam), 10, pcfg, 1e-9, 1e-8);
      for (std::size_t k = 0; k < found.size(); ++k)
        pts.push_back({"hunted-n" + std::to_string(n) + "-lam" + fmt_short(lam) + "-" +
                           padded(static_cast<int>(k)),
                       inst, found[k].x, delta, {lam}});
    }
  }
  return pts;
}

}  // namespace detail

/// The generated audit set: zero points over identity, mask and Gaussian
/// operators; coordinate saddles; descent-found saddles; hunted spurious
/// points; and the zero point of the n = 21, epsilon = 0.1 mask problem
/// with its recorded delta.
inline std::vector<AuditPoint> audit_points(const ExperimentConfig& cfg) {
  std::vector<AuditPoint> pts = detail::zero_points(cfg);
  for (auto* gen : {detail::coordinate_points, detail::descent_saddles, detail::hunted_points}) {
    auto more = gen(cfg);
    pts.insert(pts.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  }
  auto op = make_epsilon_operator(21, 0.1);
  const double delta = *op.claimed_delta();
  pts.push_back({"mask21-zero", make_instance(std::move(op), odd_indicator_factor(21), 1),
                 Matrix::Zero(21, 1), delta, cfg.lambdas});
  return pts;
}

/// Run both certificates on every audit point. The first certificate is
/// checked where the point is critical for the plain loss; the second at
/// each of the point's lambdas. Every satisfied criterion also gets an
/// escape-direction check.
inline AuditResult run_theorem_audit(const ExperimentConfig& cfg) {
  AuditResult res;
  for (const auto& p : audit_points(cfg)) {
    bool critical = true;
    for (double lam : p.lambdas)
      critical = critical && gradient(p.inst, p.x, cfg.spec(lam)).norm() <= kAuditGradTol;
    if (!critical) {
      ++res.dropped;
      continue;
    }
    ++res.points;
    auto escape_check = [&](const std::string& id, const LossSpec& spec) {
      const double q = hessian_quadratic_form(p.inst, p.x, escape_direction(p.inst, p.x, spec), spec);
      res.escapes.push_back({id, q});
      if (!(q < 0.0)) ++res.escape_failures;
    };
    const bool plain_critical = std::find(p.lambdas.begin(), p.lambdas.end(), 0.0) != p.lambdas.end();
    if (plain_critical) {
      const auto v1 = thm1_check(p.inst, p.x, p.delta);
      const auto v0 = thm4_check(p.inst, p.x, p.delta, cfg.spec(0.0));
      if (std::isfinite(v1.predicted_bound))
        res.max_reduction_gap =
            std::max(res.max_reduction_gap, std::abs(v0.predicted_bound - v1.predicted_bound));
      else if (v0.predicted_bound != v1.predicted_bound)
        res.max_reduction_gap = std::numeric_limits<double>::infinity();
      const std::string id = p.id + "/first";
      res.verdicts.push_back({id, v1});
      if (!v1.consistent) ++res.inconsistent_first;
      if (v1.criterion_satisfied) escape_check(id, cfg.spec(0.0));
    }
    for (double lam : p.lambdas) {
      const auto v = thm4_check(p.inst, p.x, p.delta, cfg.spec(lam));
      const std::string id = p.id + "/second@" + fmt_short(lam);
      res.verdicts.push_back({id, v});
      if (!v.consistent) ++res.inconsistent_second;
      if (v.criterion_satisfied) escape_check(id, cfg.spec(lam));
    }
  }
  return res;
}

inline void write_escape_csv(std::ostream& os, const AuditResult& res) {
  os << "point_id,quadratic_form\n";
  for (const auto& e : res.escapes) os << e.point_id << "," << fmt17(e.quadratic_form) << "\n";
}

// ---------------------------------------------------------------------------
// RIP estimate
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json run_rip_estimate(const ExperimentConfig& cfg) {
  const auto op = make_operator(cfg.op, cfg.op.n, cfg.seed);
  const auto est = estimate_rip_constant(op, cfg.rip.p, cfg.rip.samples, cfg.seed);
  nlohmann::ordered_json j;
  j["delta_hat"] = est.delta_hat;
  j["scale_hat"] = est.scale_hat;
  if (const auto claimed = op.claimed_delta())
    j["claimed_delta"] = *claimed;
  else
    j["claimed_delta"] = nullptr;
  j["ratio_min"] = est.ratio_min;
  j["ratio_max"] = est.ratio_max;
  j["p"] = cfg.rip.p;
  j["samples"] = cfg.rip.samples;
  return j;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// Output of one experiment: the main file, optional side files keyed by
/// suffix (written next to the main file as <stem>.<suffix>.csv), warnings
/// for stderr and the process exit code.
struct ExperimentOutput {
  std::string main;
  std::map<std::string, std::string> side;
  std::vector<std::string> warnings;
  int exit_code = 0;
};

inline ExperimentOutput run_experiment(const ExperimentConfig& cfg) {
  ExperimentOutput out;
  std::ostringstream os;
  if (cfg.experiment == "table1") {
    write_table1_csv(os, run_table1(cfg));
  } else if (cfg.experiment == "ratio") {
    const auto res = run_ratio(cfg);
    write_ratio_csv(os, res);
    out.warnings = res.warnings;
  } else if (cfg.experiment == "pgd_compare") {
    const auto res = run_pgd_compare(cfg);
    write_compare_curves_csv(os, res);
    std::ostringstream summary;
    write_compare_summary_csv(summary, res);
    out.side["summary"] = summary.str();
  } else if (cfg.experiment == "landscape") {
    write_landscape_csv(os, run_landscape(cfg));
  } else if (cfg.experiment == "theorem_audit") {
    const auto res = run_theorem_audit(cfg);
    write_verdict_csv(os, res.verdicts);
    std::ostringstream esc;
    write_escape_csv(esc, res);
    out.side["escape"] = esc.str();
    if (!res.consistent()) {
      out.exit_code = 2;
      out.warnings.push_back("inconsistent verdicts: " + std::to_string(res.inconsistent_first) +
                             " first-certificate, " + std::to_string(res.inconsistent_second) +
                             " second-certificate");
    }
    if (res.dropped > 0)
      out.warnings.push_back(std::to_string(res.dropped) + " generated points were not critical");
  } else if (cfg.experiment == "rip_estimate") {
    os << run_rip_estimate(cfg).dump(2) << "\n";
  }
  out.main = os.str();
  return out;
}

}  // namespace msense
