#pragma once

// Gradient descent and perturbed gradient descent on f_lambda^l, plus a
// multi-start search for spurious second-order points.

#include "msense/common.hpp"
#include "msense/landscape.hpp"
#include "msense/losses.hpp"
#include "msense/operators.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace msense {

struct PGDConfig {
  double step = 0.0;  // <= 0 selects default_step at the initial point
  int max_iters = 100000;
  double grad_trigger = 1e-6;
  double perturb_radius = 1e-4;
  double init_scale = 1e-3;
  std::uint64_t seed = 0;
  double converge_tol = 1e-6;
  // Stop once ||grad|| <= stationary_tol (plain descent only; 0 disables).
  double stationary_tol = 0.0;
  // Keep every record_stride-th record; perturbation events and the final
  // iteration are always kept.
  int record_stride = 1;

  void validate() const {
    detail::require(max_iters >= 1, "max_iters must be >= 1");
    detail::require(grad_trigger >= 0.0, "grad_trigger must be >= 0");
    detail::require(perturb_radius >= 0.0, "perturb_radius must be >= 0");
    detail::require(init_scale > 0.0, "init_scale must be > 0");
    detail::require(converge_tol > 0.0, "converge_tol must be > 0");
    detail::require(stationary_tol >= 0.0, "stationary_tol must be >= 0");
    detail::require(record_stride >= 1, "record_stride must be >= 1");
    detail::require(std::isfinite(step), "step must be finite");
  }
};

enum class Termination { converged, max_iters, diverged, stationary };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::converged: return "converged";
    case Termination::max_iters: return "max_iters";
    case Termination::diverged: return "diverged";
    case Termination::stationary: return "stationary";
  }
  return "?";
}

struct TrajectoryRecord {
  int iter = 0;
  double f = 0.0;
  double dist = 0.0;
  double grad_norm = 0.0;
  bool perturbed = false;
};

struct Trajectory {
  std::vector<TrajectoryRecord> records;
  Matrix final_x;
  Termination reason = Termination::max_iters;
  int perturbations = 0;
  double step = 0.0;

  /// First recorded iteration with distance at or below `tol`, if any.
  std::optional<int> iterations_to(double tol) const {
    for (const auto& r : records)
      if (r.dist <= tol) return r.iter;
    return std::nullopt;
  }
};

/// 0.05 / rho(H), rho the spectral radius of the Hessian of f_lambda^l at X0.
inline double default_step(const ProblemInstance& inst, const LossSpec& spec, const Matrix& x0) {
  const auto [lo, hi] = hessian_extremes(inst, x0, spec);
  const double rho = std::max(std::abs(lo), std::abs(hi));
  return rho > 0.0 ? 0.05 / rho : 0.05;
}

/// init_scale times a Gaussian n x r matrix drawn from `seed`.
inline Matrix small_initialization(const ProblemInstance& inst, double init_scale,
                                   std::uint64_t seed) {
  Rng rng(seed);
  return init_scale * gaussian_matrix(inst.n(), inst.search_rank, rng);
}

namespace detail {

// Perturbations come from their own stream so the initial point does not
// depend on whether perturbation is enabled.
inline constexpr std::uint64_t kPerturbStream = 0x9e3779b97f4a7c15ULL;

inline Trajectory descend(const ProblemInstance& inst, const LossSpec& spec,
                          const PGDConfig& cfg, Matrix x, bool perturb) {
  spec.validate();
  cfg.validate();
  require_factor(inst, x);
  Trajectory traj;
  traj.step = cfg.step > 0.0 ? cfg.step : default_step(inst, spec, x);
  Rng noise_rng(cfg.seed ^ kPerturbStream);
  const double f0 = f_lambda_value(inst, x, spec);
  const double blowup = 1e6 * std::max(f0, std::numeric_limits<double>::min());

  for (int k = 0;; ++k) {
    const double f = f_lambda_value(inst, x, spec);
    const double dist = distance_to_truth(x, inst.mstar);
    Matrix g = gradient(inst, x, spec);
    const double gn = g.norm();
    TrajectoryRecord rec{k, f, dist, gn, false};

    std::optional<Termination> stop;
    if (dist <= cfg.converge_tol)
      stop = Termination::converged;
    else if (!std::isfinite(f) || f > blowup)
      stop = Termination::diverged;
    else if (!perturb && cfg.stationary_tol > 0.0 && gn <= cfg.stationary_tol)
      stop = Termination::stationary;
    else if (k == cfg.max_iters)
      stop = Termination::max_iters;
    if (stop) {
      traj.records.push_back(rec);
      traj.reason = *stop;
      break;
    }

    if (perturb && gn < cfg.grad_trigger) {
      x += cfg.perturb_radius * gaussian_matrix(x.rows(), x.cols(), noise_rng);
      g = gradient(inst, x, spec);
      rec.perturbed = true;
      ++traj.perturbations;
    }
    if (rec.perturbed || k % cfg.record_stride == 0) traj.records.push_back(rec);
    x -= traj.step * g;
  }
  traj.final_x = std::move(x);
  return traj;
}

}  // namespace detail

inline Trajectory gradient_descent(const ProblemInstance& inst, const LossSpec& spec,
                                   const PGDConfig& cfg, const Matrix& x0) {
  return detail::descend(inst, spec, cfg, x0, false);
}

/// Descent from the small random initialization init_scale * N(0, 1).
inline Trajectory gradient_descent(const ProblemInstance& inst, const LossSpec& spec,
                                   const PGDConfig& cfg) {
  cfg.validate();
  return gradient_descent(inst, spec, cfg, small_initialization(inst, cfg.init_scale, cfg.seed));
}

/// Gradient descent that adds perturb_radius * N(0, 1) to X whenever the
/// gradient norm drops below grad_trigger away from the ground truth.
inline Trajectory perturbed_gd(const ProblemInstance& inst, const LossSpec& spec,
                               const PGDConfig& cfg, const Matrix& x0) {
  return detail::descend(inst, spec, cfg, x0, true);
}

inline Trajectory perturbed_gd(const ProblemInstance& inst, const LossSpec& spec,
                               const PGDConfig& cfg) {
  cfg.validate();
  return perturbed_gd(inst, spec, cfg, small_initialization(inst, cfg.init_scale, cfg.seed));
}

/// Newton iterations on grad f_lambda^l = 0 (pseudo-inverse on the nonzero
/// part of the spectrum). Converges to the nearby critical point whatever
/// its index; used to tighten points found by descent.
inline Matrix polish_critical_point(const ProblemInstance& inst, const Matrix& x,
                                    const LossSpec& spec, double grad_tol, int max_steps = 30) {
  Matrix cur = x;
  double gn = gradient(inst, cur, spec).norm();
  for (int it = 0; it < max_steps && gn > grad_tol; ++it) {
    const Matrix g = gradient(inst, cur, spec);
    Eigen::SelfAdjointEigenSolver<Matrix> es(hessian_matrix(inst, cur, spec));
    const Vector& ev = es.eigenvalues();
    const double cutoff = 1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    const Vector coords = es.eigenvectors().transpose() * Eigen::Map<const Vector>(g.data(), g.size());
    Vector step = Vector::Zero(coords.size());
    for (Eigen::Index i = 0; i < coords.size(); ++i)
      if (std::abs(ev(i)) > cutoff) step(i) = coords(i) / ev(i);
    const Vector flat = es.eigenvectors() * step;
    const Matrix next = cur - Eigen::Map<const Matrix>(flat.data(), cur.rows(), cur.cols());
    const double next_gn = gradient(inst, next, spec).norm();
    if (!(next_gn < gn)) break;
    cur = next;
    gn = next_gn;
  }
  return cur;
}

struct SpuriousPoint {
  Matrix x;
  CriticalPointReport report;
  std::uint64_t seed = 0;
};

/// Multi-start search for second-order points away from the ground truth.
///
/// Start s runs gradient descent from init_scale * N(0, 1) drawn with seed
/// cfg.seed + s, stopping once the gradient norm reaches grad_tol (Newton
/// polishing finishes points that stall just above it). Points with
/// grad_norm <= grad_tol, lambda_min >= -eig_tol and D > 10 converge_tol are
/// kept; points within 1e-4 in (D, lambda_min, lambda_max) of an earlier
/// one are dropped.
inline std::vector<SpuriousPoint> find_spurious_minima(const ProblemInstance& inst,
                                                       const LossSpec& spec, int n_starts,
                                                       PGDConfig cfg, double grad_tol,
                                                       double eig_tol) {
  detail::require(n_starts >= 1, "find_spurious_minima: n_starts must be >= 1");
  detail::require(grad_tol > 0.0 && eig_tol > 0.0, "find_spurious_minima: tolerances must be > 0");
  const std::uint64_t base_seed = cfg.seed;
  std::vector<SpuriousPoint> found;
  for (int s = 0; s < n_starts; ++s) {
    cfg.seed = base_seed + static_cast<std::uint64_t>(s);
    cfg.stationary_tol = grad_tol;
    const Trajectory traj = gradient_descent(inst, spec, cfg);
    if (traj.reason == Termination::converged || traj.reason == Termination::diverged) continue;
    const Matrix x = polish_critical_point(inst, traj.final_x, spec, 0.1 * grad_tol);
    const CriticalPointReport rep = classify_point(inst, x, spec, grad_tol, eig_tol);
    if (rep.classification != PointClass::second_order_point) continue;
    if (rep.distance <= 10.0 * cfg.converge_tol) continue;
    bool duplicate = false;
    for (const auto& p : found) {
      if (std::abs(p.report.distance - rep.distance) <= 1e-4 &&
          std::abs(p.report.lambda_min - rep.lambda_min) <= 1e-4 &&
          std::abs(p.report.lambda_max - rep.lambda_max) <= 1e-4) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) found.push_back({x, rep, cfg.seed});
  }
  return found;
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  os << "iter,f,dist,grad_norm,perturbed\n";
  for (const auto& r : traj.records)
    os << r.iter << "," << fmt17(r.f) << "," << fmt17(r.dist) << "," << fmt17(r.grad_norm) << ","
       << (r.perturbed ? 1 : 0) << "\n";
}

/// Dense matrix file: "rows cols" header, then one row per line.
inline void write_matrix(std::ostream& os, const Matrix& m) {
  os << m.rows() << " " << m.cols() << "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? " " : "") << fmt17(m(i, j));
    os << "\n";
  }
}

inline Matrix read_matrix(std::istream& is) {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  detail::require(static_cast<bool>(is >> rows >> cols) && rows >= 0 && cols >= 0,
                  "matrix file: bad header");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      detail::require(static_cast<bool>(is >> m(i, j)), "matrix file: truncated data");
  return m;
}

inline void save_matrix(const std::string& path, const Matrix& m) {
  std::ofstream os(path);
  detail::require(static_cast<bool>(os), "cannot open '" + path + "' for writing");
  write_matrix(os, m);
}

inline Matrix load_matrix(const std::string& path) {
  std::ifstream is(path);
  detail::require(static_cast<bool>(is), "cannot open '" + path + "'");
  return read_matrix(is);
}

}  // namespace msense
