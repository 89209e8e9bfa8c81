#pragma once

// Hessian eigen-analysis and the strict-saddle certificates for critical
// points of f_lambda^l.

#include "msense/common.hpp"
#include "msense/losses.hpp"
#include "msense/operators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace msense {

enum class PointClass { not_critical, strict_saddle, second_order_point };

inline const char* to_string(PointClass c) {
  switch (c) {
    case PointClass::not_critical: return "not_critical";
    case PointClass::strict_saddle: return "strict_saddle";
    case PointClass::second_order_point: return "second_order_point";
  }
  return "?";
}

struct CriticalPointReport {
  double grad_norm = 0.0;
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double sigma_r = 0.0;
  double distance = 0.0;
  PointClass classification = PointClass::not_critical;
};

/// r-th largest singular value of an n x r factor; 0 when r > n.
inline double sigma_r(const Matrix& x) {
  if (x.cols() > x.rows()) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(x);
  return svd.singularValues()(x.cols() - 1);
}

inline double default_grad_tol(const ProblemInstance& inst) {
  return 1e-8 * std::max(1.0, inst.b.norm());
}

inline double default_eig_tol(double lambda_max) { return 1e-8 * std::max(1.0, lambda_max); }

/// Smallest and largest eigenvalue of the dense Hessian of f_lambda^l.
inline std::pair<double, double> hessian_extremes(const ProblemInstance& inst, const Matrix& x,
                                                  const LossSpec& spec) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(hessian_matrix(inst, x, spec), Eigen::EigenvaluesOnly);
  const Vector& ev = es.eigenvalues();
  return {ev(0), ev(ev.size() - 1)};
}

namespace detail {

inline CriticalPointReport measure_point(const ProblemInstance& inst, const Matrix& x,
                                         const LossSpec& spec) {
  CriticalPointReport rep;
  rep.grad_norm = gradient(inst, x, spec).norm();
  std::tie(rep.lambda_min, rep.lambda_max) = hessian_extremes(inst, x, spec);
  rep.sigma_r = sigma_r(x);
  rep.distance = distance_to_truth(x, inst.mstar);
  return rep;
}

inline PointClass classify(const CriticalPointReport& rep, double grad_tol, double eig_tol) {
  if (rep.grad_norm > grad_tol) return PointClass::not_critical;
  if (rep.lambda_min < -eig_tol) return PointClass::strict_saddle;
  return PointClass::second_order_point;
}

}  // namespace detail

inline CriticalPointReport classify_point(const ProblemInstance& inst, const Matrix& x,
                                          const LossSpec& spec, double grad_tol, double eig_tol) {
  detail::require(grad_tol > 0.0 && eig_tol > 0.0, "classify_point: tolerances must be > 0");
  CriticalPointReport rep = detail::measure_point(inst, x, spec);
  rep.classification = detail::classify(rep, grad_tol, eig_tol);
  return rep;
}

/// classify_point with the relative default tolerances.
inline CriticalPointReport classify_point(const ProblemInstance& inst, const Matrix& x,
                                          const LossSpec& spec) {
  CriticalPointReport rep = detail::measure_point(inst, x, spec);
  rep.classification =
      detail::classify(rep, default_grad_tol(inst), default_eig_tol(rep.lambda_max));
  return rep;
}

/// Outcome of checking one strict-saddle criterion at a point.
///
/// `consistent` is (not criterion_satisfied) or (observed <= bound + tol).
/// When M* = 0 there is nothing to certify: the criterion is false and the
/// bound is +infinity.
struct TheoremVerdict {
  bool criterion_satisfied = false;
  double predicted_bound = std::numeric_limits<double>::infinity();
  double observed_lambda_min = 0.0;
  bool consistent = true;
  double grad_norm = 0.0;
  double distance = 0.0;
  double sigma_r = 0.0;
  double threshold = 0.0;  // right-hand side the squared distance is compared to
};

namespace detail {

inline void require_delta(double delta) {
  require(delta >= 0.0 && delta < 1.0, "RIP constant must lie in [0, 1), got " + fmt17(delta));
}

// Criteria closer than this to their boundary are reported as not satisfied.
inline bool exceeds(double lhs, double rhs) { return lhs - rhs > 1e-12 * std::max(1.0, std::abs(rhs)); }

}  // namespace detail

/// Strict-saddle certificate for the plain least-squares objective:
/// D^2 > 2 (1+delta)/(1-delta) tr(M*) sigma_r^2 implies
/// lambda_min(H) <= 2 (1+delta) sigma_r^2 - D^2 (1-delta) / tr(M*).
inline TheoremVerdict thm1_check(const ProblemInstance& inst, const Matrix& x, double delta,
                                 double tol = 1e-6) {
  detail::require_delta(delta);
  const LossSpec plain{2, 0.0};
  TheoremVerdict v;
  v.grad_norm = gradient(inst, x, plain).norm();
  v.distance = distance_to_truth(x, inst.mstar);
  v.sigma_r = sigma_r(x);
  v.observed_lambda_min = hessian_extremes(inst, x, plain).first;
  const double tr = inst.mstar.trace();
  if (!(tr > 0.0)) return v;
  const double d2 = v.distance * v.distance;
  const double s2 = v.sigma_r * v.sigma_r;
  v.threshold = 2.0 * (1.0 + delta) / (1.0 - delta) * tr * s2;
  v.criterion_satisfied = detail::exceeds(d2, v.threshold);
  v.predicted_bound = 2.0 * (1.0 + delta) * s2 - d2 * (1.0 - delta) / tr;
  v.consistent = !v.criterion_satisfied || v.observed_lambda_min <= v.predicted_bound + tol;
  return v;
}

/// Strict-saddle certificate for f_lambda^l. Both sides of the criterion
/// are evaluated at the point's own distance D; with lambda = 0 or l = 2 it
/// reduces to thm1_check (up to the factor 1 + lambda when l = 2).
inline TheoremVerdict thm4_check(const ProblemInstance& inst, const Matrix& x, double delta,
                                 const LossSpec& spec, double tol = 1e-6) {
  detail::require_delta(delta);
  spec.validate();
  const int l = spec.order;
  const double lam = spec.lambda;
  TheoremVerdict v;
  v.grad_norm = gradient(inst, x, spec).norm();
  v.distance = distance_to_truth(x, inst.mstar);
  v.sigma_r = sigma_r(x);
  v.observed_lambda_min = hessian_extremes(inst, x, spec).first;
  const double tr = inst.mstar.trace();
  if (!(tr > 0.0)) return v;
  const double d = v.distance;
  const double d2 = d * d;
  const double s2 = v.sigma_r * v.sigma_r;
  const double c = c_of_l(l, inst.m());
  const double dl2 = ipow(d, l - 2);
  const double up = std::pow(1.0 + delta, l / 2.0);
  const double down = std::pow(1.0 - delta, l / 2.0);
  const double num = (1.0 + delta) + lam * (l - 1) * up * dl2;
  const double den = (1.0 - delta) / 2.0 + lam * c * down * dl2;
  v.threshold = tr * s2 * num / den;
  // D^2 >= threshold as printed; boundary ties count as not satisfied.
  v.criterion_satisfied = detail::exceeds(d2, v.threshold);
  v.predicted_bound = (2.0 * (1.0 + delta) * s2 - d2 * (1.0 - delta) / tr) +
                      lam * dl2 * (2.0 * up * (l - 1) * s2 - 2.0 * down * c * d2 / tr);
  v.consistent = !v.criterion_satisfied || v.observed_lambda_min <= v.predicted_bound + tol;
  return v;
}

/// Rank-one escape direction u q^T: u is the unit eigenvector of the most
/// negative eigenvalue of grad h_lambda^l(XX^T), q the right singular vector
/// of X for sigma_r. When sigma_r vanishes, q is the lowest-index right
/// singular vector with zero singular value.
inline Matrix escape_direction(const ProblemInstance& inst, const Matrix& x, const LossSpec& spec) {
  detail::require_factor(inst, x);
  const Matrix psi = h_lambda_gradient(inst, x * x.transpose(), spec);
  Eigen::SelfAdjointEigenSolver<Matrix> es(psi);
  const Vector u = es.eigenvectors().col(0);

  const Eigen::Index r = x.cols();
  Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeFullV);
  const Vector& sv = svd.singularValues();
  const double top = sv.size() > 0 ? sv(0) : 0.0;
  const double zero_tol = 1e-14 * std::max(1.0, top);
  Eigen::Index pick = r - 1;
  for (Eigen::Index k = 0; k < r; ++k) {
    const double s = k < sv.size() ? sv(k) : 0.0;
    if (s <= zero_tol) {
      pick = k;
      break;
    }
  }
  const Vector q = svd.matrixV().col(pick);
  return u * q.transpose();
}

/// lambda_{r*}(M*): smallest of the top r* eigenvalues, r* the numerical rank.
inline double smallest_signal_eigenvalue(const Matrix& mstar, int* rank_out = nullptr) {
  const int rank = numerical_rank_psd(mstar);
  if (rank_out) *rank_out = rank;
  if (rank == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(mstar, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(mstar.rows() - rank);
}

/// Frobenius radius tau * lambda_{r*}(M*) around the ground truth inside
/// which every second-order point is globally optimal.
inline double near_region_radius(const Matrix& mstar, double delta, double tau) {
  detail::require_delta(delta);
  detail::require(tau > 0.0 && tau < 1.0 - delta * delta,
                  "tau must lie in (0, 1 - delta^2) = (0, " + fmt17(1.0 - delta * delta) +
                      "), got " + fmt17(tau));
  return tau * smallest_signal_eigenvalue(mstar);
}

struct BenignCondition {
  bool holds = true;
  double lhs = 0.0;
  double rhs = 0.0;
};

/// ||M*||_F tr(M*) / lambda_{r*}(M*) <= sqrt(r)/(2 sqrt 2) sqrt((1-delta)^5/(1+delta)).
inline BenignCondition global_benign_condition(const Matrix& mstar, double delta, int r) {
  detail::require_delta(delta);
  detail::require(r >= 1, "search rank must be >= 1");
  BenignCondition out;
  out.rhs = std::sqrt(static_cast<double>(r)) / (2.0 * std::sqrt(2.0)) *
            std::sqrt(ipow(1.0 - delta, 5) / (1.0 + delta));
  int rank = 0;
  const double lam = smallest_signal_eigenvalue(mstar, &rank);
  detail::require(rank <= r, "true rank " + std::to_string(rank) + " exceeds search rank " +
                                 std::to_string(r));
  if (rank == 0) return out;
  out.lhs = mstar.norm() * mstar.trace() / lam;
  out.holds = out.lhs <= out.rhs;
  return out;
}

/// Upper bound on sigma_r^2 of any second-order point:
/// sqrt(2 (1+delta) / (r (1-delta))) ||M*||_F.
inline double sigma_r_squared_bound(const Matrix& mstar, double delta, int r) {
  detail::require_delta(delta);
  detail::require(r >= 1, "search rank must be >= 1");
  return std::sqrt(2.0 * (1.0 + delta) / (r * (1.0 - delta))) * mstar.norm();
}

/// The two sides whose ordering is equivalent to global_benign_condition:
/// near = (1 - delta^2) lambda_{r*}(M*) and
/// far = 2 (1+delta)/(1-delta) tr(M*) sigma_r_squared_bound.
struct RegionChain {
  double near = 0.0;
  double far = 0.0;
};

inline RegionChain benign_region_chain(const Matrix& mstar, double delta, int r) {
  RegionChain c;
  c.near = (1.0 - delta * delta) * smallest_signal_eigenvalue(mstar);
  c.far = 2.0 * (1.0 + delta) / (1.0 - delta) * mstar.trace() *
          sigma_r_squared_bound(mstar, delta, r);
  return c;
}

/// (1+delta)/(1-delta) tr(M*) sigma_r(X)^2: the region where tensor lifting
/// amplifies negative curvature. Half of strict_saddle_threshold.
inline double lifted_region_threshold(const Matrix& mstar, const Matrix& x, double delta) {
  detail::require_delta(delta);
  const double s = sigma_r(x);
  return (1.0 + delta) / (1.0 - delta) * mstar.trace() * s * s;
}

/// 2 (1+delta)/(1-delta) tr(M*) sigma_r(X)^2.
inline double strict_saddle_threshold(const Matrix& mstar, const Matrix& x, double delta) {
  return 2.0 * lifted_region_threshold(mstar, x, delta);
}

struct SweepGrid {
  std::vector<double> offsets;  // shared by both axes
  Matrix lambda_min;            // (s index, t index)
  Matrix d1;
  Matrix d2;
};

/// lambda_min of the Hessian on the lattice X + s d1 + t d2, where d1 points
/// from X to X* and d2 is a unit direction orthogonal to it (Gram-Schmidt on
/// a Gaussian matrix drawn from `seed`).
inline SweepGrid landscape_sweep(const ProblemInstance& inst, const Matrix& xhat,
                                 const Matrix& xstar, double half_width, int grid_points,
                                 const LossSpec& spec, std::uint64_t seed = 0) {
  detail::require_factor(inst, xhat);
  detail::require(xstar.rows() == xhat.rows() && xstar.cols() == xhat.cols(),
                  "landscape_sweep: X* and X-hat shapes differ");
  detail::require(grid_points >= 1 && grid_points % 2 == 1,
                  "landscape_sweep: grid_points must be odd so the center is X-hat");
  detail::require(half_width > 0.0, "landscape_sweep: half_width must be > 0");
  detail::require(xhat.size() >= 2, "landscape_sweep: need at least two coordinates");
  const double gap = (xstar - xhat).norm();
  detail::require(gap > 0.0, "landscape_sweep: X-hat equals X*, direction undefined");

  SweepGrid grid;
  grid.d1 = (xstar - xhat) / gap;
  Rng rng(seed);
  Matrix d2 = gaussian_matrix(xhat.rows(), xhat.cols(), rng);
  d2 -= frob_inner(d2, grid.d1) * grid.d1;
  grid.d2 = d2 / d2.norm();

  const int half = (grid_points - 1) / 2;
  grid.offsets.resize(static_cast<std::size_t>(grid_points));
  for (int k = 0; k < grid_points; ++k)
    grid.offsets[static_cast<std::size_t>(k)] =
        half == 0 ? 0.0 : half_width * static_cast<double>(k - half) / half;

  grid.lambda_min.resize(grid_points, grid_points);
  for (int i = 0; i < grid_points; ++i) {
    for (int j = 0; j < grid_points; ++j) {
      const double s = grid.offsets[static_cast<std::size_t>(i)];
      const double t = grid.offsets[static_cast<std::size_t>(j)];
      const Matrix x = (i == half && j == half) ? xhat : Matrix(xhat + s * grid.d1 + t * grid.d2);
      grid.lambda_min(i, j) = hessian_extremes(inst, x, spec).first;
    }
  }
  return grid;
}

inline void write_sweep_csv(std::ostream& os, const SweepGrid& grid) {
  os << "s,t,lambda_min\n";
  const auto g = static_cast<Eigen::Index>(grid.offsets.size());
  for (Eigen::Index i = 0; i < g; ++i)
    for (Eigen::Index j = 0; j < g; ++j)
      os << fmt17(grid.offsets[static_cast<std::size_t>(i)]) << ","
         << fmt17(grid.offsets[static_cast<std::size_t>(j)]) << ","
         << fmt17(grid.lambda_min(i, j)) << "\n";
}

struct VerdictRow {
  std::string point_id;
  TheoremVerdict verdict;
};

inline void write_verdict_csv(std::ostream& os, const std::vector<VerdictRow>& rows) {
  os << "point_id,grad_norm,D,sigma_r,criterion,bound,lambda_min,consistent\n";
  for (const auto& row : rows) {
    const auto& v = row.verdict;
    os << row.point_id << "," << fmt17(v.grad_norm) << "," << fmt17(v.distance) << ","
       << fmt17(v.sigma_r) << "," << (v.criterion_satisfied ? 1 : 0) << ","
       << fmt17(v.predicted_bound) << "," << fmt17(v.observed_lambda_min) << ","
       << (v.consistent ? 1 : 0) << "\n";
  }
}

}  // namespace msense
