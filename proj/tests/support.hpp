#pragma once

// Independent oracles and random problem generators shared by the unit
// suites and the acceptance gate. Nothing here calls the library's
// derivative code; values come from finite differences of the objective or
// from direct summation over sensing matrices.

#include "msense/msense.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

using msense::Matrix;
using msense::Rng;
using msense::Vector;

/// Gaussian, mask or identity operator chosen by `kind` (0, 1, 2).
inline msense::SensingOperator random_operator(int kind, int n, Rng& rng) {
  std::uniform_int_distribution<int> extra(0, 8);
  std::uniform_real_distribution<double> eps(0.1, 0.9);
  if (kind == 0) return msense::make_gaussian_operator(n, n + extra(rng), rng());
  if (kind == 1 && n >= 2) return msense::make_epsilon_operator(n, eps(rng));
  return msense::make_identity_operator(n);
}

struct RandomCase {
  msense::ProblemInstance inst;
  Matrix x;
  msense::LossSpec spec;
};

/// Random (instance, X, spec) with n <= 8, r <= 3, l in {2,4,6},
/// lambda in {0, 0.5, 5}. X is rescaled so the residual norm lies in [0.1, 10].
inline RandomCase random_case(Rng& rng) {
  std::uniform_int_distribution<int> nd(2, 8), rd(1, 3), kd(0, 2), ld(0, 2), lamd(0, 2);
  std::uniform_real_distribution<double> logscale(std::log(0.1), std::log(10.0));
  const int n = nd(rng);
  const int r = std::min(rd(rng), n);
  const int rstar = std::uniform_int_distribution<int>(1, r)(rng);
  auto op = random_operator(kd(rng), n, rng);
  Matrix xstar = msense::gaussian_matrix(n, rstar, rng);
  Matrix x = msense::gaussian_matrix(n, r, rng);
  // The residual is homogeneous of degree 2 in (X*, X); rescale both jointly.
  const auto probe = msense::make_instance(op, xstar, r);
  const double target = std::exp(logscale(rng));
  const double alpha = std::sqrt(target / msense::residual(probe, x).norm());
  xstar *= alpha;
  x *= alpha;
  auto inst = msense::make_instance(std::move(op), xstar, r);
  const int orders[] = {2, 4, 6};
  const double lambdas[] = {0.0, 0.5, 5.0};
  return {std::move(inst), x, {orders[ld(rng)], lambdas[lamd(rng)]}};
}

/// Five-point central differences of f_lambda^l, step 1e-5 max(1, ||X||_F).
inline Matrix fd_gradient(const msense::ProblemInstance& inst, const Matrix& x,
                          const msense::LossSpec& spec) {
  const double h = 1e-5 * std::max(1.0, x.norm());
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    auto at = [&](double t) {
      Matrix y = x;
      y(i) += t;
      return msense::f_lambda_value(inst, y, spec);
    };
    g(i) = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
  }
  return g;
}

/// d^2/dt^2 f_lambda^l(X + tU) at t = 0 by the five-point stencil with
/// step 1e-3 max(1, ||X||_F) / ||U||_F.
inline double fd_second_derivative(const msense::ProblemInstance& inst, const Matrix& x,
                                   const Matrix& u, const msense::LossSpec& spec) {
  const double h = 1e-3 * std::max(1.0, x.norm()) / u.norm();
  auto at = [&](double t) { return msense::f_lambda_value(inst, x + t * u, spec); };
  return (-at(2 * h) + 16 * at(h) - 30 * at(0) + 16 * at(-h) - at(-2 * h)) / (12 * h * h);
}

/// Dense Hessian by polarization of the quadratic form:
/// H_ab = (Q(E_a + E_b) - Q(E_a - E_b)) / 4, column-major vec coordinates.
inline Matrix polarized_hessian(const msense::ProblemInstance& inst, const Matrix& x,
                                const msense::LossSpec& spec) {
  const Eigen::Index d = x.size();
  Matrix h(d, d);
  auto q = [&](const Matrix& u) { return msense::hessian_quadratic_form(inst, x, u, spec); };
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = a; b < d; ++b) {
      Matrix ua = Matrix::Zero(x.rows(), x.cols());
      Matrix ub = ua;
      ua(a) = 1.0;
      ub(b) = 1.0;
      h(a, b) = h(b, a) = 0.25 * (q(ua + ub) - q(ua - ub));
    }
  }
  return h;
}

/// <A_i, M> for every sensing matrix, summed entry by entry.
inline Vector measurements(const msense::SensingOperator& op, const Matrix& m) {
  Vector out(op.m());
  for (int i = 0; i < op.m(); ++i) out(i) = (op.sensing_matrix(i).array() * m.array()).sum();
  return out;
}

inline double rel_err(const Matrix& got, const Matrix& want) {
  return (got - want).norm() / std::max(want.norm(), 1e-300);
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

}  // namespace oracle
