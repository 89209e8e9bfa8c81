#pragma once

// Objective family f_lambda^l(X) = f(X) + lambda * f^l(X) with
//   f(X)   = 1/2 ||A(XX^T) - b||^2
//   f^l(X) = 1/l ||A(XX^T) - b||_l^l      (l even)
// and the matrix-space counterparts h^l(M) = 1/l ||A(M) - b||_l^l.
//
// Gradients are true derivatives of the values above, so
// grad f(X) = 2 (sum_i r_i A_i) X, twice the printed first-order condition.
// The factor does not move any critical point.

#include "msense/common.hpp"
#include "msense/operators.hpp"

#include <cmath>
#include <string>

namespace msense {

inline void check_loss_order(int l) {
  detail::require(l >= 2 && l % 2 == 0,
                  "loss order must be an even integer >= 2, got " + std::to_string(l));
}

/// Penalty order l and coefficient lambda of f_lambda^l.
struct LossSpec {
  int order = 2;
  double lambda = 0.0;

  void validate() const {
    check_loss_order(order);
    detail::require(std::isfinite(lambda) && lambda >= 0.0,
                    "penalty coefficient must be finite and >= 0, got " + fmt17(lambda));
  }
};

namespace detail {

inline void require_factor(const ProblemInstance& inst, const Matrix& x) {
  require(x.rows() == inst.n(), "factor has " + std::to_string(x.rows()) +
                                    " rows, instance expects " + std::to_string(inst.n()));
  require(x.cols() >= 1, "factor must have at least one column");
}

inline void require_square(const ProblemInstance& inst, const Matrix& m, const char* what) {
  require(m.rows() == inst.n() && m.cols() == inst.n(),
          std::string(what) + " must be " + std::to_string(inst.n()) + "x" +
              std::to_string(inst.n()) + ", got " + dims(m));
}

}  // namespace detail

/// A(XX^T) - b.
inline Vector residual(const ProblemInstance& inst, const Matrix& x) {
  detail::require_factor(inst, x);
  return inst.op.apply(x * x.transpose()) - inst.b;
}

/// A(M) - b.
inline Vector matrix_residual(const ProblemInstance& inst, const Matrix& m) {
  detail::require_square(inst, m, "M");
  return inst.op.apply(m) - inst.b;
}

inline double power_sum(const Vector& r, int l) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) s += ipow(r(i), l);
  return s;
}

inline double f_value(const ProblemInstance& inst, const Matrix& x) {
  return 0.5 * residual(inst, x).squaredNorm();
}

inline double fl_value(const ProblemInstance& inst, const Matrix& x, int l) {
  check_loss_order(l);
  return power_sum(residual(inst, x), l) / l;
}

inline double f_lambda_value(const ProblemInstance& inst, const Matrix& x, const LossSpec& spec) {
  spec.validate();
  const Vector r = residual(inst, x);
  double v = 0.5 * r.squaredNorm();
  if (spec.lambda != 0.0) v += spec.lambda * power_sum(r, spec.order) / spec.order;
  return v;
}

/// psi_i = r_i + lambda r_i^(l-1): the weights with grad h_lambda^l = A^T(psi).
inline Vector first_order_weights(const Vector& r, const LossSpec& spec) {
  Vector psi = r;
  if (spec.lambda != 0.0)
    for (Eigen::Index i = 0; i < r.size(); ++i)
      psi(i) += spec.lambda * ipow(r(i), spec.order - 1);
  return psi;
}

/// w_i = 1 + lambda (l-1) r_i^(l-2): weights of the Gauss-Newton part.
inline Vector curvature_weights(const Vector& r, const LossSpec& spec) {
  Vector w = Vector::Ones(r.size());
  if (spec.lambda != 0.0)
    for (Eigen::Index i = 0; i < r.size(); ++i)
      w(i) += spec.lambda * (spec.order - 1) * ipow(r(i), spec.order - 2);
  return w;
}

/// grad h^l(M) = sum_i <A_i, M - M*>^(l-1) A_i.
inline Matrix h_gradient(const ProblemInstance& inst, const Matrix& m, int l) {
  check_loss_order(l);
  const Vector r = matrix_residual(inst, m);
  Vector y(r.size());
  for (Eigen::Index i = 0; i < r.size(); ++i) y(i) = ipow(r(i), l - 1);
  return inst.op.adjoint(y);
}

/// h^l(M) = 1/l ||A(M) - b||_l^l.
inline double h_value(const ProblemInstance& inst, const Matrix& m, int l) {
  check_loss_order(l);
  return power_sum(matrix_residual(inst, m), l) / l;
}

/// grad h_lambda^l(M) = grad h(M) + lambda grad h^l(M).
inline Matrix h_lambda_gradient(const ProblemInstance& inst, const Matrix& m,
                                const LossSpec& spec) {
  spec.validate();
  return inst.op.adjoint(first_order_weights(matrix_residual(inst, m), spec));
}

/// grad f_lambda^l(X) = 2 grad h_lambda^l(XX^T) X.
inline Matrix gradient(const ProblemInstance& inst, const Matrix& x, const LossSpec& spec) {
  spec.validate();
  const Vector psi = first_order_weights(residual(inst, x), spec);
  return 2.0 * inst.op.adjoint(psi) * x;
}

/// Second derivative of f_lambda^l at X along U:
///   sum_i w_i <A_i, UX^T + XU^T>^2 + psi_i <A_i, 2UU^T>.
inline double hessian_quadratic_form(const ProblemInstance& inst, const Matrix& x,
                                     const Matrix& u, const LossSpec& spec) {
  spec.validate();
  detail::require_factor(inst, x);
  detail::require(u.rows() == x.rows() && u.cols() == x.cols(),
                  "direction U is " + detail::dims(u) + ", factor X is " + detail::dims(x));
  const Vector r = residual(inst, x);
  const Matrix ux = u * x.transpose();
  const Vector s = inst.op.apply(ux + ux.transpose());
  const Vector t = inst.op.apply(2.0 * u * u.transpose());
  const Vector w = curvature_weights(r, spec);
  const Vector psi = first_order_weights(r, spec);
  return (w.array() * s.array().square()).sum() + psi.dot(t);
}

inline constexpr Eigen::Index kMaxDenseHessian = 2000;

/// Dense nr x nr Hessian in column-major vec(U) coordinates, so that
/// vec(U)^T H vec(V) is the bilinear form of hessian_quadratic_form.
///
/// Assembled as J^T diag(w) J + 2 (I_r kron grad h_lambda^l(XX^T)), where
/// column a of J is A(E_a X^T + X E_a^T).
inline Matrix hessian_matrix(const ProblemInstance& inst, const Matrix& x, const LossSpec& spec) {
  spec.validate();
  detail::require_factor(inst, x);
  const Eigen::Index n = x.rows();
  const Eigen::Index r = x.cols();
  const Eigen::Index dim = n * r;
  detail::require(dim <= kMaxDenseHessian,
                  "dense Hessian of size " + std::to_string(dim) + " exceeds the limit of " +
                      std::to_string(kMaxDenseHessian) +
                      "; probe it with hessian_quadratic_form instead");
  const Vector res = residual(inst, x);
  const Vector w = curvature_weights(res, spec);
  const Matrix psi_mat = inst.op.adjoint(first_order_weights(res, spec));

  Matrix jac(inst.m(), dim);
  Matrix z = Matrix::Zero(n, n);
  for (Eigen::Index k = 0; k < r; ++k) {
    for (Eigen::Index p = 0; p < n; ++p) {
      z.row(p) += x.col(k).transpose();
      z.col(p) += x.col(k);
      jac.col(k * n + p) = inst.op.apply(z);
      z.row(p).setZero();
      z.col(p).setZero();
    }
  }
  Matrix h = jac.transpose() * w.asDiagonal() * jac;
  for (Eigen::Index k = 0; k < r; ++k) h.block(k * n, k * n, n, n) += 2.0 * psi_mat;
  return symmetric_part(h);
}

/// p-th directional derivative of h^l at M along N:
///   (l-1)!/(l-p)! * sum_i <A_i, M - M*>^(l-p) <A_i, N>^p.
inline double h_directional_derivative(const ProblemInstance& inst, const Matrix& m,
                                       const Matrix& dir, int p, int l) {
  check_loss_order(l);
  detail::require(p >= 1 && p <= l, "derivative order must satisfy 1 <= p <= l, got p=" +
                                        std::to_string(p) + ", l=" + std::to_string(l));
  detail::require_square(inst, dir, "N");
  const Vector r = matrix_residual(inst, m);
  const Vector an = inst.op.apply(dir);
  double coeff = 1.0;
  for (int k = l - p + 1; k <= l - 1; ++k) coeff *= k;
  double s = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) s += ipow(r(i), l - p) * ipow(an(i), p);
  return coeff * s;
}

/// h^l(M*) - [h^l(M) + <grad h^l(M), M* - M> + ((2^l - 1)/l - 1) ||A(M - M*)||_l^l].
///
/// Zero for l = 2. For l >= 4 the expansion drops the alternating signs of
/// the odd-order terms and the residual is -(2^l/l - 2) ||A(M - M*)||_l^l.
inline double taylor_identity_residual(const ProblemInstance& inst, const Matrix& m, int l) {
  check_loss_order(l);
  const double at_truth = h_value(inst, inst.mstar, l);
  const double at_m = h_value(inst, m, l);
  const double linear = frob_inner(h_gradient(inst, m, l), inst.mstar - m);
  const double coeff = (std::ldexp(1.0, l) - 1.0) / l - 1.0;
  const double tail = power_sum(inst.op.apply(m - inst.mstar), l);
  return at_truth - (at_m + linear + coeff * tail);
}

struct ScalarDerivatives {
  double g = 0.0;
  double dg = 0.0;
  double d2g = 0.0;
};

/// g(x) = (x^2 - a)^l / l with its first two derivatives.
inline ScalarDerivatives scalar_demo(double x, double a, int l) {
  check_loss_order(l);
  const double e = x * x - a;
  return {ipow(e, l) / l, 2.0 * x * ipow(e, l - 1),
          2.0 * ipow(e, l - 2) * ((l - 1) * 2.0 * x * x + e)};
}

/// C(l) = m^((2-l)/2) ((2^l - 1)/l - 1).
inline double c_of_l(int l, int m) {
  check_loss_order(l);
  detail::require(m >= 1, "measurement count must be >= 1");
  return std::pow(static_cast<double>(m), (2.0 - l) / 2.0) *
         ((std::ldexp(1.0, l) - 1.0) / l - 1.0);
}

/// ||x||_p for p >= 1.
inline double lp_norm(const Vector& x, double p) {
  detail::require(p >= 1.0, "lp_norm needs p >= 1");
  const double top = x.cwiseAbs().maxCoeff();
  if (top == 0.0) return 0.0;
  return top * std::pow((x.cwiseAbs() / top).array().pow(p).sum(), 1.0 / p);
}

/// ||X X^T - M*||_F.
inline double distance_to_truth(const Matrix& x, const Matrix& mstar) {
  detail::require(x.rows() == mstar.rows() && mstar.rows() == mstar.cols(),
                  "distance_to_truth: X is " + detail::dims(x) + ", M* is " +
                      detail::dims(mstar));
  return (x * x.transpose() - mstar).norm();
}

}  // namespace msense
