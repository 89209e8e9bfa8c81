#pragma once

// Linear sensing operators A(M) = [<A_1, M>, ..., <A_m, M>] and problem
// instances b = A(M*) built on top of them.

#include "msense/common.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace msense {

enum class OperatorKind { gaussian, epsilon_mask, explicit_list };

inline const char* to_string(OperatorKind k) {
  switch (k) {
    case OperatorKind::gaussian: return "gaussian";
    case OperatorKind::epsilon_mask: return "epsilon_mask";
    case OperatorKind::explicit_list: return "explicit";
  }
  return "?";
}

/// Index set of the structured mask: (i,i), (i,2k), (2k,i) with 1-based
/// i in [n], k in [floor(n/2)]. Returned as a 0-based boolean matrix.
inline Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> epsilon_mask_support(int n) {
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> omega =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, false);
  for (int i = 0; i < n; ++i) {
    omega(i, i) = true;
    for (int k = 1; k <= n / 2; ++k) {
      omega(i, 2 * k - 1) = true;
      omega(2 * k - 1, i) = true;
    }
  }
  return omega;
}

/// Immutable sensing operator.
///
/// Two storage forms exist. The explicit form keeps the m symmetric sensing
/// matrices as rows of an m x n^2 matrix (row i holds vec(A_i)). The
/// epsilon-mask form keeps only the n x n weight pattern W (1 on the mask
/// support, epsilon elsewhere); its m = n^2 measurements are the entries of
/// W o M flattened row-major, i.e. component i*n + j is W_ij M_ij.
///
/// `adjoint` is taken with respect to the Frobenius inner product on
/// symmetric matrices, so it always returns a symmetric matrix. For the mask
/// this is sym(W o Y).
class SensingOperator {
 public:
  /// Explicit operator from a list of symmetric sensing matrices.
  static SensingOperator from_matrices(const std::vector<Matrix>& mats) {
    detail::require(!mats.empty(), "explicit operator needs at least one sensing matrix");
    const auto n = mats.front().rows();
    detail::require(n >= 1, "sensing matrices must be non-empty");
    Matrix rows(static_cast<Eigen::Index>(mats.size()), n * n);
    for (std::size_t i = 0; i < mats.size(); ++i) {
      const Matrix& a = mats[i];
      detail::require(a.rows() == n && a.cols() == n,
                      "sensing matrix " + std::to_string(i) + " is " + detail::dims(a) +
                          ", expected " + std::to_string(n) + "x" + std::to_string(n));
      detail::require((a - a.transpose()).norm() == 0.0,
                      "sensing matrix " + std::to_string(i) + " is not symmetric");
      rows.row(static_cast<Eigen::Index>(i)) =
          Eigen::Map<const Eigen::RowVectorXd>(a.data(), n * n);
    }
    SensingOperator op;
    op.n_ = static_cast<int>(n);
    op.kind_ = OperatorKind::explicit_list;
    op.form_ = Explicit{std::move(rows)};
    return op;
  }

  static SensingOperator epsilon_mask(int n, double epsilon) {
    detail::require(n >= 2, "epsilon-mask operator needs n >= 2, got " + std::to_string(n));
    detail::require(epsilon > 0.0 && epsilon < 1.0,
                    "epsilon must lie in (0, 1), got " + fmt17(epsilon));
    const auto omega = epsilon_mask_support(n);
    Matrix w(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) w(i, j) = omega(i, j) ? 1.0 : epsilon;
    SensingOperator op;
    op.n_ = n;
    op.kind_ = OperatorKind::epsilon_mask;
    op.epsilon_ = epsilon;
    op.claimed_delta_ = (1.0 - epsilon) / (1.0 + epsilon);
    op.form_ = Mask{std::move(w)};
    return op;
  }

  static SensingOperator gaussian(int n, int m, std::uint64_t seed) {
    detail::require(n >= 1 && m >= 1, "gaussian operator needs n, m >= 1");
    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(m));
    std::vector<Matrix> mats;
    mats.reserve(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      Matrix g = gaussian_matrix(n, n, rng);
      Matrix a(n, n);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) a(r, c) = 0.5 * (g(r, c) + g(c, r)) * scale;
      mats.push_back(std::move(a));
    }
    SensingOperator op = from_matrices(mats);
    op.kind_ = OperatorKind::gaussian;
    op.seed_ = seed;
    return op;
  }

  int n() const { return n_; }
  int m() const {
    if (const auto* e = std::get_if<Explicit>(&form_)) return static_cast<int>(e->rows.rows());
    return n_ * n_;
  }
  OperatorKind kind() const { return kind_; }
  std::optional<double> epsilon() const { return epsilon_; }
  std::optional<std::uint64_t> seed() const { return seed_; }
  /// RIP constant asserted for this construction in the literature, if any.
  /// Metadata only: nothing in the library assumes it is valid.
  std::optional<double> claimed_delta() const { return claimed_delta_; }

  /// Weight pattern of a mask operator (empty for explicit operators).
  const Matrix& mask_weights() const {
    static const Matrix empty;
    if (const auto* mk = std::get_if<Mask>(&form_)) return mk->w;
    return empty;
  }

  /// The i-th sensing matrix A_i. For the mask form this is w_jk E_jk with
  /// i = j*n + k (not symmetric; see class comment).
  Matrix sensing_matrix(int i) const {
    detail::require(i >= 0 && i < m(), "sensing matrix index out of range");
    if (const auto* e = std::get_if<Explicit>(&form_)) {
      Matrix a(n_, n_);
      Eigen::Map<Eigen::RowVectorXd>(a.data(), n_ * n_) = e->rows.row(i);
      return a;
    }
    const auto& w = std::get<Mask>(form_).w;
    Matrix a = Matrix::Zero(n_, n_);
    a(i / n_, i % n_) = w(i / n_, i % n_);
    return a;
  }

  /// A(M). M is expected to be symmetric; only its shape is checked.
  Vector apply(const Matrix& mat) const {
    detail::require(mat.rows() == n_ && mat.cols() == n_,
                    "apply: expected " + std::to_string(n_) + "x" + std::to_string(n_) +
                        " matrix, got " + detail::dims(mat));
    if (const auto* e = std::get_if<Explicit>(&form_)) {
      return e->rows * Eigen::Map<const Vector>(mat.data(), static_cast<Eigen::Index>(n_) * n_);
    }
    const auto& w = std::get<Mask>(form_).w;
    Vector out(static_cast<Eigen::Index>(n_) * n_);
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) out(i * n_ + j) = w(i, j) * mat(i, j);
    return out;
  }

  /// A^T(y) = sum_i y_i A_i, symmetrized.
  Matrix adjoint(const Vector& y) const {
    detail::require(y.size() == m(), "adjoint: expected vector of length " +
                                         std::to_string(m()) + ", got " +
                                         std::to_string(y.size()));
    Matrix out(n_, n_);
    if (const auto* e = std::get_if<Explicit>(&form_)) {
      Vector flat = e->rows.transpose() * y;
      out = Eigen::Map<const Matrix>(flat.data(), n_, n_);
      return symmetric_part(out);
    }
    const auto& w = std::get<Mask>(form_).w;
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) out(i, j) = w(i, j) * y(i * n_ + j);
    return symmetric_part(out);
  }

 private:
  struct Explicit {
    Matrix rows;
  };
  struct Mask {
    Matrix w;
  };

  int n_ = 0;
  OperatorKind kind_ = OperatorKind::explicit_list;
  std::optional<double> epsilon_;
  std::optional<std::uint64_t> seed_;
  std::optional<double> claimed_delta_;
  std::variant<Explicit, Mask> form_;
};

inline SensingOperator make_epsilon_operator(int n, double epsilon) {
  return SensingOperator::epsilon_mask(n, epsilon);
}

/// m symmetrized Gaussian sensing matrices (G + G^T) / 2 scaled by 1/sqrt(m),
/// so that E||A(M)||^2 = ||M||_F^2 for symmetric M.
inline SensingOperator make_gaussian_operator(int n, int m, std::uint64_t seed) {
  return SensingOperator::gaussian(n, m, seed);
}

/// Orthonormal basis of the symmetric matrices: E_ii and (E_ij + E_ji)/sqrt(2)
/// for i < j. ||A(M)|| = ||M||_F exactly, i.e. RIP with delta = 0.
inline SensingOperator make_identity_operator(int n) {
  detail::require(n >= 1, "identity operator needs n >= 1");
  std::vector<Matrix> mats;
  const double off = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      Matrix a = Matrix::Zero(n, n);
      if (i == j) {
        a(i, i) = 1.0;
      } else {
        a(i, j) = off;
        a(j, i) = off;
      }
      mats.push_back(std::move(a));
    }
  }
  return SensingOperator::from_matrices(mats);
}

/// ||A(M)||^2 / ||M||_F^2.
inline double rip_ratio(const SensingOperator& op, const Matrix& mat) {
  const double denom = mat.squaredNorm();
  detail::require(denom > 0.0, "rip_ratio: matrix must be non-zero");
  return op.apply(mat).squaredNorm() / denom;
}

struct RipEstimate {
  double delta_hat = 0.0;
  double scale_hat = 1.0;
  double ratio_min = 0.0;
  double ratio_max = 0.0;
};

/// Sampled lower bound on the best-scaled RIP constant of order p.
///
/// Samples M = YY^T - ZZ^T with Gaussian Y (n x ceil(p/2)) and Z
/// (n x floor(p/2)), normalized to unit Frobenius norm, and records the
/// ratios rho = ||A(M)||^2. With scale c = 2 / (rho_max + rho_min), every
/// sample satisfies (1 - delta) <= c rho <= (1 + delta) for
/// delta = (rho_max - rho_min) / (rho_max + rho_min).
inline RipEstimate estimate_rip_constant(const SensingOperator& op, int p, int samples,
                                         std::uint64_t seed) {
  detail::require(p >= 1 && p <= op.n(), "estimate_rip_constant: need 1 <= p <= n");
  detail::require(samples >= 2, "estimate_rip_constant: need at least 2 samples");
  Rng rng(seed);
  const int pos = (p + 1) / 2;
  const int neg = p / 2;
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (int s = 0; s < samples; ++s) {
    Matrix y = gaussian_matrix(op.n(), pos, rng);
    Matrix mat = y * y.transpose();
    if (neg > 0) {
      Matrix z = gaussian_matrix(op.n(), neg, rng);
      mat -= z * z.transpose();
    }
    const double fro = mat.norm();
    if (fro == 0.0) continue;
    const double rho = op.apply(mat / fro).squaredNorm();
    lo = std::min(lo, rho);
    hi = std::max(hi, rho);
  }
  RipEstimate est;
  est.ratio_min = lo;
  est.ratio_max = hi;
  if (!(hi > 0.0) || hi - lo <= 1e-14 * hi) {
    est.delta_hat = 0.0;
    est.scale_hat = hi > 0.0 ? 1.0 / hi : 1.0;
    return est;
  }
  est.delta_hat = (hi - lo) / (hi + lo);
  est.scale_hat = 2.0 / (hi + lo);
  return est;
}

/// max(1 - rho_min, rho_max - 1) with rho the exact extreme values of
/// ||A(M)||^2 / ||M||_F^2 over all symmetric M. It bounds delta_p for every
/// p, so below 1 it is a certified constant for the strict-saddle checks.
/// Cost is one dense eigensolve of size n(n+1)/2.
inline double uniform_rip_bound(const SensingOperator& op) {
  const int n = op.n();
  const Eigen::Index dim = static_cast<Eigen::Index>(n) * (n + 1) / 2;
  Matrix images(op.m(), dim);
  Eigen::Index k = 0;
  Matrix basis = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      const double v = i == j ? 1.0 : 1.0 / std::sqrt(2.0);
      basis(i, j) = basis(j, i) = v;
      images.col(k++) = op.apply(basis);
      basis(i, j) = basis(j, i) = 0.0;
    }
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(images.transpose() * images, Eigen::EigenvaluesOnly);
  const Vector& ev = es.eigenvalues();
  return std::max(1.0 - ev(0), ev(ev.size() - 1) - 1.0);
}

struct ProblemInstance {
  SensingOperator op;
  Matrix mstar;     // ground truth M*, symmetric PSD
  Vector b;         // A(M*)
  int rstar = 0;    // numerical rank of M*
  int search_rank = 1;

  int n() const { return op.n(); }
  int m() const { return op.m(); }
};

/// Instance with M* = X* X*^T and b = A(M*).
inline ProblemInstance make_instance(SensingOperator op, const Matrix& xstar, int r) {
  detail::require(xstar.rows() == op.n(),
                  "make_instance: X* has " + std::to_string(xstar.rows()) +
                      " rows, operator expects " + std::to_string(op.n()));
  detail::require(r >= 1, "make_instance: search rank must be >= 1");
  ProblemInstance inst{std::move(op), xstar * xstar.transpose(), Vector(), 0, r};
  inst.rstar = numerical_rank_psd(inst.mstar);
  detail::require(r >= inst.rstar, "make_instance: search rank " + std::to_string(r) +
                                       " is below the true rank " +
                                       std::to_string(inst.rstar));
  inst.b = inst.op.apply(inst.mstar);
  return inst;
}

/// Rank-one factor with ones on the odd (1-based) coordinates. Paired with
/// the epsilon-mask operator, sign flips of these coordinates give spurious
/// second-order points.
inline Matrix odd_indicator_factor(int n) {
  Matrix x = Matrix::Zero(n, 1);
  for (int i = 0; i < n; i += 2) x(i, 0) = 1.0;
  return x;
}

// ---------------------------------------------------------------------------
// Serialization
//
//   kind <gaussian|epsilon_mask|explicit>
//   n <int>
//   m <int>
//   epsilon <double>        (epsilon_mask only)
//   seed <uint64>           (gaussian only)
//   matrices                (explicit only; then m blocks of n rows of
//   <n values per row>       n values, row-major, 17 significant digits)
// ---------------------------------------------------------------------------

inline void write_operator(std::ostream& os, const SensingOperator& op) {
  os << "kind " << to_string(op.kind()) << "\n";
  os << "n " << op.n() << "\n";
  os << "m " << op.m() << "\n";
  switch (op.kind()) {
    case OperatorKind::epsilon_mask:
      os << "epsilon " << fmt17(*op.epsilon()) << "\n";
      break;
    case OperatorKind::gaussian:
      os << "seed " << *op.seed() << "\n";
      break;
    case OperatorKind::explicit_list: {
      os << "matrices\n";
      for (int i = 0; i < op.m(); ++i) {
        const Matrix a = op.sensing_matrix(i);
        for (int r = 0; r < op.n(); ++r) {
          for (int c = 0; c < op.n(); ++c) os << (c ? " " : "") << fmt17(a(r, c));
          os << "\n";
        }
      }
      break;
    }
  }
}

inline SensingOperator read_operator(std::istream& is) {
  std::string key;
  std::string kind;
  int n = -1;
  int m = -1;
  std::optional<double> eps;
  std::optional<std::uint64_t> seed;
  std::vector<Matrix> mats;
  while (is >> key) {
    if (key == "kind") {
      is >> kind;
    } else if (key == "n") {
      is >> n;
    } else if (key == "m") {
      is >> m;
    } else if (key == "epsilon") {
      double v;
      is >> v;
      eps = v;
    } else if (key == "seed") {
      std::uint64_t v;
      is >> v;
      seed = v;
    } else if (key == "matrices") {
      detail::require(n >= 1 && m >= 1, "operator file: n and m must precede matrices");
      for (int i = 0; i < m; ++i) {
        Matrix a(n, n);
        for (int r = 0; r < n; ++r)
          for (int c = 0; c < n; ++c)
            detail::require(static_cast<bool>(is >> a(r, c)),
                            "operator file: truncated matrix data");
        mats.push_back(std::move(a));
      }
    } else {
      throw InvalidArgument("operator file: unknown key '" + key + "'");
    }
    detail::require(!is.fail(), "operator file: malformed value for '" + key + "'");
  }
  if (kind == "epsilon_mask") {
    detail::require(eps.has_value(), "operator file: epsilon_mask needs epsilon");
    return make_epsilon_operator(n, *eps);
  }
  if (kind == "gaussian") {
    detail::require(seed.has_value(), "operator file: gaussian needs seed");
    return make_gaussian_operator(n, m, *seed);
  }
  if (kind == "explicit") {
    detail::require(static_cast<int>(mats.size()) == m && m >= 1,
                    "operator file: explicit operator needs m matrices");
    return SensingOperator::from_matrices(mats);
  }
  throw InvalidArgument("operator file: unknown kind '" + kind + "'");
}

inline void save_operator(const std::string& path, const SensingOperator& op) {
  std::ofstream os(path);
  detail::require(static_cast<bool>(os), "cannot open '" + path + "' for writing");
  write_operator(os, op);
}

inline SensingOperator load_operator(const std::string& path) {
  std::ifstream is(path);
  detail::require(static_cast<bool>(is), "cannot open '" + path + "'");
  return read_operator(is);
}

}  // namespace msense
