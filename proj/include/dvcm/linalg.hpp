#ifndef DVCM_LINALG_HPP
#define DVCM_LINALG_HPP

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

namespace dvcm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raised when a factorization or iteration cannot be completed even after
/// regularization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Diagonal regularization schedule: try the bare matrix, then `start`,
/// `start * factor`, ... up to `cap`.
struct JitterPolicy {
  double start = 1e-10;
  double factor = 10.0;
  double cap = 1e-4;
};

/// Cholesky factor of `A + jitter * scale * I`.
struct JitteredCholesky {
  Eigen::LLT<Matrix> llt;
  double jitter = 0.0;

  double log_det() const {
    const auto& m = llt.matrixLLT();
    return 2.0 * m.diagonal().array().log().sum();
  }

  template <typename Rhs>
  typename Rhs::PlainObject solve(const Eigen::MatrixBase<Rhs>& b) const {
    return llt.solve(b);
  }
};

namespace detail {

inline bool usable(const Eigen::LLT<Matrix>& llt) {
  if (llt.info() != Eigen::Success) return false;
  const auto d = llt.matrixLLT().diagonal();
  return (d.array() > 0.0).all() && d.allFinite();
}

}  // namespace detail

/// Factors a symmetric matrix, adding `jitter * scale` to the diagonal only when
/// the plain factorization fails. The applied jitter (0 if none) is recorded.
inline JitteredCholesky factor_with_jitter(const Matrix& a, const JitterPolicy& policy = {},
                                           double scale = 1.0) {
  if (a.rows() != a.cols()) throw std::invalid_argument("factor_with_jitter: matrix not square");
  JitteredCholesky out;
  out.llt.compute(a);
  if (detail::usable(out.llt)) return out;
  Matrix work = a;
  for (double j = policy.start; j <= policy.cap * (1.0 + 1e-12); j *= policy.factor) {
    work.diagonal() = a.diagonal().array() + j * scale;
    out.llt.compute(work);
    if (detail::usable(out.llt)) {
      out.jitter = j;
      return out;
    }
  }
  throw NumericalError("Cholesky factorization failed at maximum jitter " +
                       std::to_string(policy.cap));
}

/// Symmetric PSD square root and inverse square root via eigendecomposition;
/// eigenvalues are floored at `floor` before taking roots.
struct SymmetricRoots {
  Matrix sqrt;
  Matrix inv_sqrt;
};

inline SymmetricRoots symmetric_roots(const Matrix& s, double floor = 1e-12) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (s + s.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  const Vector lam = es.eigenvalues().cwiseMax(floor);
  const Matrix& v = es.eigenvectors();
  SymmetricRoots r;
  r.sqrt = v * lam.cwiseSqrt().asDiagonal() * v.transpose();
  r.inv_sqrt = v * lam.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
  return r;
}

inline Matrix symmetric_sqrt(const Matrix& s, double floor = 1e-12) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (s + s.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  const Vector lam = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * lam.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

}  // namespace dvcm

#endif  // DVCM_LINALG_HPP
