#pragma once

// Dense symmetric linear algebra used everywhere in the model: Cholesky with an
// escalating-jitter retry ladder, triangular solves, log-determinants, and the
// symmetric eigensolver used for PCA initialization. Double precision only; the
// collapsed bound subtracts large terms and single precision does not survive
// gradient checks.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <utility>

#include "mixsig/errors.hpp"

namespace mixsig {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct CholeskyFactor {
  Matrix lower;             // lower-triangular, strictly positive diagonal
  double jitter_used = 0.0; // diagonal boost that made the factorization succeed
};

inline void check_symmetric(const Matrix& m, double rtol = 1e-10) {
  if (m.rows() != m.cols()) throw NotSymmetric("matrix is not square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > rtol * scale) throw NotSymmetric("matrix is not symmetric within tolerance");
}

// Jitter ladder: plain attempt, then 1e-6..1e-2 times the mean diagonal in
// decade steps. A non-positive mean diagonal (e.g. the all-zero matrix) falls
// back to absolute jitter so degenerate PSD inputs still factor.
inline CholeskyFactor cholesky_psd(const Matrix& m) {
  check_symmetric(m);
  const double diag_mean = m.diagonal().mean();
  const double scale = diag_mean > 0.0 ? diag_mean : 1.0;
  double jitter = 0.0;
  for (int attempt = 0; attempt <= 5; ++attempt) {
    Matrix work = m;
    if (jitter > 0.0) work.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(work);
    if (llt.info() == Eigen::Success) {
      Matrix lower = llt.matrixL();
      if (lower.allFinite() && (lower.diagonal().array() > 0.0).all())
        return {std::move(lower), jitter};
    }
    jitter = attempt == 0 ? 1e-6 * scale : jitter * 10.0;
  }
  throw NotPositiveDefinite("cholesky failed at every jitter level");
}

inline Matrix solve_psd(const CholeskyFactor& f, const Matrix& b) {
  if (f.lower.rows() != b.rows())
    throw DimensionMismatch("solve_psd: factor is " + std::to_string(f.lower.rows()) +
                            " rows, rhs is " + std::to_string(b.rows()));
  Matrix y = f.lower.triangularView<Eigen::Lower>().solve(b);
  return f.lower.triangularView<Eigen::Lower>().adjoint().solve(y);
}

inline Vector solve_psd(const CholeskyFactor& f, const Vector& b) {
  return Vector(solve_psd(f, Matrix(b)));
}

inline double logdet_psd(const CholeskyFactor& f) {
  return 2.0 * f.lower.diagonal().array().log().sum();
}

struct EigenPairs {
  Vector values;  // descending
  Matrix vectors; // columns, orthonormal, sign-fixed
};

// k largest eigenpairs of a symmetric matrix. Each eigenvector is normalized so
// its largest-magnitude entry is positive, which keeps downstream output
// deterministic across runs.
inline EigenPairs top_eigvecs(const Matrix& m, Eigen::Index k) {
  check_symmetric(m);
  if (k < 1 || k > m.rows())
    throw DimensionMismatch("top_eigvecs: k out of range");
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  if (es.info() != Eigen::Success) throw ConvergenceFailure("symmetric eigensolver failed");
  const Eigen::Index n = m.rows();
  EigenPairs out;
  out.values.resize(k);
  out.vectors.resize(n, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    out.values[j] = es.eigenvalues()[n - 1 - j];
    Vector v = es.eigenvectors().col(n - 1 - j);
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v[imax] < 0.0) v = -v;
    out.vectors.col(j) = v;
  }
  return out;
}

}  // namespace mixsig
