#pragma once

// NIPALS partial least squares (PLS2): column-centered X and Y blocks,
// components extracted by alternating projections, X-block deflation only.
// Prediction applies the pooled regression coefficients and re-adds the Y
// means. For classification (PLS-DA) the targets are one-hot rows and the
// predicted class is the argmax of the continuous prediction.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "mixsig/errors.hpp"
#include "mixsig/linalg.hpp"
#include "mixsig/rng.hpp"

namespace mixsig {

struct PlsModel {
  int n_components = 0;
  Matrix x_weights;     // M x k
  Matrix x_loadings;    // M x k
  Matrix y_loadings;    // C x k
  Matrix x_scores;      // N x k, mutually orthogonal
  Matrix coefficients;  // M x C, centered X to centered Y
  Vector x_mean, y_mean;
  Vector x_scale, y_scale;  // kept at one: no autoscaling
};

inline PlsModel pls_fit(const Matrix& x, const Matrix& y, int k) {
  const Eigen::Index n = x.rows(), m = x.cols(), c = y.cols();
  if (y.rows() != n) throw DimensionMismatch("pls_fit: X and Y row counts differ");
  if (k < 1 || k > std::min<Eigen::Index>(n - 1, m))
    throw Error("pls_fit: component count must lie in [1, min(N-1, M)]");

  PlsModel mod;
  mod.n_components = k;
  mod.x_mean = x.colwise().mean().transpose();
  mod.y_mean = y.colwise().mean().transpose();
  mod.x_scale = Vector::Ones(m);
  mod.y_scale = Vector::Ones(c);
  Matrix xd = x.rowwise() - mod.x_mean.transpose();
  const Matrix yd = y.rowwise() - mod.y_mean.transpose();
  mod.x_weights.resize(m, k);
  mod.x_loadings.resize(m, k);
  mod.y_loadings.resize(c, k);
  mod.x_scores.resize(n, k);

  // Y is never deflated, so every component starts from its strongest column
  Eigen::Index start = 0;
  const Vector ynorms = yd.colwise().squaredNorm().transpose();
  ynorms.maxCoeff(&start);
  if (std::sqrt(ynorms[start]) < 1e-12)
    throw DegenerateDeflation("pls_fit: Y block has no variation");

  for (int comp = 0; comp < k; ++comp) {
    Vector u = yd.col(start);
    Vector w(m), t(n), q(c);
    Vector w_prev = Vector::Zero(m);
    for (int it = 0;; ++it) {
      if (it > 500) throw ConvergenceFailure("pls_fit: inner iteration did not settle");
      w = xd.transpose() * u;
      const double wn = w.norm();
      if (wn < 1e-12)
        throw DegenerateDeflation("pls_fit: deflated X block has no remaining variation");
      w /= wn;
      t = xd * w;
      if (t.norm() < 1e-12) throw DegenerateDeflation("pls_fit: score norm underflowed");
      q = yd.transpose() * t / t.squaredNorm();
      if ((w - w_prev).norm() <= 1e-12) break;
      w_prev = w;
      const double qn = q.squaredNorm();
      if (qn < 1e-24) throw DegenerateDeflation("pls_fit: Y loadings vanished");
      u = yd * q / qn;
    }
    const Vector p = xd.transpose() * t / t.squaredNorm();
    xd -= t * p.transpose();
    mod.x_weights.col(comp) = w;
    mod.x_scores.col(comp) = t;
    mod.x_loadings.col(comp) = p;
    mod.y_loadings.col(comp) = q;
  }

  // B = W (P^T W)^{-1} Q^T
  const Matrix ptw = mod.x_loadings.transpose() * mod.x_weights;
  mod.coefficients = mod.x_weights * ptw.partialPivLu().solve(mod.y_loadings.transpose());
  return mod;
}

inline Matrix pls_predict(const PlsModel& mod, const Matrix& x) {
  if (x.cols() != mod.x_mean.size())
    throw DimensionMismatch("pls_predict: column count does not match the fitted model");
  return ((x.rowwise() - mod.x_mean.transpose()) * mod.coefficients).rowwise() +
         mod.y_mean.transpose();
}

// ties go to the lowest class index
inline Eigen::VectorXi pls_argmax(const Matrix& yhat) {
  Eigen::VectorXi cls(yhat.rows());
  for (Eigen::Index i = 0; i < yhat.rows(); ++i) {
    Eigen::Index best = 0;
    yhat.row(i).maxCoeff(&best);
    cls[i] = static_cast<int>(best);
  }
  return cls;
}

// Picks the component count in [1, kmax] with the lowest mean k-fold CV squared
// error. Improvements below 1e-9 (relative to the current best) count as ties
// and ties keep the smaller k, so noiseless data selects the true rank instead
// of chasing fp dust. Fold assignment shuffles row indices with the caller's
// stream; a k whose fit degenerates on some fold is skipped.
inline int pls_select_components(const Matrix& x, const Matrix& y, int folds, int kmax,
                                 RngStream& rng) {
  const Eigen::Index n = x.rows(), m = x.cols(), c = y.cols();
  if (folds < 2) throw Error("pls_select_components: need at least two folds");
  if (static_cast<Eigen::Index>(folds) > n)
    throw Error("pls_select_components: more folds than rows");
  if (kmax < 1) throw Error("pls_select_components: kmax must be positive");

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (Eigen::Index i = n - 1; i > 0; --i)
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[rng.next_below(static_cast<std::uint64_t>(i + 1))]);
  std::vector<int> fold(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> fold_size(static_cast<std::size_t>(folds), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    fold[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] =
        static_cast<int>(i) % folds;
    ++fold_size[static_cast<std::size_t>(i % folds)];
  }
  const Eigen::Index max_fold = *std::max_element(fold_size.begin(), fold_size.end());
  const int kcap = static_cast<int>(
      std::min<Eigen::Index>(kmax, std::min<Eigen::Index>(n - max_fold - 1, m)));
  if (kcap < 1) throw Error("pls_select_components: not enough rows for one component");

  double best = std::numeric_limits<double>::infinity();
  int best_k = 1;
  for (int k = 1; k <= kcap; ++k) {
    double sse = 0.0;
    long cnt = 0;
    bool feasible = true;
    for (int f = 0; f < folds && feasible; ++f) {
      const Eigen::Index nv = fold_size[static_cast<std::size_t>(f)];
      Matrix xtr(n - nv, m), ytr(n - nv, c), xv(nv, m), yv(nv, c);
      Eigen::Index it = 0, iv = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (fold[static_cast<std::size_t>(i)] == f) {
          xv.row(iv) = x.row(i);
          yv.row(iv++) = y.row(i);
        } else {
          xtr.row(it) = x.row(i);
          ytr.row(it++) = y.row(i);
        }
      }
      try {
        sse += (pls_predict(pls_fit(xtr, ytr, k), xv) - yv).squaredNorm();
        cnt += nv * c;
      } catch (const DegenerateDeflation&) {
        feasible = false;
      }
    }
    if (!feasible || cnt == 0) continue;
    const double mse = sse / static_cast<double>(cnt);
    if (!std::isfinite(best) || mse < best - 1e-9 * std::max(1.0, best)) {
      best = mse;
      best_k = k;
    }
  }
  return best_k;
}

}  // namespace mixsig
