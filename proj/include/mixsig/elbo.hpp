#pragma once

// Collapsed evidence lower bound. With B = xi2/sigma^2 + K_VV the correlated
// variant reads
//
//   L = 1/(2 sigma^4) xi1^T B^{-1} xi1 + 1/2 logdet K_VV - 1/2 logdet B
//       - xi0/(2 sigma^2) + tr(K_VV^{-1} xi2)/(2 sigma^2)
//       - (n_rows M / 2) log(2 pi sigma^2) - sum Y^2/(2 sigma^2)
//       + log p(R) - KL(q(R*)||p(R*)) - KL(q(H)||p(H))
//
// and the independent variant replaces the first term by a sum of quadratic
// forms over the per-location xi1_j and multiplies the four xi-block terms by
// M (each measurement location carries its own inducing posterior, hence its
// own KL against the shared prior). n_rows counts every row inside the bound,
// training and test alike.
//
// Collapsing q(U): Sigma_u = K_VV B^{-1} K_VV, mu_u = K_VV B^{-1} xi1/sigma^2.
// Cholesky factorizations pick up the adaptive jitter of cholesky_psd; the
// jittered matrices are used consistently everywhere downstream so values,
// gradients and the collapsed posterior always refer to the same objective.

#include <cmath>
#include <vector>

#include "mixsig/xi.hpp"

namespace mixsig {

struct CollapsedQU {
  Vector mean;  // LC
  Matrix cov;   // LC x LC, symmetric PSD
};

inline CollapsedQU optimal_qu_core(const Matrix& xi2, const Vector& xi1, const Matrix& kvv,
                                   double sigma2) {
  if (xi2.rows() != kvv.rows() || xi1.size() != kvv.rows())
    throw DimensionMismatch("optimal_qu: xi/kvv sizes disagree");
  if (!(sigma2 > 0.0)) throw Error("optimal_qu: sigma2 must be positive");
  Matrix b = xi2 / sigma2 + kvv;
  auto fb = cholesky_psd(b);
  CollapsedQU qu;
  Matrix binv_k = solve_psd(fb, kvv);
  qu.cov = kvv * binv_k;
  qu.cov = 0.5 * (qu.cov + qu.cov.transpose());
  qu.mean = kvv * solve_psd(fb, xi1) / sigma2;
  return qu;
}

inline CollapsedQU optimal_qu(const XiStats& xi, const Matrix& kvv, double sigma2) {
  if (xi.xi1.size() == 0)
    throw Error("optimal_qu: xi1 is empty; pass a per-location xi1 for the independent variant");
  return optimal_qu_core(xi.xi2, xi.xi1, kvv, sigma2);
}

// kvv block with whatever jitter its factorization needed folded in
struct EffectiveKvv {
  Matrix block;  // L x L
  CholeskyFactor chol;
};

inline EffectiveKvv effective_kvv_block(const ModelState& state) {
  EffectiveKvv out;
  out.block = kvv_block(state.grid, state.params, state.variant);
  out.chol = cholesky_psd(out.block);
  if (out.chol.jitter_used > 0.0)
    out.block.diagonal().array() += out.chol.jitter_used;
  return out;
}

// Everything the bound evaluation produces, kept for gradient reuse.
struct ElboPieces {
  XiWorkspace xw;
  Matrix k_raw;        // L x L block before any jitter
  Matrix k_blk;        // effective L x L block
  CholeskyFactor f_k;
  Matrix b;            // effective LC x LC
  CholeskyFactor f_b;
  Vector a;                  // B^{-1} xi1 (correlated)
  std::vector<Vector> a_j;   // per-location solves (independent)
  Matrix sdiag;              // sum of diagonal xi2 blocks
  Matrix kinv_sdiag;         // K_blk^{-1} sdiag
  double quad = 0.0;         // xi1^T B^{-1} xi1, or the sum over locations
  double trace_kinv_xi2 = 0.0;
  double logdet_k_block = 0.0, logdet_b = 0.0;
  double ssy = 0.0, kl_h = 0.0, kl_r = 0.0, log_p_r = 0.0;
  double value = 0.0;
};

inline ElboPieces elbo_pieces(const MixtureDataset& data, const ModelState& state,
                              bool include_test = true) {
  ElboPieces e;
  e.xw = xi_workspace(data, state, include_test);
  const auto& xi = e.xw.xi;
  const double s2 = state.params.sigma2();
  const Eigen::Index C = e.xw.C, L = e.xw.L, LC = e.xw.LC;

  e.k_raw = kvv_block(state.grid, state.params, state.variant);
  e.k_blk = e.k_raw;
  e.f_k = cholesky_psd(e.k_blk);
  if (e.f_k.jitter_used > 0.0) e.k_blk.diagonal().array() += e.f_k.jitter_used;
  e.logdet_k_block = logdet_psd(e.f_k);

  e.b = xi.xi2 / s2;
  for (Eigen::Index c = 0; c < C; ++c) e.b.block(c * L, c * L, L, L) += e.k_blk;
  e.f_b = cholesky_psd(e.b);
  if (e.f_b.jitter_used > 0.0) e.b.diagonal().array() += e.f_b.jitter_used;
  e.logdet_b = logdet_psd(e.f_b);

  e.sdiag = Matrix::Zero(L, L);
  for (Eigen::Index c = 0; c < C; ++c) e.sdiag += xi.xi2.block(c * L, c * L, L, L);
  e.kinv_sdiag = solve_psd(e.f_k, e.sdiag);
  e.trace_kinv_xi2 = e.kinv_sdiag.trace();

  const double M = static_cast<double>(e.xw.M);
  if (state.variant == Variant::correlated) {
    e.a = solve_psd(e.f_b, xi.xi1);
    e.quad = xi.xi1.dot(e.a);
  } else {
    e.a_j.reserve(e.xw.M);
    e.quad = 0.0;
    for (const auto& xi1j : xi.xi1_per_location) {
      e.a_j.push_back(solve_psd(e.f_b, xi1j));
      e.quad += xi1j.dot(e.a_j.back());
    }
  }

  e.ssy = e.xw.rows.Y.squaredNorm();
  for (Eigen::Index i = 0; i < e.xw.rows.n_rows(); ++i)
    e.kl_h += kl_gaussian_diag(*e.xw.rows.latents[i]);
  if (include_test) {
    if (state.mode == WeightMode::regression)
      for (const auto& d : state.weights_test_dir) e.kl_r += kl_dirichlet(d, state.prior_alpha);
    else
      for (const auto& c : state.weights_test_cat) e.kl_r += kl_categorical(c);
  }
  const double n_train = static_cast<double>(data.n_train());
  e.log_p_r = state.mode == WeightMode::regression
                  ? n_train * std::lgamma(static_cast<double>(C))
                  : -n_train * std::log(static_cast<double>(C));

  const double n_rows = static_cast<double>(e.xw.rows.n_rows());
  const double block_terms = 0.5 * C * e.logdet_k_block - 0.5 * e.logdet_b -
                             xi.xi0 / (2.0 * s2) + e.trace_kinv_xi2 / (2.0 * s2);
  const double mult = state.variant == Variant::correlated ? 1.0 : M;
  e.value = 0.5 * e.quad / (s2 * s2) + mult * block_terms -
            0.5 * n_rows * M * std::log(2.0 * M_PI * s2) - e.ssy / (2.0 * s2) + e.log_p_r -
            e.kl_r - e.kl_h;
  if (!std::isfinite(e.value)) throw NonFiniteElbo("collapsed bound is not finite");
  (void)LC;
  return e;
}

inline double elbo(const ModelState& state, const MixtureDataset& data, bool include_test = true) {
  return elbo_pieces(data, state, include_test).value;
}

// Collapsed q(U) consistent with the jittered factorizations of the bound.
inline CollapsedQU collapsed_qu_from_pieces(const ElboPieces& e, const ModelState& state) {
  const Eigen::Index C = e.xw.C, L = e.xw.L;
  Matrix kvv = Matrix::Zero(C * L, C * L);
  for (Eigen::Index c = 0; c < C; ++c) kvv.block(c * L, c * L, L, L) = e.k_blk;
  const double s2 = state.params.sigma2();
  CollapsedQU qu;
  Matrix binv_k = solve_psd(e.f_b, kvv);
  qu.cov = kvv * binv_k;
  qu.cov = 0.5 * (qu.cov + qu.cov.transpose());
  if (state.variant == Variant::correlated) {
    qu.mean = kvv * e.a / s2;
  } else {
    qu.mean = Vector::Zero(C * L);  // per-location means live in qu_means_per_location
  }
  return qu;
}

inline std::vector<Vector> qu_means_per_location(const ElboPieces& e, const ModelState& state) {
  const Eigen::Index C = e.xw.C, L = e.xw.L;
  Matrix kvv = Matrix::Zero(C * L, C * L);
  for (Eigen::Index c = 0; c < C; ++c) kvv.block(c * L, c * L, L, L) = e.k_blk;
  const double s2 = state.params.sigma2();
  std::vector<Vector> means;
  means.reserve(e.a_j.size());
  for (const auto& aj : e.a_j) means.push_back(kvv * aj / s2);
  return means;
}

// ---------------------------------------------------------------------------
// predictions
// ---------------------------------------------------------------------------

struct PureQuery {
  Vector h;
  double lambda = 0.0;
};

struct PurePosterior {
  Vector mean;
  Vector variance;        // clamped at zero
  double max_clamp = 0.0; // largest negative variance removed by the clamp
};

inline PurePosterior predict_pure(const ModelState& state, const CollapsedQU& qu,
                                  const std::vector<PureQuery>& queries, Eigen::Index component) {
  const Eigen::Index L = state.grid.size(state.variant);
  const Eigen::Index C = state.n_components();
  if (qu.mean.size() != L * C || component < 0 || component >= C)
    throw DimensionMismatch("predict_pure: posterior size or component index invalid");
  auto ek = effective_kvv_block(state);
  PurePosterior out;
  out.mean.resize(queries.size());
  out.variance.resize(queries.size());
  const double sf2 = state.params.sigma_f2();
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const Vector kstar =
        kernel_cross_block(queries[qi].h, queries[qi].lambda, state.grid, state.params,
                           state.variant);
    const Vector w = solve_psd(ek.chol, kstar);
    out.mean[qi] = w.dot(qu.mean.segment(component * L, L));
    double var = sf2 - w.dot(kstar) +
                 w.dot(qu.cov.block(component * L, component * L, L, L) * w);
    if (var < 0.0) {
      out.max_clamp = std::max(out.max_clamp, -var);
      var = 0.0;
    }
    out.variance[qi] = var;
  }
  return out;
}

struct WeightPrediction {
  Vector mean;
  Matrix covariance;
};

inline std::vector<WeightPrediction> predict_weights(const ModelState& state) {
  std::vector<WeightPrediction> out;
  const Eigen::Index nt = state.mode == WeightMode::regression
                              ? static_cast<Eigen::Index>(state.weights_test_dir.size())
                              : static_cast<Eigen::Index>(state.weights_test_cat.size());
  out.reserve(nt);
  for (Eigen::Index i = 0; i < nt; ++i) {
    const WeightMoments m = state.mode == WeightMode::regression
                                ? dirichlet_moments(state.weights_test_dir[i])
                                : categorical_moments(state.weights_test_cat[i]);
    out.push_back({m.mean, m.covariance});
  }
  return out;
}

}  // namespace mixsig
