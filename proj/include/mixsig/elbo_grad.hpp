#pragma once

// Reverse-mode gradient of the collapsed bound, hand-derived along the same
// factorization the forward pass uses. Chain: bound -> (xi0, xi1, xi2, K
// block, sigma^2) -> (psi1, psi2, wavelength features, weight moments) ->
// (kernel log-parameters, inducing points, latent posteriors, test weight
// parameters). Adjoints of the jittered factorizations treat the jitter as a
// constant, so value and gradient always describe the same function between
// jitter changes.

#include "mixsig/elbo.hpp"
#include "mixsig/pack.hpp"

namespace mixsig {

struct ElboValueGrad {
  double value = 0.0;
  Vector grad;  // pack layout order
  double jitter_k = 0.0, jitter_b = 0.0;
};

inline ElboValueGrad elbo_with_gradient(const MixtureDataset& data, const ModelState& state,
                                        bool include_test = true) {
  const ElboPieces e = elbo_pieces(data, state, include_test);
  const XiWorkspace& xw = e.xw;
  const bool corr = state.variant == Variant::correlated;
  const Eigen::Index C = xw.C, A = xw.A, Lh = xw.Lh, Ll = xw.Ll, L = xw.L, LC = xw.LC;
  const Eigen::Index M = xw.M, n = xw.rows.n_rows(), n_train = xw.rows.n_train_rows;
  const double s2 = state.params.sigma2();
  const double sf2 = state.params.sigma_f2();
  const double sf4 = sf2 * sf2;
  const double gamma = state.params.gamma();
  const Vector beta = state.params.beta();
  const double mult = corr ? 1.0 : static_cast<double>(M);

  const PackLayout lo = layout_for(state);
  ElboValueGrad out;
  out.value = e.value;
  out.jitter_k = e.f_k.jitter_used;
  out.jitter_b = e.f_b.jitter_used;
  out.grad = Vector::Zero(lo.total);

  const Matrix binv = solve_psd(e.f_b, Matrix(Matrix::Identity(LC, LC)));
  const Matrix kinv = solve_psd(e.f_k, Matrix(Matrix::Identity(L, L)));

  // adjoints of the xi statistics and the gram block
  Matrix aa;
  Vector g_xi1;
  std::vector<Vector> g_xi1j;
  if (corr) {
    aa = e.a * e.a.transpose();
    g_xi1 = e.a / (s2 * s2);
  } else {
    aa = Matrix::Zero(LC, LC);
    g_xi1j.reserve(e.a_j.size());
    for (const auto& aj : e.a_j) {
      aa += aj * aj.transpose();
      g_xi1j.push_back(aj / (s2 * s2));
    }
  }
  const Matrix g_b = -0.5 / (s2 * s2) * aa - 0.5 * mult * binv;
  Matrix g_xi2 = g_b / s2;
  for (Eigen::Index c = 0; c < C; ++c)
    g_xi2.block(c * L, c * L, L, L) += mult / (2.0 * s2) * kinv;
  const double g_xi0 = -mult / (2.0 * s2);

  Matrix g_k = (mult * C / 2.0) * kinv - mult / (2.0 * s2) * (kinv * e.sdiag * kinv);
  for (Eigen::Index c = 0; c < C; ++c) g_k += g_b.block(c * L, c * L, L, L);

  // noise variance, through every explicit sigma^2 occurrence plus B
  {
    double d = -e.quad / (s2 * s2 * s2) - g_b.cwiseProduct(xw.xi.xi2).sum() / (s2 * s2) +
               mult * xw.xi.xi0 / (2.0 * s2 * s2) -
               mult * e.trace_kinv_xi2 / (2.0 * s2 * s2) -
               static_cast<double>(n) * M / (2.0 * s2) + e.ssy / (2.0 * s2 * s2);
    out.grad[lo.off_s2] = s2 * d;
  }

  // signal variance: xi1 ~ sf2, xi2 ~ sf2^2, xi0 ~ sf2, K ~ sf2
  if (sf2 > 0.0) {
    double d = 0.0;
    if (corr)
      d += g_xi1.dot(xw.xi.xi1) / sf2;
    else
      for (Eigen::Index j = 0; j < M; ++j)
        d += g_xi1j[static_cast<std::size_t>(j)].dot(
                 xw.xi.xi1_per_location[static_cast<std::size_t>(j)]) / sf2;
    d += 2.0 * g_xi2.cwiseProduct(xw.xi.xi2).sum() / sf2;
    d += g_xi0 * xw.xi.xi0 / sf2;
    d += g_k.cwiseProduct(e.k_raw).sum() / sf2;
    out.grad[lo.off_sf2] = sf2 * d;
  }

  // gram block -> latent / wavelength factors -> leaves
  const Matrix eh = latent_gram(state.grid.latent_points, beta);
  Matrix g_eh;
  Vector g_beta = Vector::Zero(A);
  double g_gamma = 0.0;
  if (corr) {
    const Matrix elam = wavelength_gram(state.grid.wavelength_points, gamma);
    g_eh = Matrix::Zero(Lh, Lh);
    Matrix g_elam = Matrix::Zero(Ll, Ll);
    for (Eigen::Index p = 0; p < Lh; ++p)
      for (Eigen::Index r = 0; r < Lh; ++r) {
        const auto blk = g_k.block(p * Ll, r * Ll, Ll, Ll);
        g_eh(p, r) = sf2 * blk.cwiseProduct(elam).sum();
        g_elam += (sf2 * eh(p, r)) * blk;
      }
    for (Eigen::Index q = 0; q < Ll; ++q)
      for (Eigen::Index r = 0; r < Ll; ++r) {
        const double g = g_elam(q, r) * elam(q, r);
        const double dl = state.grid.wavelength_points[q] - state.grid.wavelength_points[r];
        g_gamma += g * 0.5 * dl * dl / (gamma * gamma);
        out.grad[lo.off_vl + q] += g * (-dl / gamma);
        out.grad[lo.off_vl + r] += g * (dl / gamma);
      }
  } else {
    g_eh = sf2 * g_k;
  }
  for (Eigen::Index p = 0; p < Lh; ++p)
    for (Eigen::Index r = 0; r < Lh; ++r) {
      const double g = g_eh(p, r) * eh(p, r);
      for (Eigen::Index a = 0; a < A; ++a) {
        const double dv = state.grid.latent_points(p, a) - state.grid.latent_points(r, a);
        g_beta[a] += g * 0.5 * dv * dv / (beta[a] * beta[a]);
        out.grad[lo.off_vh + p * A + a] += g * (-dv / beta[a]);
        out.grad[lo.off_vh + r * A + a] += g * (dv / beta[a]);
      }
    }

  // xi1 path: per-row psi1 and weight-mean adjoints (plus E through YE)
  std::vector<Vector> psib1(static_cast<std::size_t>(n), Vector::Zero(Lh));
  std::vector<Matrix> psib2(static_cast<std::size_t>(n), Matrix::Zero(Lh, Lh));
  std::vector<Vector> mbar(static_cast<std::size_t>(n), Vector::Zero(C));
  std::vector<Matrix> wbar(static_cast<std::size_t>(n), Matrix::Zero(C, C));
  Matrix ebar;
  if (corr) {
    Matrix yebar = Matrix::Zero(n, Ll);
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::size_t si = static_cast<std::size_t>(i);
      Matrix d1 = Matrix::Zero(Lh, Ll);
      for (Eigen::Index c = 0; c < C; ++c) {
        const double w = xw.rows.weights[si].mean[c];
        double acc = 0.0;
        for (Eigen::Index p = 0; p < Lh; ++p) {
          const auto seg = g_xi1.segment(c * L + p * Ll, Ll);
          if (w != 0.0) d1.row(p) += w * seg.transpose();
          acc += xw.psi1[si][p] * seg.dot(xw.YE.row(i));
        }
        mbar[si][c] += sf2 * acc;
      }
      psib1[si] += sf2 * (d1 * xw.YE.row(i).transpose());
      yebar.row(i) = sf2 * (d1.transpose() * xw.psi1[si]).transpose();
    }
    ebar = xw.rows.Y.transpose() * yebar;
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::size_t si = static_cast<std::size_t>(i);
      Matrix g1 = Matrix::Zero(C, Lh);
      for (Eigen::Index j = 0; j < M; ++j) {
        const double y = xw.rows.Y(i, j);
        if (y == 0.0) continue;
        for (Eigen::Index c = 0; c < C; ++c)
          g1.row(c) += y * g_xi1j[static_cast<std::size_t>(j)].segment(c * Lh, Lh).transpose();
      }
      for (Eigen::Index c = 0; c < C; ++c) {
        mbar[si][c] += sf2 * g1.row(c).dot(xw.psi1[si]);
        psib1[si] += sf2 * xw.rows.weights[si].mean[c] * g1.row(c).transpose();
      }
    }
  }

  // xi2 path: T and (correlated) Lam2 adjoints
  Matrix tbar(C * Lh, C * Lh);
  if (corr) {
    Matrix lam2bar = Matrix::Zero(Ll, Ll);
    for (Eigen::Index r = 0; r < C * Lh; ++r)
      for (Eigen::Index c = 0; c < C * Lh; ++c) {
        const auto blk = g_xi2.block(r * Ll, c * Ll, Ll, Ll);
        tbar(r, c) = sf4 * blk.cwiseProduct(xw.Lam2).sum();
        lam2bar += (sf4 * xw.T(r, c)) * blk;
      }
    ebar += xw.E * (lam2bar + lam2bar.transpose());
    for (Eigen::Index j = 0; j < M; ++j)
      for (Eigen::Index q = 0; q < Ll; ++q) {
        const double g = ebar(j, q) * xw.E(j, q);
        const double d = data.lambda[j] - state.grid.wavelength_points[q];
        out.grad[lo.off_vl + q] += g * d / gamma;
        g_gamma += g * 0.5 * d * d / (gamma * gamma);
      }
  } else {
    tbar = sf4 * g_xi2;
  }

  const double xi0_scale = (corr ? static_cast<double>(M) : 1.0) * sf2;
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t si = static_cast<std::size_t>(i);
    const Matrix& w2 = xw.rows.weights[si].second_moment;
    for (Eigen::Index c = 0; c < C; ++c)
      for (Eigen::Index cc = 0; cc < C; ++cc) {
        const auto blk = tbar.block(c * Lh, cc * Lh, Lh, Lh);
        wbar[si](c, cc) += blk.cwiseProduct(xw.psi2[si]).sum();
        psib2[si] += w2(c, cc) * blk;
      }
    wbar[si].diagonal().array() += g_xi0 * xi0_scale;
  }

  // psi leaves and the latent KL, routed to the owning latent slot
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t si = static_cast<std::size_t>(i);
    const LatentPosterior& lp = *xw.rows.latents[i];
    const Vector s = lp.variances();
    const Eigen::Index base = xw.rows.is_test[si] ? lo.test_row(i - n_train) : lo.train_row(i);
    for (Eigen::Index p = 0; p < Lh; ++p) {
      const double g1 = psib1[si][p] * xw.psi1[si][p];
      if (g1 != 0.0)
        for (Eigen::Index a = 0; a < A; ++a) {
          const double d = lp.mean[a] - state.grid.latent_points(p, a);
          const double den = beta[a] + s[a];
          out.grad[base + a] += g1 * (-d / den);
          out.grad[lo.off_vh + p * A + a] += g1 * (d / den);
          out.grad[base + A + a] += s[a] * g1 * (-0.5 / den + 0.5 * d * d / (den * den));
          g_beta[a] += g1 * (0.5 * s[a] / (beta[a] * den) + 0.5 * d * d / (den * den));
        }
      for (Eigen::Index r = 0; r < Lh; ++r) {
        const double g2 = psib2[si](p, r) * xw.psi2[si](p, r);
        if (g2 == 0.0) continue;
        for (Eigen::Index a = 0; a < A; ++a) {
          const double dv = state.grid.latent_points(p, a) - state.grid.latent_points(r, a);
          const double dm =
              lp.mean[a] - 0.5 * (state.grid.latent_points(p, a) + state.grid.latent_points(r, a));
          const double den = beta[a] + 2.0 * s[a];
          out.grad[base + a] += g2 * (-2.0 * dm / den);
          out.grad[base + A + a] += s[a] * g2 * 2.0 * (-1.0 / den + 2.0 * dm * dm / (den * den)) * 0.5;
          g_beta[a] +=
              g2 * (s[a] / (beta[a] * den) + dv * dv / (4.0 * beta[a] * beta[a]) + dm * dm / (den * den));
          out.grad[lo.off_vh + p * A + a] += g2 * (-dv / (2.0 * beta[a]) + dm / den);
          out.grad[lo.off_vh + r * A + a] += g2 * (dv / (2.0 * beta[a]) + dm / den);
        }
      }
    }
    for (Eigen::Index a = 0; a < A; ++a) {
      out.grad[base + a] -= lp.mean[a];
      out.grad[base + A + a] -= 0.5 * (s[a] - 1.0);
    }
  }

  out.grad.segment(lo.off_beta, A) = g_beta.cwiseProduct(beta);
  out.grad[lo.off_gamma] += gamma * g_gamma;

  // test weight posteriors: moment adjoints plus their KL terms
  if (include_test) {
    for (Eigen::Index t = 0; t < lo.n_test; ++t) {
      const std::size_t si = static_cast<std::size_t>(n_train + t);
      out.grad.segment(lo.weight_row(t), C) =
          state.mode == WeightMode::regression
              ? dirichlet_weight_gradient(state.weights_test_dir[static_cast<std::size_t>(t)],
                                          mbar[si], wbar[si])
              : categorical_weight_gradient(state.weights_test_cat[static_cast<std::size_t>(t)],
                                            mbar[si], wbar[si]);
    }
  }

  if (!out.grad.allFinite()) throw NonFiniteElbo("bound gradient is not finite");
  return out;
}

}  // namespace mixsig
