#pragma once

// The xi sufficient statistics of the collapsed bound: weight-augmented
// expectations of kernel quantities under the latent posteriors.
//
// With the shared SE kernel the expectations factor per row i into a latent
// part (the classic psi integrals over q(h_i)) and a wavelength part (plain
// kernel features, nothing is random in lambda):
//
//   xi0        = M * sf2 * sum_i tr(W_i)                      (correlated)
//   xi1[c,p,q] = sf2 * sum_i w_i[c] * psi1_i[p] * YE_i[q]
//   xi2        = sf4 * kron(T, Lam2),  T = sum_i W_i (x) psi2_i
//
// where w_i / W_i are the first/second weight moments, psi1_i[p] and
// psi2_i[p,p'] are the standard diagonal-Gaussian SE integrals over the latent
// inducing points, e_j[q] = exp(-(lambda_j - v_q)^2 / (2 gamma)),
// YE_i = sum_j y_ij e_j and Lam2 = E^T E. Flattened index order is
// l = (c * Lh + p) * Ll + q. The independent variant drops the wavelength
// factors: xi0 and xi2 lose the M and Lam2 factors and xi1 splits into the
// per-location vectors xi1_per_location[j][c,p] = sf2 sum_i w_i[c] y_ij
// psi1_i[p].

#include <vector>

#include "mixsig/model.hpp"

namespace mixsig {

struct XiStats {
  double xi0 = 0.0;
  Vector xi1;                            // LC (correlated variant)
  Matrix xi2;                            // LC x LC
  std::vector<Vector> xi1_per_location;  // M vectors of length LC (independent variant)
};

// psi1_i over latent inducing points, without the sigma_f^2 factor:
//   prod_a (1 + s_a/beta_a)^(-1/2) * exp(-1/2 sum_a (mu_a - v_pa)^2/(beta_a + s_a))
inline Vector psi1_row(const LatentPosterior& lp, const Matrix& points, const Vector& beta) {
  const Eigen::Index Lh = points.rows(), A = points.cols();
  const Vector s = lp.variances();
  double logdetf = 0.0;
  for (Eigen::Index a = 0; a < A; ++a) logdetf += std::log1p(s[a] / beta[a]);
  Vector out(Lh);
  for (Eigen::Index p = 0; p < Lh; ++p) {
    double q = 0.0;
    for (Eigen::Index a = 0; a < A; ++a) {
      const double d = lp.mean[a] - points(p, a);
      q += d * d / (beta[a] + s[a]);
    }
    out[p] = std::exp(-0.5 * (logdetf + q));
  }
  return out;
}

// psi2_i over latent inducing point pairs, without the sigma_f^4 factor:
//   prod_a (1 + 2 s_a/beta_a)^(-1/2)
//   * exp(-sum_a [ (v_pa - v_p'a)^2/(4 beta_a) + (mu_a - vbar_a)^2/(beta_a + 2 s_a) ])
inline Matrix psi2_row(const LatentPosterior& lp, const Matrix& points, const Vector& beta) {
  const Eigen::Index Lh = points.rows(), A = points.cols();
  const Vector s = lp.variances();
  double logdetf = 0.0;
  for (Eigen::Index a = 0; a < A; ++a) logdetf += std::log1p(2.0 * s[a] / beta[a]);
  Matrix out(Lh, Lh);
  for (Eigen::Index p = 0; p < Lh; ++p)
    for (Eigen::Index r = p; r < Lh; ++r) {
      double q = 0.0;
      for (Eigen::Index a = 0; a < A; ++a) {
        const double dv = points(p, a) - points(r, a);
        const double dm = lp.mean[a] - 0.5 * (points(p, a) + points(r, a));
        q += dv * dv / (4.0 * beta[a]) + dm * dm / (beta[a] + 2.0 * s[a]);
      }
      out(p, r) = out(r, p) = std::exp(-0.5 * logdetf - q);
    }
  return out;
}

// e_j[q] features of the measurement locations against the wavelength grid
inline Matrix wavelength_features(const Vector& lambda, const Vector& grid, double gamma) {
  Matrix e(lambda.size(), grid.size());
  for (Eigen::Index j = 0; j < lambda.size(); ++j)
    for (Eigen::Index q = 0; q < grid.size(); ++q) {
      const double d = lambda[j] - grid[q];
      e(j, q) = std::exp(-0.5 * d * d / gamma);
    }
  return e;
}

// Everything the closed forms (and later their gradients) need, computed once.
struct XiWorkspace {
  Variant variant = Variant::correlated;
  bool include_test = true;
  Eigen::Index C = 0, A = 0, Lh = 0, Ll = 0, L = 0, LC = 0, M = 0;
  RowView rows;
  std::vector<Vector> psi1;  // per row
  std::vector<Matrix> psi2;  // per row
  Matrix E;                  // M x Ll       (correlated)
  Matrix Lam2;               // Ll x Ll      (correlated)
  Matrix YE;                 // n_rows x Ll  (correlated)
  Matrix T;                  // C*Lh x C*Lh
  XiStats xi;
};

inline XiWorkspace xi_workspace(const MixtureDataset& data, const ModelState& state,
                                bool include_test = true) {
  validate_state(state, data);
  XiWorkspace w;
  w.variant = state.variant;
  w.include_test = include_test;
  w.C = state.n_components();
  w.A = state.latent_dim();
  w.Lh = state.grid.n_latent();
  w.Ll = state.grid.n_wavelength();
  w.L = state.grid.size(state.variant);
  w.LC = w.L * w.C;
  w.M = data.n_locations();
  w.rows = collect_rows(data, state, include_test);

  const double sf2 = state.params.sigma_f2();
  const double sf4 = sf2 * sf2;
  const Vector beta = state.params.beta();
  const Eigen::Index n = w.rows.n_rows();

  w.psi1.reserve(n);
  w.psi2.reserve(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w.psi1.push_back(psi1_row(*w.rows.latents[i], state.grid.latent_points, beta));
    w.psi2.push_back(psi2_row(*w.rows.latents[i], state.grid.latent_points, beta));
  }

  double trace_sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) trace_sum += w.rows.weights[i].second_moment.trace();

  w.T = Matrix::Zero(w.C * w.Lh, w.C * w.Lh);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Matrix& W = w.rows.weights[i].second_moment;
    for (Eigen::Index c = 0; c < w.C; ++c)
      for (Eigen::Index cc = 0; cc < w.C; ++cc)
        w.T.block(c * w.Lh, cc * w.Lh, w.Lh, w.Lh) += W(c, cc) * w.psi2[i];
  }

  if (state.variant == Variant::correlated) {
    w.E = wavelength_features(data.lambda, state.grid.wavelength_points, state.params.gamma());
    w.Lam2 = w.E.transpose() * w.E;
    w.YE = w.rows.Y * w.E;

    w.xi.xi0 = static_cast<double>(w.M) * sf2 * trace_sum;
    w.xi.xi1 = Vector::Zero(w.LC);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < w.C; ++c) {
        const double coeff = sf2 * w.rows.weights[i].mean[c];
        if (coeff == 0.0) continue;
        for (Eigen::Index p = 0; p < w.Lh; ++p)
          w.xi.xi1.segment(c * w.L + p * w.Ll, w.Ll) +=
              (coeff * w.psi1[i][p]) * w.YE.row(i).transpose();
      }
    w.xi.xi2.resize(w.LC, w.LC);
    for (Eigen::Index r = 0; r < w.C * w.Lh; ++r)
      for (Eigen::Index cidx = 0; cidx < w.C * w.Lh; ++cidx)
        w.xi.xi2.block(r * w.Ll, cidx * w.Ll, w.Ll, w.Ll) = (sf4 * w.T(r, cidx)) * w.Lam2;
  } else {
    w.xi.xi0 = sf2 * trace_sum;
    w.xi.xi2 = sf4 * w.T;
    w.xi.xi1_per_location.assign(w.M, Vector::Zero(w.LC));
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < w.C; ++c) {
        const double coeff = sf2 * w.rows.weights[i].mean[c];
        if (coeff == 0.0) continue;
        for (Eigen::Index j = 0; j < w.M; ++j)
          w.xi.xi1_per_location[j].segment(c * w.Lh, w.Lh) +=
              (coeff * w.rows.Y(i, j)) * w.psi1[i];
      }
  }

  bool finite = std::isfinite(w.xi.xi0);
  if (w.xi.xi1.size() > 0) finite = finite && w.xi.xi1.allFinite();
  finite = finite && w.xi.xi2.allFinite();
  for (const auto& v : w.xi.xi1_per_location) finite = finite && v.allFinite();
  if (!finite) throw NonFiniteStatistic("xi statistics are not finite");
  return w;
}

inline XiStats xi_closed_form(const MixtureDataset& data, const ModelState& state,
                              bool include_test = true) {
  return xi_workspace(data, state, include_test).xi;
}

// Monte Carlo estimate sampling h_i ~ q(h_i); the weight moments stay exact,
// so agreement checks isolate the latent Gaussian integrals. Per-entry
// standard errors accompany the estimates.
struct XiMonteCarlo {
  XiStats stats;
  XiStats stderrs;  // same shapes; xi0 has zero spread under the SE kernel
};

inline XiMonteCarlo xi_monte_carlo(const MixtureDataset& data, const ModelState& state,
                                   Eigen::Index samples, RngStream& rng,
                                   bool include_test = true) {
  if (samples < 1) throw Error("xi_monte_carlo: need at least one sample");
  validate_state(state, data);
  const RowView rows = collect_rows(data, state, include_test);
  const Eigen::Index n = rows.n_rows();
  const Eigen::Index C = state.n_components();
  const Eigen::Index A = state.latent_dim();
  const Eigen::Index Lh = state.grid.n_latent();
  const Eigen::Index Ll = state.grid.n_wavelength();
  const Eigen::Index M = data.n_locations();
  const bool corr = state.variant == Variant::correlated;
  const Eigen::Index L = corr ? Lh * Ll : Lh;
  const Eigen::Index LC = L * C;
  const double sf2 = state.params.sigma_f2();
  const double sf4 = sf2 * sf2;
  const Vector beta = state.params.beta();

  Matrix E, Lam2, YE;
  if (corr) {
    E = wavelength_features(data.lambda, state.grid.wavelength_points, state.params.gamma());
    Lam2 = E.transpose() * E;
    YE = rows.Y * E;
  }

  double trace_sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) trace_sum += rows.weights[i].second_moment.trace();

  Vector xi1_sum = Vector::Zero(corr ? LC : 0), xi1_sq = xi1_sum;
  Matrix xi2_sum = Matrix::Zero(LC, LC), xi2_sq = xi2_sum;
  std::vector<Vector> xi1j_sum, xi1j_sq;
  if (!corr) {
    xi1j_sum.assign(M, Vector::Zero(LC));
    xi1j_sq.assign(M, Vector::Zero(LC));
  }

  std::vector<Vector> kh(n, Vector(Lh));
  Matrix Tt(C * Lh, C * Lh);
  Vector xi1_t(corr ? LC : 0);
  std::vector<Vector> xi1j_t;
  if (!corr) xi1j_t.assign(M, Vector(LC));
  Matrix xi2_t(LC, LC);

  // Draw order: per sample, rows in order, A normals per row.
  for (Eigen::Index t = 0; t < samples; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector s = rows.latents[i]->variances();
      Vector h(A);
      for (Eigen::Index a = 0; a < A; ++a)
        h[a] = rows.latents[i]->mean[a] + std::sqrt(s[a]) * rng.normal();
      for (Eigen::Index p = 0; p < Lh; ++p) {
        double acc = 0.0;
        for (Eigen::Index a = 0; a < A; ++a) {
          const double d = h[a] - state.grid.latent_points(p, a);
          acc += d * d / beta[a];
        }
        kh[i][p] = std::exp(-0.5 * acc);
      }
    }
    Tt.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      const Matrix outer = kh[i] * kh[i].transpose();
      const Matrix& W = rows.weights[i].second_moment;
      for (Eigen::Index c = 0; c < C; ++c)
        for (Eigen::Index cc = 0; cc < C; ++cc)
          Tt.block(c * Lh, cc * Lh, Lh, Lh) += W(c, cc) * outer;
    }
    if (corr) {
      xi1_t.setZero();
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index c = 0; c < C; ++c) {
          const double coeff = sf2 * rows.weights[i].mean[c];
          for (Eigen::Index p = 0; p < Lh; ++p)
            xi1_t.segment(c * L + p * Ll, Ll) += (coeff * kh[i][p]) * YE.row(i).transpose();
        }
      for (Eigen::Index rr = 0; rr < C * Lh; ++rr)
        for (Eigen::Index cc = 0; cc < C * Lh; ++cc)
          xi2_t.block(rr * Ll, cc * Ll, Ll, Ll) = (sf4 * Tt(rr, cc)) * Lam2;
      xi1_sum += xi1_t;
      xi1_sq += xi1_t.cwiseProduct(xi1_t);
    } else {
      for (Eigen::Index j = 0; j < M; ++j) xi1j_t[j].setZero();
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index c = 0; c < C; ++c) {
          const double coeff = sf2 * rows.weights[i].mean[c];
          for (Eigen::Index j = 0; j < M; ++j)
            xi1j_t[j].segment(c * Lh, Lh) += (coeff * rows.Y(i, j)) * kh[i];
        }
      for (Eigen::Index j = 0; j < M; ++j) {
        xi1j_sum[j] += xi1j_t[j];
        xi1j_sq[j] += xi1j_t[j].cwiseProduct(xi1j_t[j]);
      }
      xi2_t = sf4 * Tt;
    }
    xi2_sum += xi2_t;
    xi2_sq += xi2_t.cwiseProduct(xi2_t);
  }

  const double inv_t = 1.0 / static_cast<double>(samples);
  auto se_of = [&](double sum, double sq) {
    if (samples < 2) return 0.0;
    const double mean = sum * inv_t;
    const double var = std::max(0.0, (sq * inv_t - mean * mean) * samples / (samples - 1.0));
    return std::sqrt(var * inv_t);
  };

  XiMonteCarlo out;
  out.stats.xi0 = corr ? static_cast<double>(M) * sf2 * trace_sum : sf2 * trace_sum;
  out.stderrs.xi0 = 0.0;
  out.stats.xi2 = xi2_sum * inv_t;
  out.stderrs.xi2.resize(LC, LC);
  for (Eigen::Index a = 0; a < LC; ++a)
    for (Eigen::Index b = 0; b < LC; ++b) out.stderrs.xi2(a, b) = se_of(xi2_sum(a, b), xi2_sq(a, b));
  if (corr) {
    out.stats.xi1 = xi1_sum * inv_t;
    out.stderrs.xi1.resize(LC);
    for (Eigen::Index a = 0; a < LC; ++a) out.stderrs.xi1[a] = se_of(xi1_sum[a], xi1_sq[a]);
  } else {
    out.stats.xi1_per_location.resize(M);
    out.stderrs.xi1_per_location.resize(M);
    for (Eigen::Index j = 0; j < M; ++j) {
      out.stats.xi1_per_location[j] = xi1j_sum[j] * inv_t;
      out.stderrs.xi1_per_location[j].resize(LC);
      for (Eigen::Index a = 0; a < LC; ++a)
        out.stderrs.xi1_per_location[j][a] = se_of(xi1j_sum[j][a], xi1j_sq[j][a]);
    }
  }
  return out;
}

}  // namespace mixsig
