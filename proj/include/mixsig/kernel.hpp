#pragma once

// Shared ARD squared-exponential kernel over (latent, wavelength) pairs and
// its matrices over the inducing grid. beta and gamma hold squared
// lengthscales: the quadratic forms divide by them directly. The correlated
// variant uses the product grid (latent x wavelength); the independent variant
// keeps only the latent part and treats each wavelength as its own GP.

#include <cmath>

#include "mixsig/errors.hpp"
#include "mixsig/linalg.hpp"

namespace mixsig {

enum class Variant { correlated, independent };

struct KernelParams {
  double log_sigma_f2 = 0.0;
  Vector log_beta;         // A entries
  double log_gamma = 0.0;  // unused by the independent variant
  double log_sigma2 = 0.0;

  double sigma_f2() const { return std::exp(log_sigma_f2); }
  Vector beta() const { return log_beta.array().exp(); }
  double gamma() const { return std::exp(log_gamma); }
  double sigma2() const { return std::exp(log_sigma2); }
};

struct InducingGrid {
  Matrix latent_points;      // Lh x A
  Vector wavelength_points;  // Ll

  Eigen::Index n_latent() const { return latent_points.rows(); }
  Eigen::Index n_wavelength() const { return wavelength_points.size(); }
  Eigen::Index size(Variant v) const {
    return v == Variant::correlated ? n_latent() * n_wavelength() : n_latent();
  }
};

inline double kernel_eval(const Vector& h1, double l1, const Vector& h2, double l2,
                          const KernelParams& p) {
  if (h1.size() != h2.size() || h1.size() != p.log_beta.size())
    throw DimensionMismatch("kernel_eval: latent dimension mismatch");
  const Vector beta = p.beta();
  double q = 0.0;
  for (Eigen::Index a = 0; a < h1.size(); ++a) {
    const double d = h1[a] - h2[a];
    q += d * d / beta[a];
  }
  const double dl = l1 - l2;
  return p.sigma_f2() * std::exp(-0.5 * q) * std::exp(-0.5 * dl * dl / p.gamma());
}

// exp(-1/2 sum_a (v_p - v_p')^2 / beta_a) over the latent inducing points
inline Matrix latent_gram(const Matrix& points, const Vector& beta) {
  const Eigen::Index L = points.rows();
  Matrix g(L, L);
  for (Eigen::Index p = 0; p < L; ++p) {
    g(p, p) = 1.0;
    for (Eigen::Index q = p + 1; q < L; ++q) {
      double acc = 0.0;
      for (Eigen::Index a = 0; a < points.cols(); ++a) {
        const double d = points(p, a) - points(q, a);
        acc += d * d / beta[a];
      }
      g(p, q) = g(q, p) = std::exp(-0.5 * acc);
    }
  }
  return g;
}

inline Matrix wavelength_gram(const Vector& points, double gamma) {
  const Eigen::Index L = points.size();
  Matrix g(L, L);
  for (Eigen::Index p = 0; p < L; ++p) {
    g(p, p) = 1.0;
    for (Eigen::Index q = p + 1; q < L; ++q) {
      const double d = points[p] - points[q];
      g(p, q) = g(q, p) = std::exp(-0.5 * d * d / gamma);
    }
  }
  return g;
}

// Single shared L x L block of K_VV. Product-grid index order is
// l = p * Ll + q (latent-major), matching the xi statistics.
inline Matrix kvv_block(const InducingGrid& g, const KernelParams& p, Variant v) {
  const Matrix eh = latent_gram(g.latent_points, p.beta());
  if (v == Variant::independent) return p.sigma_f2() * eh;
  const Matrix el = wavelength_gram(g.wavelength_points, p.gamma());
  const Eigen::Index Lh = g.n_latent(), Ll = g.n_wavelength();
  Matrix k(Lh * Ll, Lh * Ll);
  for (Eigen::Index ph = 0; ph < Lh; ++ph)
    for (Eigen::Index qh = 0; qh < Lh; ++qh)
      k.block(ph * Ll, qh * Ll, Ll, Ll) = (p.sigma_f2() * eh(ph, qh)) * el;
  return k;
}

// Full LC x LC block-diagonal matrix (C identical blocks).
inline Matrix kernel_matrix_vv(const InducingGrid& g, const KernelParams& p, Eigen::Index C,
                               Variant v) {
  const Matrix block = kvv_block(g, p, v);
  const Eigen::Index L = block.rows();
  Matrix k = Matrix::Zero(L * C, L * C);
  for (Eigen::Index c = 0; c < C; ++c) k.block(c * L, c * L, L, L) = block;
  return k;
}

// Kernel vector between one query (h, lambda) and the shared inducing block.
inline Vector kernel_cross_block(const Vector& h, double lam, const InducingGrid& g,
                                 const KernelParams& p, Variant v) {
  const Vector beta = p.beta();
  const Eigen::Index Lh = g.n_latent();
  Vector kh(Lh);
  for (Eigen::Index ph = 0; ph < Lh; ++ph) {
    double acc = 0.0;
    for (Eigen::Index a = 0; a < h.size(); ++a) {
      const double d = h[a] - g.latent_points(ph, a);
      acc += d * d / beta[a];
    }
    kh[ph] = std::exp(-0.5 * acc);
  }
  if (v == Variant::independent) return p.sigma_f2() * kh;
  const Eigen::Index Ll = g.n_wavelength();
  Vector out(Lh * Ll);
  for (Eigen::Index ph = 0; ph < Lh; ++ph)
    for (Eigen::Index q = 0; q < Ll; ++q) {
      const double d = lam - g.wavelength_points[q];
      out[ph * Ll + q] = p.sigma_f2() * kh[ph] * std::exp(-0.5 * d * d / p.gamma());
    }
  return out;
}

}  // namespace mixsig
