#pragma once

// Variational families over latents and mixture weights: diagonal Gaussians
// q(h_i), Dirichlet / categorical q(r_i), their first and second moments, and
// the KL terms of the bound. Positive parameters live in log-space and
// categorical weights as logits so every optimizer sees an unconstrained
// vector.

#include <cmath>

#include "mixsig/errors.hpp"
#include "mixsig/linalg.hpp"

namespace mixsig {

// ---------------------------------------------------------------------------
// gamma-family special functions
// ---------------------------------------------------------------------------

// Recurrence up to x >= 10, then the Bernoulli asymptotic series. Absolute
// error below 1e-13 on (0, 100].
inline double digamma(double x) {
  if (!(x > 0.0)) throw Error("digamma: argument must be positive");
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  result += std::log(x) - 0.5 * inv;
  result -= inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
  return result;
}

inline double trigamma(double x) {
  if (!(x > 0.0)) throw Error("trigamma: argument must be positive");
  double result = 0.0;
  while (x < 10.0) {
    result += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  result += inv * (1.0 + 0.5 * inv);
  result += inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0))));
  return result;
}

// ---------------------------------------------------------------------------
// posterior families
// ---------------------------------------------------------------------------

struct LatentPosterior {
  Vector mean;     // mu_i
  Vector log_var;  // log of the diagonal covariance

  Vector variances() const { return log_var.array().exp(); }
};

struct DirichletPosterior {
  Vector log_alpha;

  Vector alpha() const { return log_alpha.array().exp(); }
};

struct CategoricalPosterior {
  Vector logits;

  Vector log_probabilities() const {
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    return logits.array() - lse;
  }
  Vector probabilities() const { return log_probabilities().array().exp(); }
};

struct WeightMoments {
  Vector mean;           // E[r]
  Matrix covariance;     // Cov[r]
  Matrix second_moment;  // E[r r^T] = mean mean^T + covariance
};

inline WeightMoments dirichlet_moments(const DirichletPosterior& d) {
  const Vector a = d.alpha();
  const double a0 = a.sum();
  WeightMoments m;
  m.mean = a / a0;
  m.covariance =
      (Matrix(m.mean.asDiagonal()) - m.mean * m.mean.transpose()) / (1.0 + a0);
  m.second_moment = m.mean * m.mean.transpose() + m.covariance;
  return m;
}

inline WeightMoments categorical_moments(const CategoricalPosterior& c) {
  WeightMoments m;
  m.mean = c.probabilities();
  m.second_moment = m.mean.asDiagonal();
  m.covariance = m.second_moment - m.mean * m.mean.transpose();
  return m;
}

// Weight moments for a training row with exact weights r: point mass.
inline WeightMoments exact_weight_moments(const Vector& r) {
  WeightMoments m;
  m.mean = r;
  m.second_moment = r * r.transpose();
  m.covariance = Matrix::Zero(r.size(), r.size());
  return m;
}

// ---------------------------------------------------------------------------
// KL divergences against the model priors
// ---------------------------------------------------------------------------

// KL(N(mu, diag(s)) || N(0, I))
inline double kl_gaussian_diag(const LatentPosterior& lp) {
  const Eigen::ArrayXd s = lp.log_var.array().exp();
  return 0.5 * (s + lp.mean.array().square() - 1.0 - lp.log_var.array()).sum();
}

inline double kl_dirichlet(const DirichletPosterior& d, const Vector& prior_alpha) {
  const Vector a = d.alpha();
  if (a.size() != prior_alpha.size()) throw DimensionMismatch("kl_dirichlet: size mismatch");
  const double a0 = a.sum();
  const double b0 = prior_alpha.sum();
  double kl = std::lgamma(a0) - std::lgamma(b0);
  const double dg0 = digamma(a0);
  for (Eigen::Index c = 0; c < a.size(); ++c) {
    kl -= std::lgamma(a[c]) - std::lgamma(prior_alpha[c]);
    kl += (a[c] - prior_alpha[c]) * (digamma(a[c]) - dg0);
  }
  return kl;
}

// KL against the uniform categorical: sum_c p_c log(C p_c)
inline double kl_categorical(const CategoricalPosterior& c) {
  const Vector lp = c.log_probabilities();
  const double logC = std::log(static_cast<double>(c.logits.size()));
  double kl = 0.0;
  for (Eigen::Index k = 0; k < lp.size(); ++k) kl += std::exp(lp[k]) * (lp[k] + logC);
  return kl;
}

// ---------------------------------------------------------------------------
// weight posterior gradients
// ---------------------------------------------------------------------------

// Both helpers differentiate
//   mean_bar . E[r] + <second_bar, E[r r^T]> - KL(q || prior)
// with respect to the unconstrained parameters, with the KL taken against the
// family's flat prior (Dirichlet(1) / uniform categorical). mean_bar and
// second_bar are the adjoints of the posterior moments in the enclosing bound.

inline Vector dirichlet_weight_gradient(const DirichletPosterior& d, const Vector& mean_bar,
                                        const Matrix& second_bar) {
  const Vector alpha = d.alpha();
  const Eigen::Index C = alpha.size();
  const double a0 = alpha.sum();
  const Vector mu = alpha / a0;
  const double u = a0 / (1.0 + a0);
  const double w = 1.0 / (1.0 + a0);
  const double dsq = 1.0 / ((1.0 + a0) * (1.0 + a0));
  Vector grad(C);
  for (Eigen::Index k = 0; k < C; ++k) {
    Vector dmu(C);
    for (Eigen::Index c = 0; c < C; ++c) dmu[c] = ((c == k ? 1.0 : 0.0) - mu[c]) / a0;
    double g = mean_bar.dot(dmu);
    for (Eigen::Index c = 0; c < C; ++c)
      for (Eigen::Index cc = 0; cc < C; ++cc) {
        double dw = (dmu[c] * mu[cc] + mu[c] * dmu[cc]) * u + mu[c] * mu[cc] * dsq;
        if (c == cc) dw += dmu[c] * w - mu[c] * dsq;
        g += second_bar(c, cc) * dw;
      }
    g -= (alpha[k] - 1.0) * trigamma(alpha[k]) - (a0 - static_cast<double>(C)) * trigamma(a0);
    grad[k] = alpha[k] * g;
  }
  return grad;
}

inline Vector categorical_weight_gradient(const CategoricalPosterior& cp, const Vector& mean_bar,
                                          const Matrix& second_bar) {
  const Vector p = cp.probabilities();
  const Eigen::Index C = p.size();
  Vector tvec(C);
  for (Eigen::Index c = 0; c < C; ++c) tvec[c] = mean_bar[c] + second_bar(c, c);
  const double tdot = tvec.dot(p);
  double klbar = 0.0;
  Vector logpc(C);
  for (Eigen::Index c = 0; c < C; ++c) {
    logpc[c] = p[c] > 0.0 ? std::log(p[c] * static_cast<double>(C)) : 0.0;
    klbar += p[c] * logpc[c];
  }
  Vector grad(C);
  for (Eigen::Index k = 0; k < C; ++k)
    grad[k] = p[k] * (tvec[k] - tdot) - p[k] * (logpc[k] - klbar);
  return grad;
}

}  // namespace mixsig
