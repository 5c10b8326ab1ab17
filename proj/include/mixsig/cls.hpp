#pragma once

// Latent-free least-squares baselines: static pure signals with per-wavelength
// Gaussian posteriors q(f_j) = N(mu_j, Sigma_j) over the C components, exact
// training weights, and Dirichlet or categorical test weight posteriors. The
// plain variant puts an independent N(0,1) prior on every signal value; the gp
// variant couples wavelengths through a squared-exponential prior. All
// parameters are optimized jointly with L-BFGS, best of several restarts.

#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

#include "mixsig/optimizers.hpp"
#include "mixsig/training.hpp"

namespace mixsig {

enum class ClsVariant { cls, cls_gp };

// Relative diagonal nugget baked into the gp prior: sigma_f2 * (SE + eps I).
// The wavelength grid heavily oversamples the smoothness scale, so the bare
// gram matrix sits at the factorization edge and the escalating jitter ladder
// would flip levels between line-search trials, making the bound jump around.
// A fixed nugget keeps the surface smooth; it scales with sigma_f2 so the
// log-scale gradient identity stays exact, and it is invisible to the gamma
// gradient because it lives on the diagonal where distances vanish.
inline constexpr double cls_gp_nugget = 1e-6;

struct ClsState {
  ClsVariant variant = ClsVariant::cls;
  WeightMode mode = WeightMode::regression;
  Matrix mu;                 // M x C posterior means of the pure signals
  std::vector<Matrix> chol;  // per wavelength: lower-triangular factor of Sigma_j
  double log_sigma_f2 = 0.0;  // gp variant only
  double log_gamma = 0.0;     // gp variant only
  double log_sigma2 = 0.0;
  Matrix weights_train;  // N x C, exact
  std::vector<DirichletPosterior> weights_test_dir;
  std::vector<CategoricalPosterior> weights_test_cat;
  Vector prior_alpha;

  double sigma2() const { return std::exp(log_sigma2); }
  double sigma_f2() const { return std::exp(log_sigma_f2); }
  double gamma() const { return std::exp(log_gamma); }
  Eigen::Index n_locations() const { return mu.rows(); }
  Eigen::Index n_components() const { return mu.cols(); }
  Matrix covariance(Eigen::Index j) const {
    const Matrix& l = chol[static_cast<std::size_t>(j)];
    return l * l.transpose();
  }
};

struct ClsConfig {
  ClsVariant variant = ClsVariant::cls;
  WeightMode mode = WeightMode::regression;
  int max_iters = 2000;
  double rel_tol = 1e-7;
  int restarts = 5;
  std::uint64_t seed = 0;
  int jobs = 1;
  double sigma_f2_init_lo = 0.5, sigma_f2_init_hi = 1.0;  // gp variant draw
};

// Flat parameter order: log sigma2, (log sigma_f2, log gamma for gp), then per
// wavelength the C mean entries followed by the lower triangle of the Cholesky
// factor (row-major, diagonal stored as log), then per-test-row weight
// parameters.
struct ClsLayout {
  Eigen::Index m = 0, c = 0, n_test = 0;
  bool gp = false;
  Eigen::Index off_s2 = 0, off_sf2 = 0, off_gamma = 0;
  Eigen::Index off_mu = 0, off_chol = 0, off_w = 0, total = 0;

  Eigen::Index tri() const { return c * (c + 1) / 2; }
  Eigen::Index mu_row(Eigen::Index j) const { return off_mu + j * c; }
  Eigen::Index chol_row(Eigen::Index j) const { return off_chol + j * tri(); }
  Eigen::Index weight_row(Eigen::Index t) const { return off_w + t * c; }
};

inline ClsLayout cls_layout(const ClsState& s, Eigen::Index n_test) {
  ClsLayout lo;
  lo.m = s.n_locations();
  lo.c = s.n_components();
  lo.n_test = n_test;
  lo.gp = s.variant == ClsVariant::cls_gp;
  Eigen::Index off = 1;  // log sigma2 at 0
  if (lo.gp) {
    lo.off_sf2 = off++;
    lo.off_gamma = off++;
  }
  lo.off_mu = off;
  off += lo.m * lo.c;
  lo.off_chol = off;
  off += lo.m * lo.tri();
  lo.off_w = off;
  off += lo.n_test * lo.c;
  lo.total = off;
  return lo;
}

inline Vector cls_pack(const ClsState& s, const ClsLayout& lo) {
  Vector x(lo.total);
  x[lo.off_s2] = s.log_sigma2;
  if (lo.gp) {
    x[lo.off_sf2] = s.log_sigma_f2;
    x[lo.off_gamma] = s.log_gamma;
  }
  for (Eigen::Index j = 0; j < lo.m; ++j) {
    x.segment(lo.mu_row(j), lo.c) = s.mu.row(j).transpose();
    const Matrix& l = s.chol[static_cast<std::size_t>(j)];
    Eigen::Index k = lo.chol_row(j);
    for (Eigen::Index r = 0; r < lo.c; ++r)
      for (Eigen::Index c = 0; c <= r; ++c) x[k++] = r == c ? std::log(l(r, r)) : l(r, c);
  }
  for (Eigen::Index t = 0; t < lo.n_test; ++t)
    x.segment(lo.weight_row(t), lo.c) =
        s.mode == WeightMode::regression
            ? s.weights_test_dir[static_cast<std::size_t>(t)].log_alpha
            : s.weights_test_cat[static_cast<std::size_t>(t)].logits;
  return x;
}

inline void cls_unpack(const Vector& x, const ClsLayout& lo, ClsState& s) {
  s.log_sigma2 = x[lo.off_s2];
  if (lo.gp) {
    s.log_sigma_f2 = x[lo.off_sf2];
    s.log_gamma = x[lo.off_gamma];
  }
  for (Eigen::Index j = 0; j < lo.m; ++j) {
    s.mu.row(j) = x.segment(lo.mu_row(j), lo.c).transpose();
    Matrix& l = s.chol[static_cast<std::size_t>(j)];
    Eigen::Index k = lo.chol_row(j);
    for (Eigen::Index r = 0; r < lo.c; ++r)
      for (Eigen::Index c = 0; c <= r; ++c) l(r, c) = r == c ? std::exp(x[k++]) : x[k++];
  }
  for (Eigen::Index t = 0; t < lo.n_test; ++t) {
    if (s.mode == WeightMode::regression)
      s.weights_test_dir[static_cast<std::size_t>(t)].log_alpha =
          x.segment(lo.weight_row(t), lo.c);
    else
      s.weights_test_cat[static_cast<std::size_t>(t)].logits = x.segment(lo.weight_row(t), lo.c);
  }
}

struct ClsEval {
  double value = 0.0;
  Vector grad;          // cls_layout order
  double jitter_k = 0.0;  // diagonal boost used to factor the gp prior
};

// Bound and gradient in one pass:
//   L = <log N(Y | R f, sigma2)> - KL(q(F) || p(F)) - KL(q(R*) || p(R*)) + log p(R)
// with expectations over the weight posteriors and q(F). Only row-sufficient
// statistics enter: b_j = sum_i y_ij E[r_i], SW = sum_i E[r_i r_i^T], and the
// total square sum of Y.
inline ClsEval cls_bound(const MixtureDataset& data, const ClsState& s) {
  const Eigen::Index n = data.n_train(), nt = data.n_test();
  const Eigen::Index m = s.n_locations(), C = s.n_components();
  const Eigen::Index N = n + nt;
  const ClsLayout lo = cls_layout(s, nt);
  const double s2 = s.sigma2();

  Matrix means(N, C);  // row i = E[r_i]
  Matrix sw = Matrix::Zero(C, C);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector r = s.weights_train.row(i).transpose();
    means.row(i) = r.transpose();
    sw += r * r.transpose();
  }
  for (Eigen::Index t = 0; t < nt; ++t) {
    const WeightMoments wm = s.mode == WeightMode::regression
                                 ? dirichlet_moments(s.weights_test_dir[static_cast<std::size_t>(t)])
                                 : categorical_moments(s.weights_test_cat[static_cast<std::size_t>(t)]);
    means.row(n + t) = wm.mean.transpose();
    sw += wm.second_moment;
  }

  Matrix y_all(N, m);
  y_all.topRows(n) = data.Y_train;
  if (nt > 0) y_all.bottomRows(nt) = data.Y_test;
  const double syy = y_all.squaredNorm();
  const Matrix bmat = y_all.transpose() * means;  // M x C, row j = b_j^T

  // per-wavelength covariance pieces
  std::vector<Matrix> sinv(static_cast<std::size_t>(m));
  Vector tr_sigma(m), logdet_sigma(m);
  Matrix sigma_sum = Matrix::Zero(C, C);
  const Matrix eye = Matrix::Identity(C, C);
  for (Eigen::Index j = 0; j < m; ++j) {
    const Matrix& l = s.chol[static_cast<std::size_t>(j)];
    const Matrix sig = l * l.transpose();
    const Matrix linv = l.triangularView<Eigen::Lower>().solve(eye);
    sinv[static_cast<std::size_t>(j)] = linv.transpose() * linv;
    tr_sigma[j] = sig.trace();
    logdet_sigma[j] = 2.0 * l.diagonal().array().log().sum();
    sigma_sum += sig;
  }
  const double tr_sw_sigma = (sw.array() * sigma_sum.array()).sum();

  const double sum_b_mu = (bmat.array() * s.mu.array()).sum();
  const Matrix sw_mu = s.mu * sw;  // M x C, row j = (SW mu_j)^T
  const double sum_quad = (sw_mu.array() * s.mu.array()).sum();
  const double sumsq = syy - 2.0 * sum_b_mu + sum_quad + tr_sw_sigma;

  ClsEval out;
  out.grad = Vector::Zero(lo.total);

  // prior term over q(F) and its mean/covariance adjoints
  double kl_f = 0.0;
  Matrix gmu = (bmat - sw_mu) / s2;  // data part of the mu gradient
  Matrix kinv, kinv_u, k0, d2;
  Vector diag_kinv;
  if (s.variant == ClsVariant::cls) {
    kl_f = 0.5 * (tr_sigma.sum() + s.mu.squaredNorm() -
                  static_cast<double>(m * C) - logdet_sigma.sum());
    gmu -= s.mu;
  } else {
    k0 = s.sigma_f2() * (wavelength_gram(data.lambda, s.gamma()) +
                         cls_gp_nugget * Matrix::Identity(m, m));
    auto f_k = cholesky_psd(k0);
    out.jitter_k = f_k.jitter_used;
    kinv = solve_psd(f_k, Matrix(Matrix::Identity(m, m)));
    diag_kinv = kinv.diagonal();
    kinv_u = solve_psd(f_k, s.mu);
    const double quad = (s.mu.array() * kinv_u.array()).sum();
    kl_f = 0.5 * (diag_kinv.dot(tr_sigma) + quad - static_cast<double>(m * C)) +
           0.5 * static_cast<double>(C) * logdet_psd(f_k) - 0.5 * logdet_sigma.sum();
    gmu -= kinv_u;
    d2.resize(m, m);
    for (Eigen::Index p = 0; p < m; ++p)
      for (Eigen::Index q = 0; q < m; ++q) {
        const double d = data.lambda[p] - data.lambda[q];
        d2(p, q) = d * d;
      }
    const Matrix kbar = 0.5 * (kinv_u * kinv_u.transpose() +
                               kinv * tr_sigma.asDiagonal() * kinv -
                               static_cast<double>(C) * kinv);
    out.grad[lo.off_sf2] = (kbar.array() * k0.array()).sum();
    out.grad[lo.off_gamma] = (kbar.array() * k0.array() * d2.array()).sum() / (2.0 * s.gamma());
  }

  for (Eigen::Index j = 0; j < m; ++j) {
    out.grad.segment(lo.mu_row(j), C) = gmu.row(j).transpose();
    Matrix gsig = -sw / (2.0 * s2);
    const double prior_diag = s.variant == ClsVariant::cls ? 1.0 : diag_kinv[j];
    gsig -= 0.5 * (prior_diag * eye - sinv[static_cast<std::size_t>(j)]);
    const Matrix lbar = 2.0 * gsig * s.chol[static_cast<std::size_t>(j)];
    Eigen::Index k = lo.chol_row(j);
    for (Eigen::Index r = 0; r < C; ++r)
      for (Eigen::Index c = 0; c <= r; ++c) {
        out.grad[k++] = r == c ? lbar(r, c) * s.chol[static_cast<std::size_t>(j)](r, r)
                               : lbar(r, c);
      }
  }

  double kl_r = 0.0;
  if (nt > 0) {
    const Matrix qsum = s.mu.transpose() * s.mu + sigma_sum;  // sum_j E[f_j f_j^T]
    const Matrix wbar = -qsum / (2.0 * s2);
    for (Eigen::Index t = 0; t < nt; ++t) {
      const Vector mbar = s.mu.transpose() * data.Y_test.row(t).transpose() / s2;
      if (s.mode == WeightMode::regression) {
        kl_r += kl_dirichlet(s.weights_test_dir[static_cast<std::size_t>(t)], s.prior_alpha);
        out.grad.segment(lo.weight_row(t), C) = dirichlet_weight_gradient(
            s.weights_test_dir[static_cast<std::size_t>(t)], mbar, wbar);
      } else {
        kl_r += kl_categorical(s.weights_test_cat[static_cast<std::size_t>(t)]);
        out.grad.segment(lo.weight_row(t), C) = categorical_weight_gradient(
            s.weights_test_cat[static_cast<std::size_t>(t)], mbar, wbar);
      }
    }
  }

  const double log_p_r = s.mode == WeightMode::regression
                             ? static_cast<double>(n) * std::lgamma(static_cast<double>(C))
                             : -static_cast<double>(n) * std::log(static_cast<double>(C));

  out.grad[lo.off_s2] = -0.5 * static_cast<double>(N * m) + sumsq / (2.0 * s2);
  out.value = -0.5 * static_cast<double>(N * m) * std::log(2.0 * M_PI * s2) -
              sumsq / (2.0 * s2) - kl_f - kl_r + log_p_r;
  if (!std::isfinite(out.value)) throw NonFiniteElbo("least-squares bound is not finite");
  if (!out.grad.allFinite()) throw NonFiniteElbo("least-squares bound gradient is not finite");
  return out;
}

inline double cls_elbo(const MixtureDataset& data, const ClsState& s) {
  return cls_bound(data, s).value;
}

// Signal means start at the static least-squares fit and weights at their
// priors. The gp variant draws its signal variance and takes the same
// deterministic wavelength lengthscale as the full model; the plain variant
// starts the noise low because the static fit already explains most of the
// variance. Covariances start at their conjugate optimum given the rest of the
// initialization: an identity start fights a smooth oversampled prior with a
// tr(K^-1 Sigma) term in the millions, which stalls the line search on the
// very first step.
inline ClsState cls_init(const MixtureDataset& data, const ClsConfig& cfg, RngStream& rng) {
  ClsState s;
  s.variant = cfg.variant;
  s.mode = cfg.mode;
  const Eigen::Index m = data.n_locations(), c = data.n_components();
  s.prior_alpha = Vector::Ones(c);
  s.mu = least_squares_pure(data.Y_train, data.R_train);
  if (cfg.variant == ClsVariant::cls_gp) {
    s.log_sigma_f2 = std::log(rng.uniform(cfg.sigma_f2_init_lo, cfg.sigma_f2_init_hi));
    const double span = data.lambda.size() > 1
                            ? data.lambda[data.lambda.size() - 1] - data.lambda[0]
                            : 0.0;
    s.log_gamma = span > 0.0 ? 2.0 * std::log(span / 6.0) : 0.0;
    s.log_sigma2 = 0.0;
  } else {
    s.log_sigma2 = std::log(0.01);
  }
  s.weights_train = data.R_train;
  if (cfg.mode == WeightMode::regression)
    s.weights_test_dir.assign(static_cast<std::size_t>(data.n_test()),
                              DirichletPosterior{Vector::Zero(c)});
  else
    s.weights_test_cat.assign(static_cast<std::size_t>(data.n_test()),
                              CategoricalPosterior{Vector::Zero(c)});

  Matrix sw = data.R_train.transpose() * data.R_train;
  for (Eigen::Index t = 0; t < data.n_test(); ++t)
    sw += (cfg.mode == WeightMode::regression
               ? dirichlet_moments(s.weights_test_dir[static_cast<std::size_t>(t)])
               : categorical_moments(s.weights_test_cat[static_cast<std::size_t>(t)]))
              .second_moment;
  const double s2 = s.sigma2();
  Vector prior_prec = Vector::Ones(m);
  if (cfg.variant == ClsVariant::cls_gp) {
    auto f_k = cholesky_psd(Matrix(s.sigma_f2() * (wavelength_gram(data.lambda, s.gamma()) +
                                                   cls_gp_nugget * Matrix::Identity(m, m))));
    prior_prec = solve_psd(f_k, Matrix(Matrix::Identity(m, m))).diagonal();
  }
  s.chol.resize(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j) {
    const Matrix sig = (sw / s2 + prior_prec[j] * Matrix::Identity(c, c)).inverse();
    s.chol[static_cast<std::size_t>(j)] = Eigen::LLT<Matrix>(sig).matrixL();
  }
  return s;
}

struct ClsFitResult {
  ClsState state;
  double final_elbo = 0.0;
  std::vector<TracePoint> trace;
  int restart_index = 0;
  long jitter_events = 0;
  int iters = 0;
  double wall_seconds = 0.0;
  int aborted_restarts = 0;
};

inline ClsFitResult cls_fit(const MixtureDataset& data, const ClsConfig& cfg, RngStream& rng) {
  const auto t0 = std::chrono::steady_clock::now();
  ClsFitResult res;
  res.state = cls_init(data, cfg, rng);
  ClsState& state = res.state;
  const ClsLayout lo = cls_layout(state, data.n_test());

  // non-finite trial points report NaN so the line search backs off; the final
  // strict evaluation below decides whether the run survives
  auto objective = [&](const Vector& x) -> ObjectiveEval {
    cls_unpack(x, lo, state);
    try {
      auto ev = cls_bound(data, state);
      if (ev.jitter_k > 0.0) ++res.jitter_events;
      return {-ev.value, Vector(-ev.grad)};
    } catch (const NonFiniteElbo&) {
    } catch (const NonFiniteStatistic&) {
    } catch (const NotPositiveDefinite&) {
    }
    return {std::numeric_limits<double>::quiet_NaN(), Vector(Vector::Zero(x.size()))};
  };
  auto tracer = [&](int iter, double value, const Vector& x) {
    res.trace.push_back({iter, 1, std::exp(x[lo.off_s2]), -value});
  };

  LbfgsOptions opt;
  opt.max_iters = cfg.max_iters;
  opt.rel_tol = cfg.rel_tol;
  auto r = lbfgs_minimize(objective, cls_pack(state, lo), opt, tracer);
  cls_unpack(r.x, lo, state);
  res.iters = r.iters;
  res.final_elbo = cls_elbo(data, state);
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline ClsFitResult cls_fit_with_restarts(const MixtureDataset& data, const ClsConfig& cfg) {
  int aborted = 0;
  ClsFitResult out = best_of_restarts<ClsFitResult>(
      cfg.restarts, cfg.jobs,
      [&](int r) {
        RngStream rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
        ClsFitResult fr = cls_fit(data, cfg, rng);
        fr.restart_index = r;
        return fr;
      },
      [](const ClsFitResult& fr) { return fr.final_elbo; }, aborted);
  out.aborted_restarts = aborted;
  return out;
}

}  // namespace mixsig
