#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "mixsig/cls.hpp"
#include "mixsig/elbo.hpp"
#include "mixsig/pls.hpp"

namespace {

using mixsig::ClsConfig;
using mixsig::ClsLayout;
using mixsig::ClsState;
using mixsig::ClsVariant;
using mixsig::Matrix;
using mixsig::MixtureDataset;
using mixsig::ModelState;
using mixsig::RngStream;
using mixsig::Vector;
using mixsig::WeightMode;

MixtureDataset random_rows(int n, int nt, int m, int c, std::uint64_t seed, WeightMode mode) {
  RngStream rng(seed);
  MixtureDataset d;
  d.mode = mode;
  d.lambda = Vector::LinSpaced(m, 0.0, 1.0);
  d.R_train.resize(n, c);
  for (int i = 0; i < n; ++i) {
    if (mode == WeightMode::regression) {
      d.R_train.row(i) = rng.dirichlet(Vector::Ones(c)).transpose();
    } else {
      d.R_train.row(i).setZero();
      d.R_train(i, static_cast<Eigen::Index>(rng.next_below(static_cast<std::uint64_t>(c)))) = 1.0;
    }
  }
  d.Y_train.resize(n, m);
  d.Y_test.resize(nt, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) d.Y_train(i, j) = rng.normal();
  for (int i = 0; i < nt; ++i)
    for (int j = 0; j < m; ++j) d.Y_test(i, j) = rng.normal();
  return d;
}

// two smooth bumps sampled on the wavelength grid
Matrix bump_signals(const Vector& lambda, int c) {
  Matrix f(lambda.size(), c);
  for (Eigen::Index j = 0; j < lambda.size(); ++j) {
    f(j, 0) = std::exp(-std::pow(lambda[j] - 0.35, 2) / 0.02);
    if (c > 1) f(j, 1) = std::exp(-std::pow(lambda[j] - 0.65, 2) / 0.03);
    for (int k = 2; k < c; ++k) f(j, k) = std::exp(-std::pow(lambda[j] - 0.5, 2) / (0.01 * (k + 1)));
  }
  return f;
}

// perturbed state so no gradient entry sits at a symmetric point
ClsState roughened_state(const MixtureDataset& d, ClsVariant variant, std::uint64_t seed) {
  ClsConfig cfg;
  cfg.variant = variant;
  cfg.mode = d.mode;
  RngStream rng(5);
  ClsState s = mixsig::cls_init(d, cfg, rng);
  RngStream r2(seed);
  const Eigen::Index m = s.n_locations(), c = s.n_components();
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index a = 0; a < c; ++a) {
      s.mu(j, a) += 0.3 * r2.normal();
      for (Eigen::Index b = 0; b <= a; ++b)
        s.chol[static_cast<std::size_t>(j)](a, b) =
            a == b ? std::exp(0.2 * r2.normal()) : 0.2 * r2.normal();
    }
  for (auto& dp : s.weights_test_dir)
    for (Eigen::Index k = 0; k < c; ++k) dp.log_alpha[k] = 0.4 * r2.normal();
  for (auto& cp : s.weights_test_cat)
    for (Eigen::Index k = 0; k < c; ++k) cp.logits[k] = 0.4 * r2.normal();
  s.log_sigma2 = std::log(0.7);
  return s;
}

TEST(ClsBound, GradientMatchesFiniteDifferences) {
  for (ClsVariant variant : {ClsVariant::cls, ClsVariant::cls_gp}) {
    for (WeightMode mode : {WeightMode::regression, WeightMode::classification}) {
      auto d = random_rows(7, 3, 6, 3, 11 + static_cast<int>(mode), mode);
      ClsState s = roughened_state(d, variant, 77);
      const ClsLayout lo = mixsig::cls_layout(s, d.n_test());
      const Vector x = mixsig::cls_pack(s, lo);
      const auto ev = mixsig::cls_bound(d, s);
      for (Eigen::Index i = 0; i < lo.total; ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
        Vector xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        ClsState sp = s, sm = s;
        mixsig::cls_unpack(xp, lo, sp);
        mixsig::cls_unpack(xm, lo, sm);
        const double fd = (mixsig::cls_bound(d, sp).value - mixsig::cls_bound(d, sm).value) /
                          (2.0 * h);
        EXPECT_NEAR(ev.grad[i], fd, 1e-6 * std::max(1.0, std::abs(fd)))
            << "coordinate " << i << " variant " << static_cast<int>(variant);
      }
    }
  }
}

TEST(ClsBound, CovarianceInitIsStationaryForBothVariants) {
  auto d = random_rows(9, 3, 7, 2, 29, WeightMode::regression);
  for (ClsVariant variant : {ClsVariant::cls, ClsVariant::cls_gp}) {
    ClsConfig cfg;
    cfg.variant = variant;
    RngStream rng(3);
    ClsState s = mixsig::cls_init(d, cfg, rng);
    const ClsLayout lo = mixsig::cls_layout(s, d.n_test());
    const auto ev = mixsig::cls_bound(d, s);
    const double scale = ev.grad.cwiseAbs().maxCoeff();
    for (Eigen::Index j = 0; j < lo.m; ++j)
      for (Eigen::Index k = 0; k < lo.tri(); ++k)
        EXPECT_NEAR(ev.grad[lo.chol_row(j) + k], 0.0, 1e-9 * std::max(1.0, scale));
  }
}

// With no latent dimensions, one inducing point, and unit signal variance, the
// independent-wavelength model's pure signals are static draws from N(0,1), so
// its collapsed bound must agree with this baseline evaluated at the
// conjugate-optimal q(F) for the same noise and weight posteriors.
TEST(ClsBound, MatchesLatentFreeCollapsedModel) {
  for (int inst = 0; inst < 5; ++inst) {
    auto d = random_rows(6 + inst, 2 + inst % 3, 5 + inst, 2 + inst % 3, 100 + inst,
                         WeightMode::regression);
    const Eigen::Index C = d.n_components(), m = d.n_locations();
    RngStream rr(500 + inst);
    const double s2 = std::exp(0.5 * rr.normal());

    ClsConfig cfg;
    RngStream ri(1);
    ClsState cs = mixsig::cls_init(d, cfg, ri);
    cs.log_sigma2 = std::log(s2);
    for (auto& dp : cs.weights_test_dir)
      for (Eigen::Index k = 0; k < C; ++k) dp.log_alpha[k] = 0.3 * rr.normal();

    Matrix means(d.n_train() + d.n_test(), C);
    Matrix sw = Matrix::Zero(C, C);
    for (Eigen::Index i = 0; i < d.n_train(); ++i) {
      const Vector r = cs.weights_train.row(i).transpose();
      means.row(i) = r.transpose();
      sw += r * r.transpose();
    }
    for (Eigen::Index t = 0; t < d.n_test(); ++t) {
      const auto wm = mixsig::dirichlet_moments(cs.weights_test_dir[static_cast<std::size_t>(t)]);
      means.row(d.n_train() + t) = wm.mean.transpose();
      sw += wm.second_moment;
    }
    Matrix y_all(d.n_train() + d.n_test(), m);
    y_all.topRows(d.n_train()) = d.Y_train;
    y_all.bottomRows(d.n_test()) = d.Y_test;
    const Matrix bmat = y_all.transpose() * means;
    const Matrix sig_star = Matrix(sw / s2 + Matrix::Identity(C, C)).inverse();
    const Matrix l_star = Eigen::LLT<Matrix>(sig_star).matrixL();
    for (Eigen::Index j = 0; j < m; ++j) {
      cs.mu.row(j) = (sig_star * bmat.row(j).transpose() / s2).transpose();
      cs.chol[static_cast<std::size_t>(j)] = l_star;
    }
    const double cls_val = mixsig::cls_elbo(d, cs);

    ModelState ws;
    ws.variant = mixsig::Variant::independent;
    ws.mode = WeightMode::regression;
    ws.prior_alpha = Vector::Ones(C);
    ws.params.log_sigma_f2 = 0.0;
    ws.params.log_beta = Vector(0);
    ws.params.log_gamma = 0.0;
    ws.params.log_sigma2 = std::log(s2);
    ws.grid.latent_points = Matrix(1, 0);
    ws.grid.wavelength_points = Vector::Constant(1, 0.0);
    ws.latents_train.resize(static_cast<std::size_t>(d.n_train()));
    for (auto& lp : ws.latents_train) {
      lp.mean = Vector(0);
      lp.log_var = Vector(0);
    }
    ws.latents_test.resize(static_cast<std::size_t>(d.n_test()));
    for (auto& lp : ws.latents_test) {
      lp.mean = Vector(0);
      lp.log_var = Vector(0);
    }
    ws.weights_train = d.R_train;
    ws.weights_test_dir = cs.weights_test_dir;
    const double ws_val = mixsig::elbo(ws, d, true);

    EXPECT_NEAR(cls_val, ws_val, 1e-6 * std::max(1.0, std::abs(ws_val))) << "instance " << inst;
  }
}

TEST(ClsFit, RecoversStaticSignalsOnNoiselessData) {
  const int n = 30, m = 20, c = 2;
  RngStream rng(7);
  MixtureDataset d;
  d.lambda = Vector::LinSpaced(m, 0.0, 1.0);
  const Matrix f = bump_signals(d.lambda, c);
  d.R_train.resize(n, c);
  for (int i = 0; i < n; ++i) d.R_train.row(i) = rng.dirichlet(Vector::Ones(c)).transpose();
  d.Y_train = d.R_train * f.transpose();
  d.Y_test.resize(0, m);

  ClsConfig cfg;
  cfg.restarts = 1;
  RngStream fr(mixsig::derive_seed(0, 0));
  const auto res = mixsig::cls_fit(d, cfg, fr);
  EXPECT_LE(res.state.sigma2(), 1e-4);
  EXPECT_LE((res.state.mu - f).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(ClsFit, SingleComponentPosteriorMatchesConjugateClosedForm) {
  const int n = 12, m = 9;
  RngStream rng(3);
  MixtureDataset d;
  d.lambda = Vector::LinSpaced(m, 0.0, 1.0);
  d.R_train = Matrix::Ones(n, 1);
  d.Y_train.resize(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) d.Y_train(i, j) = 0.5 + rng.normal();
  d.Y_test.resize(0, m);

  ClsConfig cfg;
  cfg.restarts = 1;
  cfg.rel_tol = 1e-15;
  cfg.max_iters = 3000;
  RngStream fr(mixsig::derive_seed(0, 0));
  const auto res = mixsig::cls_fit(d, cfg, fr);
  const double s2 = res.state.sigma2();
  for (int j = 0; j < m; ++j) {
    const double mean_target = d.Y_train.col(j).sum() / (n + s2);
    EXPECT_NEAR(res.state.mu(j, 0), mean_target, 1e-8);
    const double var = res.state.covariance(j)(0, 0);
    EXPECT_NEAR(var, s2 / (n + s2), 1e-8);
  }
}

MixtureDataset smooth_mixture(int n, int nt, int m, int c, double noise, std::uint64_t seed) {
  RngStream rng(seed);
  MixtureDataset d;
  d.lambda = Vector::LinSpaced(m, 0.0, 1.0);
  const Matrix f = bump_signals(d.lambda, c);
  d.R_train.resize(n, c);
  for (int i = 0; i < n; ++i) d.R_train.row(i) = rng.dirichlet(Vector::Ones(c)).transpose();
  d.Y_train = d.R_train * f.transpose();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) d.Y_train(i, j) += noise * rng.normal();
  Matrix rtest(nt, c);
  for (int i = 0; i < nt; ++i) rtest.row(i) = rng.dirichlet(Vector::Ones(c)).transpose();
  d.Y_test = rtest * f.transpose();
  for (int i = 0; i < nt; ++i)
    for (int j = 0; j < m; ++j) d.Y_test(i, j) += noise * rng.normal();
  d.R_test_truth = rtest;
  return d;
}

double dirichlet_mean_mse(const std::vector<mixsig::DirichletPosterior>& post, const Matrix& truth) {
  double mse = 0.0;
  for (Eigen::Index t = 0; t < truth.rows(); ++t) {
    const Vector a = post[static_cast<std::size_t>(t)].alpha();
    mse += (Vector(a / a.sum()) - truth.row(t).transpose()).squaredNorm();
  }
  return mse / static_cast<double>(truth.size());
}

TEST(ClsFit, SmoothnessPriorImprovesBoundOnSmoothData) {
  const auto d = smooth_mixture(16, 4, 25, 2, 0.05, 21);
  ClsConfig plain;
  plain.restarts = 1;
  ClsConfig gp;
  gp.variant = ClsVariant::cls_gp;
  gp.restarts = 2;
  gp.jobs = 2;
  const auto plain_res = mixsig::cls_fit_with_restarts(d, plain);
  const auto gp_res = mixsig::cls_fit_with_restarts(d, gp);
  EXPECT_GT(gp_res.final_elbo, plain_res.final_elbo);
  // both should land near the injected noise level
  EXPECT_NEAR(gp_res.state.sigma2(), 0.0025, 0.002);
}

TEST(ClsFit, LatentModelBeatsStaticBaselineOnLatentVaryingData) {
  mixsig::ToyConfig tc;
  tc.n_train = 20;
  tc.n_test = 20;
  tc.m = 30;
  tc.noise_sigma = 0.01;
  tc.seed = 5;
  const auto d = mixsig::generate_toy(tc);

  ClsConfig ccfg;
  ccfg.restarts = 1;
  const auto cres = mixsig::cls_fit_with_restarts(d, ccfg);
  const double cls_mse = dirichlet_mean_mse(cres.state.weights_test_dir, *d.R_test_truth);

  mixsig::FitConfig wcfg;
  wcfg.latent_dim = 1;
  wcfg.n_inducing_latent = 5;
  wcfg.n_inducing_wavelength = 10;
  wcfg.stage1_steps = 150;
  wcfg.anneal_steps = 10;
  wcfg.stage3_max_iters = 400;
  wcfg.restarts = 2;
  wcfg.jobs = 2;
  wcfg.seed = 0;
  const auto wres = mixsig::fit_with_restarts(d, wcfg);
  const double ws_mse = dirichlet_mean_mse(wres.state.weights_test_dir, *d.R_test_truth);

  EXPECT_LT(ws_mse, cls_mse);
}

TEST(ClsFit, TraceEndsAtFinalBoundAndRunsAreDeterministic) {
  const auto d = smooth_mixture(10, 3, 12, 2, 0.05, 9);
  ClsConfig cfg;
  cfg.variant = ClsVariant::cls_gp;  // exercises the drawn initialization
  cfg.restarts = 3;
  cfg.max_iters = 200;
  const auto a = mixsig::cls_fit_with_restarts(d, cfg);
  ClsConfig par = cfg;
  par.jobs = 3;
  const auto b = mixsig::cls_fit_with_restarts(d, par);

  ASSERT_FALSE(a.trace.empty());
  EXPECT_EQ(a.trace.front().iteration, 0);
  EXPECT_EQ(a.trace.back().elbo, a.final_elbo);
  EXPECT_EQ(a.final_elbo, b.final_elbo);
  EXPECT_EQ(a.restart_index, b.restart_index);
  EXPECT_EQ(0, std::memcmp(a.state.mu.data(), b.state.mu.data(),
                           sizeof(double) * static_cast<std::size_t>(a.state.mu.size())));
}

TEST(ClsFit, AllRestartsAbortingRaises) {
  auto d = random_rows(6, 2, 5, 2, 4, WeightMode::regression);
  d.Y_train(0, 0) = std::numeric_limits<double>::quiet_NaN();
  ClsConfig cfg;
  cfg.restarts = 2;
  EXPECT_THROW(mixsig::cls_fit_with_restarts(d, cfg), mixsig::NoSuccessfulRestart);
}

// ---------------------------------------------------------------------------
// partial least squares
// ---------------------------------------------------------------------------

Matrix random_matrix(int n, int m, RngStream& rng) {
  Matrix x(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) x(i, j) = rng.normal();
  return x;
}

TEST(Pls, ExactOnFullRankLinearDataWithOrthogonalScores) {
  RngStream rng(9);
  const int n = 20, m = 6, c = 2, rank = 3;
  const Matrix x = random_matrix(n, rank, rng) * random_matrix(rank, m, rng);
  const Matrix xc = x.rowwise() - x.colwise().mean();
  const Matrix y = xc * random_matrix(m, c, rng);

  const auto mod = mixsig::pls_fit(x, y, rank);
  EXPECT_LE((mixsig::pls_predict(mod, x) - y).cwiseAbs().maxCoeff(), 1e-8);
  for (int a = 0; a < rank; ++a)
    for (int b = a + 1; b < rank; ++b) {
      const double cosine = std::abs(mod.x_scores.col(a).dot(mod.x_scores.col(b))) /
                            (mod.x_scores.col(a).norm() * mod.x_scores.col(b).norm());
      EXPECT_LE(cosine, 1e-8);
    }
}

TEST(Pls, SingleComponentExhaustsRankOneData) {
  RngStream rng(13);
  const int n = 15, m = 5;
  Vector t(n), p(m);
  for (int i = 0; i < n; ++i) t[i] = rng.normal();
  for (int j = 0; j < m; ++j) p[j] = rng.normal();
  const Matrix x = t * p.transpose();
  const Matrix y = t * Vector::Ones(1).transpose();

  const auto mod = mixsig::pls_fit(x, y, 1);
  const Matrix xc = x.rowwise() - x.colwise().mean();
  EXPECT_LE((xc - mod.x_scores * mod.x_loadings.transpose()).norm(), 1e-10);
  EXPECT_LE((mixsig::pls_predict(mod, x) - y).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Pls, PredictionsInvariantToSampleOrder) {
  RngStream rng(31);
  const int n = 18, m = 7, c = 2;
  const Matrix x = random_matrix(n, m, rng);
  const Matrix y = random_matrix(n, c, rng);
  const Matrix xq = random_matrix(4, m, rng);

  Matrix xp(n, m), yp(n, c);
  for (int i = 0; i < n; ++i) {
    xp.row(i) = x.row((i + 7) % n);
    yp.row(i) = y.row((i + 7) % n);
  }
  const Matrix pred = mixsig::pls_predict(mixsig::pls_fit(x, y, 3), xq);
  const Matrix pred_perm = mixsig::pls_predict(mixsig::pls_fit(xp, yp, 3), xq);
  EXPECT_LE((pred - pred_perm).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Pls, PredictionsInvariantToConstantColumnShift) {
  RngStream rng(41);
  const int n = 16, m = 6, c = 2;
  const Matrix x = random_matrix(n, m, rng);
  const Matrix y = random_matrix(n, c, rng);
  Matrix xq = random_matrix(5, m, rng);

  Matrix xs = x;
  xs.col(2).array() += 37.5;
  Matrix xqs = xq;
  xqs.col(2).array() += 37.5;
  const Matrix pred = mixsig::pls_predict(mixsig::pls_fit(x, y, 3), xq);
  const Matrix pred_shift = mixsig::pls_predict(mixsig::pls_fit(xs, y, 3), xqs);
  EXPECT_LE((pred - pred_shift).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Pls, ClassPredictionsInvariantToAffineTargetRescaling) {
  RngStream rng(23);
  const int n = 24, m = 8, c = 3;
  const Matrix x = random_matrix(n, m, rng);
  Matrix y = Matrix::Zero(n, c);
  for (int i = 0; i < n; ++i) y(i, static_cast<Eigen::Index>(rng.next_below(c))) = 1.0;
  const Matrix xq = random_matrix(6, m, rng);

  const auto base = mixsig::pls_argmax(mixsig::pls_predict(mixsig::pls_fit(x, y, 3), xq));
  const Matrix y_scaled = (2.5 * y.array() - 0.75).matrix();
  const auto scaled =
      mixsig::pls_argmax(mixsig::pls_predict(mixsig::pls_fit(x, y_scaled, 3), xq));
  for (Eigen::Index i = 0; i < base.size(); ++i) EXPECT_EQ(base[i], scaled[i]);
}

TEST(Pls, SelectsTrueRankOnNoiselessData) {
  RngStream rng(15);
  const int n = 24, m = 7, c = 2;
  const Matrix x = random_matrix(n, 2, rng) * random_matrix(2, m, rng);
  const Matrix xc = x.rowwise() - x.colwise().mean();
  const Matrix y = xc * random_matrix(m, c, rng);
  for (int folds : {4, 5}) {
    RngStream sel(8);
    EXPECT_EQ(mixsig::pls_select_components(x, y, folds, 5, sel), 2) << folds << " folds";
  }
}

TEST(Pls, SelectionOnNoiseStaysInRangeAndIsDeterministic) {
  RngStream rng(55);
  const Matrix x = random_matrix(20, 6, rng);
  const Matrix y = random_matrix(20, 2, rng);
  RngStream s1(4), s2(4);
  const int k1 = mixsig::pls_select_components(x, y, 5, 5, s1);
  const int k2 = mixsig::pls_select_components(x, y, 5, 5, s2);
  EXPECT_GE(k1, 1);
  EXPECT_LE(k1, 5);
  EXPECT_EQ(k1, k2);
}

TEST(Pls, RejectsBadArguments) {
  RngStream rng(1);
  const Matrix x = random_matrix(10, 4, rng);
  const Matrix y = random_matrix(10, 2, rng);
  EXPECT_THROW(mixsig::pls_fit(x, y, 0), mixsig::Error);
  EXPECT_THROW(mixsig::pls_fit(x, y, 5), mixsig::Error);
  EXPECT_THROW(mixsig::pls_fit(x, random_matrix(9, 2, rng), 2), mixsig::DimensionMismatch);
  const auto mod = mixsig::pls_fit(x, y, 2);
  EXPECT_THROW(mixsig::pls_predict(mod, random_matrix(3, 5, rng)), mixsig::DimensionMismatch);
  RngStream sel(2);
  EXPECT_THROW(mixsig::pls_select_components(x, y, 1, 3, sel), mixsig::Error);
}

TEST(Pls, DegenerateBlocksRaise) {
  RngStream rng(2);
  const Matrix x_const = Matrix::Ones(10, 4);
  const Matrix y = random_matrix(10, 2, rng);
  EXPECT_THROW(mixsig::pls_fit(x_const, y, 1), mixsig::DegenerateDeflation);
  const Matrix x = random_matrix(10, 4, rng);
  EXPECT_THROW(mixsig::pls_fit(x, Matrix::Ones(10, 2), 1), mixsig::DegenerateDeflation);
}

}  // namespace
