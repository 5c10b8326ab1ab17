#pragma once

// End-to-end fitting: SNV preprocessing, least-squares-residual PCA
// initialization, the three-stage annealed schedule, and best-of-restarts
// selection.
//
//   stage 1: Adam on kernel hyperparameters, inducing points and training-row
//            latents; test rows excluded from the bound; noise free to move
//   stage 2: noise reset to 1, annealed geometrically down to the stage-1
//            value; per level a few quasi-Newton steps on test-row
//            variational parameters only
//   stage 3: joint quasi-Newton on everything until the relative change in
//            the bound drops below tolerance
//
// Per-restart seeds come from derive_seed(cfg.seed, restart); within one
// restart the draw order is: sigma_f2, beta (A draws), latent inducing points
// (Lh*A normals, row-major). Everything else initializes deterministically,
// so identical (cfg, data) reproduce identical traces bitwise, restart
// parallelism included.

#include <chrono>
#include <limits>
#include <optional>

#include "mixsig/elbo_grad.hpp"
#include "mixsig/optimizers.hpp"

namespace mixsig {

inline Matrix snv(const Matrix& rows) {
  const Eigen::Index n = rows.rows(), m = rows.cols();
  if (m < 2) throw ConstantRow("snv: rows need at least two values");
  Matrix out(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = rows.row(i).mean();
    const double var = (rows.row(i).array() - mean).square().sum() / static_cast<double>(m - 1);
    if (var < 1e-15)
      throw ConstantRow("snv: row " + std::to_string(i) + " is constant");
    out.row(i) = (rows.row(i).array() - mean) / std::sqrt(var);
  }
  return out;
}

// F_hat = Y^T R (R^T R)^{-1}, the static per-component signal estimate
inline Matrix least_squares_pure(const Matrix& y, const Matrix& r) {
  if (y.rows() != r.rows()) throw DimensionMismatch("least_squares_pure: row counts differ");
  Matrix rtr = r.transpose() * r;
  auto f = cholesky_psd(rtr);
  Matrix rhs = r.transpose() * y;  // C x M
  Matrix x = solve_psd(f, rhs);
  const double resid = (rtr * x - rhs).norm() / std::max(1.0, rhs.norm());
  if (resid > 1e-6)
    throw RankDeficientWeights("least_squares_pure: weight design is rank deficient");
  return x.transpose();  // M x C
}

// PCA scores of the column-centered residual E = Y - R F_hat^T, each score
// dimension scaled to unit sample variance.
inline Matrix init_latents(const Matrix& y, const Matrix& r, Eigen::Index a) {
  const Eigen::Index n = y.rows();
  Matrix e = y - r * least_squares_pure(y, r).transpose();  // N x M residual
  e.rowwise() -= e.colwise().mean();
  if (a == 0) return Matrix(n, 0);
  const Matrix cov = e.transpose() * e / static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
  const auto top = top_eigvecs(cov, a);
  Matrix scores = e * top.vectors;            // N x A
  for (Eigen::Index d = 0; d < a; ++d) {
    const double mean = scores.col(d).mean();
    const double sd = std::sqrt((scores.col(d).array() - mean).square().sum() /
                                static_cast<double>(std::max<Eigen::Index>(n - 1, 1)));
    if (sd < 1e-12)
      scores.col(d).setZero();
    else
      scores.col(d) /= sd;
  }
  return scores;
}

struct FitConfig {
  Eigen::Index latent_dim = 2;
  Eigen::Index n_inducing_latent = 6;
  Eigen::Index n_inducing_wavelength = 12;
  int stage1_steps = 300;
  double stage1_learning_rate = 0.05;
  int anneal_steps = 20;
  int quasi_newton_steps_per_anneal = 2;
  double stage3_rel_tol = 1e-7;
  int stage3_max_iters = 2000;
  int restarts = 5;
  std::uint64_t seed = 0;
  Variant variant = Variant::correlated;
  WeightMode mode = WeightMode::regression;
  std::optional<bool> skip_stage1;  // defaults to true in classification mode
  bool freeze_latents_stage1 = false;
  double sigma_f2_init_lo = 0.5, sigma_f2_init_hi = 1.0;
  double beta_init_lo = 0.5, beta_init_hi = 5.5;
  int jobs = 1;

  bool stage1_skipped() const {
    return skip_stage1.value_or(mode == WeightMode::classification);
  }
};

struct TracePoint {
  int iteration = 0;
  int stage = 0;
  double sigma2 = 0.0;
  double elbo = 0.0;
};

struct FitResult {
  ModelState state;
  double final_elbo = 0.0;
  std::vector<TracePoint> trace;
  int restart_index = 0;
  long jitter_events = 0;
  double wall_seconds = 0.0;
  int aborted_restarts = 0;
};

inline ModelState init_state(const MixtureDataset& data, const FitConfig& cfg, RngStream& rng) {
  ModelState s;
  s.variant = cfg.variant;
  s.mode = cfg.mode;
  const Eigen::Index a = cfg.latent_dim, c = data.n_components();
  s.prior_alpha = Vector::Ones(c);

  s.params.log_sigma_f2 = std::log(rng.uniform(cfg.sigma_f2_init_lo, cfg.sigma_f2_init_hi));
  s.params.log_beta.resize(a);
  for (Eigen::Index d = 0; d < a; ++d)
    s.params.log_beta[d] = std::log(rng.uniform(cfg.beta_init_lo, cfg.beta_init_hi));
  const double span = data.lambda.size() > 1
                          ? data.lambda[data.lambda.size() - 1] - data.lambda[0]
                          : 0.0;
  s.params.log_gamma = span > 0.0 ? 2.0 * std::log(span / 6.0) : 0.0;
  s.params.log_sigma2 = 0.0;

  s.grid.latent_points.resize(cfg.n_inducing_latent, a);
  for (Eigen::Index p = 0; p < cfg.n_inducing_latent; ++p)
    for (Eigen::Index d = 0; d < a; ++d) s.grid.latent_points(p, d) = rng.normal();
  s.grid.wavelength_points =
      data.lambda.size() > 1
          ? Vector(Vector::LinSpaced(cfg.n_inducing_wavelength, data.lambda[0],
                                     data.lambda[data.lambda.size() - 1]))
          : Vector(Vector::Constant(cfg.n_inducing_wavelength, data.lambda[0]));

  const Matrix means = init_latents(data.Y_train, data.R_train, a);
  s.latents_train.resize(static_cast<std::size_t>(data.n_train()));
  for (Eigen::Index i = 0; i < data.n_train(); ++i) {
    s.latents_train[static_cast<std::size_t>(i)].mean = means.row(i).transpose();
    s.latents_train[static_cast<std::size_t>(i)].log_var = Vector::Zero(a);
  }
  s.latents_test.resize(static_cast<std::size_t>(data.n_test()));
  for (auto& lp : s.latents_test) {
    lp.mean = Vector::Zero(a);
    lp.log_var = Vector::Zero(a);
  }
  s.weights_train = data.R_train;
  if (cfg.mode == WeightMode::regression)
    s.weights_test_dir.assign(static_cast<std::size_t>(data.n_test()),
                              DirichletPosterior{Vector::Zero(c)});
  else
    s.weights_test_cat.assign(static_cast<std::size_t>(data.n_test()),
                              CategoricalPosterior{Vector::Zero(c)});
  return s;
}

inline FitResult fit(const MixtureDataset& data, const FitConfig& cfg, RngStream& rng) {
  const auto t0 = std::chrono::steady_clock::now();
  FitResult res;
  res.state = init_state(data, cfg, rng);
  ModelState& state = res.state;
  const PackLayout lo = layout_for(state);
  Vector full = pack_state(state, lo);
  int iteration = 0;

  auto eval_at = [&](const std::vector<bool>& mask, bool include_test) {
    auto vg = elbo_with_gradient(data, state, include_test);
    if (vg.jitter_k > 0.0) ++res.jitter_events;
    if (vg.jitter_b > 0.0) ++res.jitter_events;
    return ObjectiveEval{-vg.value, -mask_gather(vg.grad, mask)};
  };
  // soft=true turns a non-finite evaluation into a NaN value so the line
  // search rejects the trial point and shrinks; exploratory steps must not
  // abort a restart. Adam has no rejection mechanism, so stage 1 stays strict.
  auto objective = [&](const std::vector<bool>& mask, bool include_test, bool soft) {
    return [&, mask, include_test, soft](const Vector& xred) -> ObjectiveEval {
      mask_scatter(xred, mask, full);
      unpack_state(full, lo, state);
      if (!soft) return eval_at(mask, include_test);
      try {
        return eval_at(mask, include_test);
      } catch (const NonFiniteElbo&) {
      } catch (const NonFiniteStatistic&) {
      } catch (const NotPositiveDefinite&) {
      }
      return ObjectiveEval{std::numeric_limits<double>::quiet_NaN(),
                           Vector(Vector::Zero(xred.size()))};
    };
  };
  auto tracer = [&](int stage) {
    return [&, stage](int, double value, const Vector&) {
      res.trace.push_back({iteration++, stage, std::exp(full[lo.off_s2]), -value});
    };
  };
  auto adopt = [&](const Vector& xred, const std::vector<bool>& mask) {
    mask_scatter(xred, mask, full);
    unpack_state(full, lo, state);
  };

  if (!cfg.stage1_skipped() && cfg.stage1_steps > 0) {
    const auto mask = stage_mask(lo, Stage::hyper_and_train, cfg.freeze_latents_stage1);
    AdamOptions opt;
    opt.lr = cfg.stage1_learning_rate;
    opt.steps = cfg.stage1_steps;
    auto r = adam_minimize(objective(mask, false, false), mask_gather(full, mask), opt, tracer(1));
    adopt(r.x, mask);
  }

  const double sigma2_stage1 = state.params.sigma2();
  if (data.n_test() > 0) {
    const auto mask = stage_mask(lo, Stage::test_rows);
    LbfgsOptions opt;
    opt.max_iters = cfg.quasi_newton_steps_per_anneal;
    opt.rel_tol = 0.0;  // run the fixed step budget at every level
    for (int level = 0; level < cfg.anneal_steps; ++level) {
      const double frac = cfg.anneal_steps > 1
                              ? static_cast<double>(level) / (cfg.anneal_steps - 1)
                              : 1.0;
      state.params.log_sigma2 = frac * std::log(sigma2_stage1);
      full[lo.off_s2] = state.params.log_sigma2;
      auto r = lbfgs_minimize(objective(mask, true, true), mask_gather(full, mask), opt, tracer(2));
      adopt(r.x, mask);
    }
  }

  {
    const auto mask = stage_mask(lo, Stage::joint);
    LbfgsOptions opt;
    opt.max_iters = cfg.stage3_max_iters;
    opt.rel_tol = cfg.stage3_rel_tol;
    auto r = lbfgs_minimize(objective(mask, true, true), mask_gather(full, mask), opt, tracer(3));
    adopt(r.x, mask);
  }

  res.final_elbo = elbo(state, data, true);
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline FitResult fit_with_restarts(const MixtureDataset& data, const FitConfig& cfg) {
  int aborted = 0;
  FitResult out = best_of_restarts<FitResult>(
      cfg.restarts, cfg.jobs,
      [&](int r) {
        RngStream rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
        FitResult fr = fit(data, cfg, rng);
        fr.restart_index = r;
        return fr;
      },
      [](const FitResult& fr) { return fr.final_elbo; }, aborted);
  out.aborted_restarts = aborted;
  return out;
}

}  // namespace mixsig
