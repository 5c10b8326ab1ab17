#pragma once

// Deterministic first-order minimizers over a plain value+gradient callback.
// Training code flips the sign of the bound and optimizes reduced vectors
// produced by the stage masks.

#include <atomic>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mixsig/linalg.hpp"

namespace mixsig {

struct ObjectiveEval {
  double value = 0.0;
  Vector grad;
};

using Objective = std::function<ObjectiveEval(const Vector&)>;
using IterateCallback = std::function<void(int iter, double value, const Vector& x)>;

// gather/scatter between the full pack vector and a stage's reduced vector
inline Vector mask_gather(const Vector& full, const std::vector<bool>& mask) {
  Eigen::Index n = 0;
  for (bool b : mask) n += b ? 1 : 0;
  Vector out(n);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < full.size(); ++i)
    if (mask[static_cast<std::size_t>(i)]) out[k++] = full[i];
  return out;
}

inline void mask_scatter(const Vector& reduced, const std::vector<bool>& mask, Vector& full) {
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < full.size(); ++i)
    if (mask[static_cast<std::size_t>(i)]) full[i] = reduced[k++];
}

struct AdamOptions {
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int steps = 100;
};

struct AdamResult {
  Vector x;
  double value = 0.0;
  Vector grad;
  int steps_taken = 0;
};

inline AdamResult adam_minimize(const Objective& f, Vector x, const AdamOptions& opt,
                                const IterateCallback& on_iterate = nullptr) {
  Vector m = Vector::Zero(x.size()), v = Vector::Zero(x.size());
  AdamResult res;
  for (int t = 1; t <= opt.steps; ++t) {
    auto ev = f(x);
    if (on_iterate) on_iterate(t - 1, ev.value, x);
    m = opt.beta1 * m + (1.0 - opt.beta1) * ev.grad;
    v = opt.beta2 * v + (1.0 - opt.beta2) * ev.grad.cwiseProduct(ev.grad);
    const double bc1 = 1.0 - std::pow(opt.beta1, t);
    const double bc2 = 1.0 - std::pow(opt.beta2, t);
    x -= (opt.lr / bc1) * m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + opt.eps).matrix());
    res.steps_taken = t;
  }
  auto ev = f(x);
  if (on_iterate) on_iterate(opt.steps, ev.value, x);
  res.x = std::move(x);
  res.value = ev.value;
  res.grad = std::move(ev.grad);
  return res;
}

struct LbfgsOptions {
  int memory = 10;
  int max_iters = 2000;
  double rel_tol = 1e-7;       // relative change in value between iterations
  double armijo_c = 1e-4;
  double backtrack_shrink = 0.5;
  int max_backtracks = 30;
  double curvature_eps = 1e-10;  // skip the (s, y) pair if s.y <= eps |s||y|
  int max_skips_before_reset = 2;  // consecutive skips that flush stale memory
  // Cap on how far any single coordinate may move in one accepted step. The
  // parameters here live on log scales, where a stale Hessian estimate can
  // propose a jump of 30+ units into territory whose objective value is pure
  // roundoff (and occasionally a huge false improvement); ten units per
  // iteration is far more than legitimate progress ever needs.
  double max_step = 10.0;
};

struct LbfgsResult {
  Vector x;
  double value = 0.0;
  Vector grad;
  int iters = 0;
  bool converged = false;
  bool line_search_failed = false;
};

inline LbfgsResult lbfgs_minimize(const Objective& f, Vector x, const LbfgsOptions& opt,
                                  const IterateCallback& on_iterate = nullptr) {
  auto ev = f(x);
  std::vector<Vector> s_hist, y_hist;
  std::vector<double> rho;
  int consecutive_skips = 0;
  LbfgsResult res;
  if (on_iterate) on_iterate(0, ev.value, x);

  for (int iter = 0; iter < opt.max_iters; ++iter) {
    if (ev.grad.norm() == 0.0) {
      res.converged = true;
      break;
    }
    // two-loop recursion with gamma scaling from the newest pair
    Vector d = -ev.grad;
    const std::size_t k = s_hist.size();
    std::vector<double> alpha(k);
    for (std::size_t idx = k; idx-- > 0;) {
      alpha[idx] = rho[idx] * s_hist[idx].dot(d);
      d -= alpha[idx] * y_hist[idx];
    }
    if (k > 0) d *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t idx = 0; idx < k; ++idx) {
      const double b = rho[idx] * y_hist[idx].dot(d);
      d += (alpha[idx] - b) * s_hist[idx];
    }

    bool steepest = false;
    double slope = ev.grad.dot(d);
    if (!(slope < 0.0)) {
      d = -ev.grad;
      slope = -ev.grad.squaredNorm();
      steepest = true;
    }

    const auto initial_step = [&](const Vector& dir) {
      const double dmax = dir.cwiseAbs().maxCoeff();
      return dmax > opt.max_step ? opt.max_step / dmax : 1.0;
    };

    double t = initial_step(d);
    ObjectiveEval trial;
    Vector xt;
    bool accepted = false;
    for (int bt = 0; bt <= opt.max_backtracks; ++bt) {
      xt = x + t * d;
      trial = f(xt);
      if (std::isfinite(trial.value) && trial.value <= ev.value + opt.armijo_c * t * slope) {
        accepted = true;
        break;
      }
      t *= opt.backtrack_shrink;
    }
    if (!accepted && !steepest) {
      // retry once along the raw gradient with fresh memory
      s_hist.clear();
      y_hist.clear();
      rho.clear();
      d = -ev.grad;
      slope = -ev.grad.squaredNorm();
      t = initial_step(d);
      for (int bt = 0; bt <= opt.max_backtracks; ++bt) {
        xt = x + t * d;
        trial = f(xt);
        if (std::isfinite(trial.value) && trial.value <= ev.value + opt.armijo_c * t * slope) {
          accepted = true;
          break;
        }
        t *= opt.backtrack_shrink;
      }
    }
    if (!accepted) {
      res.line_search_failed = true;
      break;
    }

    const Vector s = xt - x;
    const Vector y = trial.grad - ev.grad;
    const double sy = s.dot(y);
    if (sy > opt.curvature_eps * s.norm() * y.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opt.memory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho.erase(rho.begin());
      }
      consecutive_skips = 0;
    } else if (++consecutive_skips >= opt.max_skips_before_reset) {
      // repeated curvature failures mean the stored pairs no longer describe
      // the local surface; restart from plain gradient steps
      s_hist.clear();
      y_hist.clear();
      rho.clear();
      consecutive_skips = 0;
    }

    const double prev = ev.value;
    x = std::move(xt);
    ev = std::move(trial);
    res.iters = iter + 1;
    if (on_iterate) on_iterate(res.iters, ev.value, x);
    if (std::abs(prev - ev.value) <= opt.rel_tol * std::max(1.0, std::abs(ev.value))) {
      res.converged = true;
      break;
    }
  }

  res.x = std::move(x);
  res.value = ev.value;
  res.grad = std::move(ev.grad);
  return res;
}

// ---------------------------------------------------------------------------
// restart driver
// ---------------------------------------------------------------------------

// Runs run_one(r) for r in [0, restarts), up to `jobs` at a time, and returns
// the result with the highest score; ties go to the lowest index. A run that
// throws one of the numerical failure types aborts only that restart, with the
// abort count written to `aborted`. Every run aborting raises
// NoSuccessfulRestart.
template <class Result, class RunOne, class Score>
Result best_of_restarts(int restarts, int jobs, const RunOne& run_one, const Score& score,
                        int& aborted) {
  if (restarts < 1) throw Error("best_of_restarts: need at least one restart");
  std::vector<std::optional<Result>> results(static_cast<std::size_t>(restarts));
  std::vector<std::string> failures(static_cast<std::size_t>(restarts));

  auto guarded = [&](int r) {
    try {
      results[static_cast<std::size_t>(r)] = run_one(r);
    } catch (const NonFiniteElbo& ex) {
      failures[static_cast<std::size_t>(r)] = ex.what();
    } catch (const NonFiniteStatistic& ex) {
      failures[static_cast<std::size_t>(r)] = ex.what();
    } catch (const NotPositiveDefinite& ex) {
      failures[static_cast<std::size_t>(r)] = ex.what();
    }
  };

  const int n_jobs = std::max(1, std::min(jobs, restarts));
  if (n_jobs == 1) {
    for (int r = 0; r < restarts; ++r) guarded(r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_jobs));
    for (int t = 0; t < n_jobs; ++t)
      pool.emplace_back([&] {
        for (int r = next.fetch_add(1); r < restarts; r = next.fetch_add(1)) guarded(r);
      });
    for (auto& th : pool) th.join();
  }

  int best = -1;
  aborted = 0;
  for (int r = 0; r < restarts; ++r) {
    if (!results[static_cast<std::size_t>(r)]) {
      ++aborted;
      continue;
    }
    if (best < 0 || score(*results[static_cast<std::size_t>(r)]) >
                        score(*results[static_cast<std::size_t>(best)]))
      best = r;
  }
  if (best < 0)
    throw NoSuccessfulRestart("all " + std::to_string(restarts) +
                              " restarts aborted; first failure: " + failures[0]);
  return std::move(*results[static_cast<std::size_t>(best)]);
}

}  // namespace mixsig
