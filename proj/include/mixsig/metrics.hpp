#pragma once

// Prediction quality scores: squared-error and predictive-density metrics for
// simplex-valued weight regression, and accuracy / log-probability / ranking
// metrics for one-hot classification.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mixsig/errors.hpp"
#include "mixsig/linalg.hpp"
#include "mixsig/variational.hpp"

namespace mixsig {

struct RegressionMetrics {
  double mse = 0.0;
  double rmse = 0.0;
  double nlpd = 0.0;
};

// alpha holds one Dirichlet concentration row per test observation. Truth rows
// are nudged off the simplex boundary (each coordinate into [1e-6, 1 - 1e-6],
// then renormalized) before the density is evaluated, so pure-component rows
// score finitely.
inline RegressionMetrics regression_metrics(const Matrix& alpha, const Matrix& truth) {
  if (alpha.rows() != truth.rows() || alpha.cols() != truth.cols())
    throw DimensionMismatch("regression_metrics: prediction and truth shapes differ");
  if (truth.size() == 0) throw Error("regression_metrics: no rows to score");
  const Eigen::Index n = truth.rows(), c = truth.cols();
  RegressionMetrics out;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector a = alpha.row(i).transpose();
    const Vector mu = a / a.sum();
    out.mse += (mu - truth.row(i).transpose()).squaredNorm();
    Vector r = truth.row(i).transpose().cwiseMax(1e-6).cwiseMin(1.0 - 1e-6);
    r /= r.sum();
    double logdens = std::lgamma(a.sum());
    for (Eigen::Index k = 0; k < c; ++k)
      logdens += (a[k] - 1.0) * std::log(r[k]) - std::lgamma(a[k]);
    out.nlpd -= logdens;
  }
  out.mse /= static_cast<double>(n * c);
  out.rmse = std::sqrt(out.mse);
  return out;
}

struct ClassificationMetrics {
  double accuracy = 0.0;
  double lpp = 0.0;
  double roc_auc = 0.0;
};

// one-vs-rest AUC from the rank-sum statistic; tied scores share the midrank.
// The caller guarantees both classes are present.
inline double rank_auc(const Vector& score, const std::vector<char>& positive) {
  const Eigen::Index n = score.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return score[a] < score[b]; });
  double rank_sum = 0.0;
  Eigen::Index n_pos = 0;
  for (Eigen::Index start = 0; start < n;) {
    Eigen::Index stop = start;
    while (stop < n && score[order[stop]] == score[order[start]]) ++stop;
    const double midrank = 0.5 * static_cast<double>(start + stop + 1);  // 1-based
    for (Eigen::Index k = start; k < stop; ++k)
      if (positive[static_cast<std::size_t>(order[k])]) {
        rank_sum += midrank;
        ++n_pos;
      }
    start = stop;
  }
  const double u = rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n - n_pos));
}

// Macro average over the classes that appear on both sides of the split;
// classes with no positives or no negatives are left out, and only when every
// class drops out is the input unscorable.
inline ClassificationMetrics classification_metrics(const Matrix& prob,
                                                    const Eigen::VectorXi& truth) {
  if (prob.rows() != truth.size())
    throw DimensionMismatch("classification_metrics: prediction rows and label count differ");
  if (prob.size() == 0) throw Error("classification_metrics: no rows to score");
  const Eigen::Index n = prob.rows(), c = prob.cols();
  for (Eigen::Index i = 0; i < n; ++i)
    if (truth[i] < 0 || truth[i] >= c)
      throw Error("classification_metrics: label out of range at row " + std::to_string(i));

  ClassificationMetrics out;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index arg = 0;
    for (Eigen::Index k = 1; k < c; ++k)
      if (prob(i, k) > prob(i, arg)) arg = k;  // ties keep the lowest index
    if (arg == truth[i]) out.accuracy += 1.0;
    out.lpp += std::log(std::max(prob(i, truth[i]), 1e-12));
  }
  out.accuracy /= static_cast<double>(n);

  double auc_sum = 0.0;
  int scored = 0;
  for (Eigen::Index k = 0; k < c; ++k) {
    std::vector<char> pos(static_cast<std::size_t>(n));
    Eigen::Index n_pos = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      pos[static_cast<std::size_t>(i)] = truth[i] == k;
      n_pos += truth[i] == k ? 1 : 0;
    }
    if (n_pos == 0 || n_pos == n) continue;
    auc_sum += rank_auc(prob.col(k), pos);
    ++scored;
  }
  if (scored == 0)
    throw SingleClassTruth("classification_metrics: no class has both positives and negatives");
  out.roc_auc = auc_sum / static_cast<double>(scored);
  return out;
}

// adapters from fitted weight posteriors and one-hot truth blocks

inline Matrix dirichlet_alpha_rows(const std::vector<DirichletPosterior>& post) {
  if (post.empty()) throw Error("dirichlet_alpha_rows: no posteriors");
  Matrix a(static_cast<Eigen::Index>(post.size()), post.front().log_alpha.size());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    a.row(i) = post[static_cast<std::size_t>(i)].alpha().transpose();
  return a;
}

inline Matrix categorical_probability_rows(const std::vector<CategoricalPosterior>& post) {
  if (post.empty()) throw Error("categorical_probability_rows: no posteriors");
  Matrix p(static_cast<Eigen::Index>(post.size()), post.front().logits.size());
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    p.row(i) = post[static_cast<std::size_t>(i)].probabilities().transpose();
  return p;
}

inline Eigen::VectorXi one_hot_labels(const Matrix& r) {
  Eigen::VectorXi labels(r.rows());
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    Eigen::Index arg = 0;
    for (Eigen::Index k = 1; k < r.cols(); ++k)
      if (r(i, k) > r(i, arg)) arg = k;
    labels[i] = static_cast<int>(arg);
  }
  return labels;
}

}  // namespace mixsig
