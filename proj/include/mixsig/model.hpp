#pragma once

// ModelState bundles everything the bound depends on: kernel hyperparameters,
// the inducing grid, per-row latent posteriors, exact training weights, and
// per-test-row weight posteriors (Dirichlet in regression, categorical in
// classification).

#include <vector>

#include "mixsig/dataset.hpp"
#include "mixsig/kernel.hpp"
#include "mixsig/variational.hpp"

namespace mixsig {

struct ModelState {
  KernelParams params;
  InducingGrid grid;
  std::vector<LatentPosterior> latents_train;
  std::vector<LatentPosterior> latents_test;
  Matrix weights_train;  // N x C, exact
  std::vector<DirichletPosterior> weights_test_dir;
  std::vector<CategoricalPosterior> weights_test_cat;
  Variant variant = Variant::correlated;
  WeightMode mode = WeightMode::regression;
  Vector prior_alpha;  // Dirichlet prior parameter, all-ones by default

  Eigen::Index n_components() const { return weights_train.cols(); }
  Eigen::Index latent_dim() const { return grid.latent_points.cols(); }
};

inline void validate_state(const ModelState& s, const MixtureDataset& d) {
  if (static_cast<Eigen::Index>(s.latents_train.size()) != d.n_train() ||
      static_cast<Eigen::Index>(s.latents_test.size()) != d.n_test())
    throw DimensionMismatch("state: latent posterior count does not match dataset");
  if (s.weights_train.rows() != d.n_train()) throw DimensionMismatch("state: weights_train rows");
  const Eigen::Index n_wtest = s.mode == WeightMode::regression
                                   ? static_cast<Eigen::Index>(s.weights_test_dir.size())
                                   : static_cast<Eigen::Index>(s.weights_test_cat.size());
  if (n_wtest != d.n_test()) throw DimensionMismatch("state: weight posterior count");
  for (Eigen::Index i = 0; i < s.weights_train.rows(); ++i) {
    if (std::abs(s.weights_train.row(i).sum() - 1.0) > 1e-8 ||
        s.weights_train.row(i).minCoeff() < -1e-8)
      throw SimplexViolation("state: training weight row " + std::to_string(i) +
                             " violates the simplex constraint");
  }
}

// Flattened per-row view over training rows followed (optionally) by test
// rows: latent posteriors, weight moments, observations.
struct RowView {
  std::vector<const LatentPosterior*> latents;
  std::vector<WeightMoments> weights;
  std::vector<bool> is_test;
  Matrix Y;  // n_rows x M
  Eigen::Index n_train_rows = 0;

  Eigen::Index n_rows() const { return static_cast<Eigen::Index>(latents.size()); }
};

inline RowView collect_rows(const MixtureDataset& d, const ModelState& s, bool include_test) {
  RowView v;
  const Eigen::Index n = d.n_train();
  const Eigen::Index nt = include_test ? d.n_test() : 0;
  v.n_train_rows = n;
  v.Y.resize(n + nt, d.n_locations());
  v.Y.topRows(n) = d.Y_train;
  if (nt > 0) v.Y.bottomRows(nt) = d.Y_test;
  v.latents.reserve(n + nt);
  v.weights.reserve(n + nt);
  v.is_test.reserve(n + nt);
  for (Eigen::Index i = 0; i < n; ++i) {
    v.latents.push_back(&s.latents_train[i]);
    v.weights.push_back(exact_weight_moments(s.weights_train.row(i).transpose()));
    v.is_test.push_back(false);
  }
  for (Eigen::Index i = 0; i < nt; ++i) {
    v.latents.push_back(&s.latents_test[i]);
    v.weights.push_back(s.mode == WeightMode::regression
                            ? dirichlet_moments(s.weights_test_dir[i])
                            : categorical_moments(s.weights_test_cat[i]));
    v.is_test.push_back(true);
  }
  return v;
}

}  // namespace mixsig
