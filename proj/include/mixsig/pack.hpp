#pragma once

// Flattens the optimizable state into one vector with a fixed layout:
//   [log_sigma_f2 | log_beta (A) | log_gamma | log_sigma2 |
//    latent inducing points row-major (Lh*A) | wavelength inducing points (Ll) |
//    train latents (mean_i, log_var_i per row) | test latents |
//    test weight parameters (log_alpha or logits, C per test row)]
//
// Training weights are observed and never packed. Gradients come back in the
// same layout; stage masks select which coordinates an optimization stage may
// move.

#include <vector>

#include "mixsig/model.hpp"

namespace mixsig {

struct PackLayout {
  Eigen::Index a = 0, lh = 0, ll = 0, c = 0, n_train = 0, n_test = 0;
  WeightMode mode = WeightMode::regression;
  Eigen::Index off_sf2 = 0, off_beta = 0, off_gamma = 0, off_s2 = 0;
  Eigen::Index off_vh = 0, off_vl = 0, off_train = 0, off_test = 0, off_w = 0;
  Eigen::Index total = 0;

  Eigen::Index train_row(Eigen::Index i) const { return off_train + 2 * a * i; }
  Eigen::Index test_row(Eigen::Index i) const { return off_test + 2 * a * i; }
  Eigen::Index weight_row(Eigen::Index i) const { return off_w + c * i; }
};

inline PackLayout layout_for(const ModelState& state) {
  PackLayout lo;
  lo.a = state.latent_dim();
  lo.lh = state.grid.n_latent();
  lo.ll = state.grid.n_wavelength();
  lo.c = state.n_components();
  lo.n_train = static_cast<Eigen::Index>(state.latents_train.size());
  lo.n_test = static_cast<Eigen::Index>(state.latents_test.size());
  lo.mode = state.mode;
  lo.off_sf2 = 0;
  lo.off_beta = 1;
  lo.off_gamma = lo.off_beta + lo.a;
  lo.off_s2 = lo.off_gamma + 1;
  lo.off_vh = lo.off_s2 + 1;
  lo.off_vl = lo.off_vh + lo.lh * lo.a;
  lo.off_train = lo.off_vl + lo.ll;
  lo.off_test = lo.off_train + 2 * lo.a * lo.n_train;
  lo.off_w = lo.off_test + 2 * lo.a * lo.n_test;
  lo.total = lo.off_w + lo.c * lo.n_test;
  return lo;
}

inline Vector pack_state(const ModelState& state, const PackLayout& lo) {
  Vector v(lo.total);
  v[lo.off_sf2] = state.params.log_sigma_f2;
  v.segment(lo.off_beta, lo.a) = state.params.log_beta;
  v[lo.off_gamma] = state.params.log_gamma;
  v[lo.off_s2] = state.params.log_sigma2;
  for (Eigen::Index p = 0; p < lo.lh; ++p)
    v.segment(lo.off_vh + p * lo.a, lo.a) = state.grid.latent_points.row(p).transpose();
  v.segment(lo.off_vl, lo.ll) = state.grid.wavelength_points;
  for (Eigen::Index i = 0; i < lo.n_train; ++i) {
    v.segment(lo.train_row(i), lo.a) = state.latents_train[i].mean;
    v.segment(lo.train_row(i) + lo.a, lo.a) = state.latents_train[i].log_var;
  }
  for (Eigen::Index i = 0; i < lo.n_test; ++i) {
    v.segment(lo.test_row(i), lo.a) = state.latents_test[i].mean;
    v.segment(lo.test_row(i) + lo.a, lo.a) = state.latents_test[i].log_var;
  }
  for (Eigen::Index i = 0; i < lo.n_test; ++i)
    v.segment(lo.weight_row(i), lo.c) = lo.mode == WeightMode::regression
                                            ? state.weights_test_dir[i].log_alpha
                                            : state.weights_test_cat[i].logits;
  return v;
}

inline void unpack_state(const Vector& v, const PackLayout& lo, ModelState& state) {
  if (v.size() != lo.total) throw DimensionMismatch("unpack_state: vector length mismatch");
  state.params.log_sigma_f2 = v[lo.off_sf2];
  state.params.log_beta = v.segment(lo.off_beta, lo.a);
  state.params.log_gamma = v[lo.off_gamma];
  state.params.log_sigma2 = v[lo.off_s2];
  for (Eigen::Index p = 0; p < lo.lh; ++p)
    state.grid.latent_points.row(p) = v.segment(lo.off_vh + p * lo.a, lo.a).transpose();
  state.grid.wavelength_points = v.segment(lo.off_vl, lo.ll);
  for (Eigen::Index i = 0; i < lo.n_train; ++i) {
    state.latents_train[i].mean = v.segment(lo.train_row(i), lo.a);
    state.latents_train[i].log_var = v.segment(lo.train_row(i) + lo.a, lo.a);
  }
  for (Eigen::Index i = 0; i < lo.n_test; ++i) {
    state.latents_test[i].mean = v.segment(lo.test_row(i), lo.a);
    state.latents_test[i].log_var = v.segment(lo.test_row(i) + lo.a, lo.a);
  }
  for (Eigen::Index i = 0; i < lo.n_test; ++i) {
    if (lo.mode == WeightMode::regression)
      state.weights_test_dir[i].log_alpha = v.segment(lo.weight_row(i), lo.c);
    else
      state.weights_test_cat[i].logits = v.segment(lo.weight_row(i), lo.c);
  }
}

enum class Stage { hyper_and_train, test_rows, joint };

// Boolean mask over the pack layout saying what a stage may move.
inline std::vector<bool> stage_mask(const PackLayout& lo, Stage stage,
                                    bool freeze_train_latents = false) {
  std::vector<bool> m(static_cast<std::size_t>(lo.total), false);
  auto set = [&](Eigen::Index off, Eigen::Index len, bool on) {
    for (Eigen::Index k = 0; k < len; ++k) m[static_cast<std::size_t>(off + k)] = on;
  };
  switch (stage) {
    case Stage::hyper_and_train:
      set(lo.off_sf2, 1, true);
      set(lo.off_beta, lo.a, true);
      set(lo.off_gamma, 1, true);
      set(lo.off_s2, 1, true);
      set(lo.off_vh, lo.lh * lo.a, true);
      set(lo.off_vl, lo.ll, true);
      set(lo.off_train, 2 * lo.a * lo.n_train, !freeze_train_latents);
      break;
    case Stage::test_rows:
      set(lo.off_test, 2 * lo.a * lo.n_test, true);
      set(lo.off_w, lo.c * lo.n_test, true);
      break;
    case Stage::joint:
      set(0, lo.total, true);
      break;
  }
  return m;
}

}  // namespace mixsig
