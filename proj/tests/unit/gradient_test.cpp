#include <gtest/gtest.h>

#include <cmath>

#include "mixsig/elbo_grad.hpp"
#include "support/instances.hpp"

using namespace mixsig;
using testsupport::InstanceSpec;
using testsupport::random_instance;

namespace {

// central differences over every packed coordinate
Vector fd_gradient(const MixtureDataset& data, ModelState state, const PackLayout& lo,
                   bool include_test, double h) {
  Vector x = pack_state(state, lo);
  Vector g(lo.total);
  for (Eigen::Index k = 0; k < lo.total; ++k) {
    Vector xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    unpack_state(xp, lo, state);
    const double fp = elbo(state, data, include_test);
    unpack_state(xm, lo, state);
    const double fm = elbo(state, data, include_test);
    g[k] = (fp - fm) / (2.0 * h);
  }
  unpack_state(x, lo, state);
  return g;
}

void expect_gradient_matches(const MixtureDataset& data, const ModelState& state,
                             bool include_test, const std::string& label) {
  const PackLayout lo = layout_for(state);
  auto vg = elbo_with_gradient(data, state, include_test);
  EXPECT_NEAR(vg.value, elbo(state, data, include_test), 1e-12 * std::abs(vg.value));
  const Vector fd = fd_gradient(data, state, lo, include_test, 1e-5);
  for (Eigen::Index k = 0; k < lo.total; ++k) {
    const double scale = std::max({1.0, std::abs(fd[k]), std::abs(vg.grad[k])});
    EXPECT_LE(std::abs(fd[k] - vg.grad[k]), 1e-4 * scale)
        << label << " coordinate " << k << " analytic " << vg.grad[k] << " fd " << fd[k];
  }
}

}  // namespace

TEST(PackRoundTrip, UnpackInvertsPack) {
  RngStream rng(71);
  for (WeightMode mode : {WeightMode::regression, WeightMode::classification}) {
    InstanceSpec spec;
    spec.mode = mode;
    auto [data, state] = random_instance(spec, rng);
    const PackLayout lo = layout_for(state);
    const Vector x = pack_state(state, lo);
    ModelState other = state;
    Vector y = x;
    y.array() += 0.01;
    unpack_state(y, lo, other);
    unpack_state(x, lo, other);
    EXPECT_EQ(pack_state(other, lo), x);
    EXPECT_EQ(elbo(other, data), elbo(state, data));
  }
}

TEST(PackRoundTrip, StageMasksCoverDisjointScopes) {
  RngStream rng(72);
  InstanceSpec spec;
  auto [data, state] = random_instance(spec, rng);
  const PackLayout lo = layout_for(state);
  auto m1 = stage_mask(lo, Stage::hyper_and_train);
  auto m2 = stage_mask(lo, Stage::test_rows);
  auto m3 = stage_mask(lo, Stage::joint);
  for (Eigen::Index k = 0; k < lo.total; ++k) {
    EXPECT_FALSE(m1[k] && m2[k]);
    EXPECT_TRUE(m3[k]);
    EXPECT_EQ(m1[k] || m2[k], true) << "coordinate " << k << " belongs to no stage";
  }
  auto frozen = stage_mask(lo, Stage::hyper_and_train, true);
  for (Eigen::Index i = 0; i < lo.n_train; ++i)
    for (Eigen::Index k = 0; k < 2 * lo.a; ++k) EXPECT_FALSE(frozen[lo.train_row(i) + k]);
  EXPECT_TRUE(frozen[lo.off_sf2]);
}

TEST(Gradient, MatchesFiniteDifferencesAcrossRandomStates) {
  RngStream rng(73);
  int done = 0;
  for (int trial = 0; done < 30 && trial < 120; ++trial) {
    InstanceSpec spec;
    spec.variant = trial % 2 == 0 ? Variant::correlated : Variant::independent;
    spec.mode = trial % 4 < 2 ? WeightMode::regression : WeightMode::classification;
    if (trial % 5 == 0) spec.a = 1;
    auto [data, state] = random_instance(spec, rng);
    const bool include_test = trial % 3 != 0;
    auto pieces = elbo_pieces(data, state, include_test);
    if (pieces.f_k.jitter_used > 0.0 || pieces.f_b.jitter_used > 0.0) continue;
    expect_gradient_matches(data, state, include_test,
                            "trial " + std::to_string(trial) + (include_test ? "+test" : ""));
    ++done;
  }
  EXPECT_EQ(done, 30);
}

TEST(Gradient, ZeroLatentDimensionStillDifferentiable) {
  RngStream rng(74);
  InstanceSpec spec;
  spec.a = 0;
  spec.lh = 1;
  auto [data, state] = random_instance(spec, rng);
  const PackLayout lo = layout_for(state);
  auto vg = elbo_with_gradient(data, state, true);
  EXPECT_TRUE(vg.grad.allFinite());
  const Vector fd = fd_gradient(data, state, lo, true, 1e-5);
  for (Eigen::Index k = 0; k < lo.total; ++k)
    EXPECT_LE(std::abs(fd[k] - vg.grad[k]),
              1e-4 * std::max({1.0, std::abs(fd[k]), std::abs(vg.grad[k])}));
}

TEST(Gradient, CategoricalLogitGradientSumsToZeroPerRow) {
  RngStream rng(75);
  InstanceSpec spec;
  spec.mode = WeightMode::classification;
  spec.c = 3;
  auto [data, state] = random_instance(spec, rng);
  const PackLayout lo = layout_for(state);
  auto vg = elbo_with_gradient(data, state, true);
  for (Eigen::Index t = 0; t < lo.n_test; ++t)
    EXPECT_NEAR(vg.grad.segment(lo.weight_row(t), lo.c).sum(), 0.0, 1e-10);
}

TEST(Gradient, LatentKlOnlyWhenKernelIsSilent) {
  RngStream rng(76);
  InstanceSpec spec;
  spec.n_test = 0;
  auto [data, state] = random_instance(spec, rng);
  state.params.log_sigma_f2 = -std::numeric_limits<double>::infinity();
  const PackLayout lo = layout_for(state);
  auto vg = elbo_with_gradient(data, state, true);
  for (Eigen::Index i = 0; i < lo.n_train; ++i) {
    const auto& lp = state.latents_train[static_cast<std::size_t>(i)];
    for (Eigen::Index a = 0; a < lo.a; ++a) {
      EXPECT_NEAR(vg.grad[lo.train_row(i) + a], -lp.mean[a], 1e-12);
      EXPECT_NEAR(vg.grad[lo.train_row(i) + lo.a + a],
                  -0.5 * (std::exp(lp.log_var[a]) - 1.0), 1e-12);
    }
  }
}
