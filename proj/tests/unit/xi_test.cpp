#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mixsig/xi.hpp"
#include "support/instances.hpp"
#include "support/reference_psi.hpp"

using namespace mixsig;
using testsupport::InstanceSpec;
using testsupport::random_instance;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Stacks the (row, location) product inputs used by the reference psi
// implementation: inputs (mu_i, lambda_j) with variances (s_i, 0).
struct CombinedInputs {
  Matrix mu, s, z;
  Vector ell, y;
};

CombinedInputs combine(const MixtureDataset& d, const ModelState& st) {
  const RowView rows = collect_rows(d, st, true);
  const Eigen::Index n = rows.n_rows(), M = d.n_locations(), A = st.latent_dim();
  const Eigen::Index Lh = st.grid.n_latent(), Ll = st.grid.n_wavelength();
  CombinedInputs ci;
  ci.mu.resize(n * M, A + 1);
  ci.s.resize(n * M, A + 1);
  ci.y.resize(n * M);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < M; ++j) {
      ci.mu.row(i * M + j).head(A) = rows.latents[i]->mean.transpose();
      ci.mu(i * M + j, A) = d.lambda[j];
      ci.s.row(i * M + j).head(A) = rows.latents[i]->variances().transpose();
      ci.s(i * M + j, A) = 0.0;
      ci.y[i * M + j] = rows.Y(i, j);
    }
  ci.z.resize(Lh * Ll, A + 1);
  for (Eigen::Index p = 0; p < Lh; ++p)
    for (Eigen::Index q = 0; q < Ll; ++q) {
      ci.z.row(p * Ll + q).head(A) = st.grid.latent_points.row(p);
      ci.z(p * Ll + q, A) = st.grid.wavelength_points[q];
    }
  ci.ell.resize(A + 1);
  ci.ell.head(A) = st.params.beta();
  ci.ell[A] = st.params.gamma();
  return ci;
}

}  // namespace

TEST(XiClosedForm, Xi0HandExampleTrainOnly) {
  RngStream rng(1);
  InstanceSpec spec;
  spec.n_train = 1;
  spec.n_test = 0;
  spec.m = 3;
  spec.c = 2;
  auto [d, st] = random_instance(spec, rng);
  d.R_train.row(0) << 0.5, 0.5;
  st.weights_train = d.R_train;
  st.params.log_sigma_f2 = std::log(2.0);
  auto xi = xi_closed_form(d, st);
  EXPECT_NEAR(xi.xi0, 3.0, 1e-12);
}

TEST(XiClosedForm, Xi0HandExampleWithTestRow) {
  RngStream rng(1);
  InstanceSpec spec;
  spec.n_train = 1;
  spec.n_test = 1;
  spec.m = 3;
  spec.c = 2;
  auto [d, st] = random_instance(spec, rng);
  d.R_train.row(0) << 0.5, 0.5;
  st.weights_train = d.R_train;
  st.params.log_sigma_f2 = std::log(2.0);
  st.weights_test_dir[0].log_alpha = Vector::Zero(2);  // alpha = (1,1)
  auto xi = xi_closed_form(d, st);
  EXPECT_NEAR(xi.xi0, 3.0 + 4.0, 1e-12);
  auto xi_train_only = xi_closed_form(d, st, false);
  EXPECT_NEAR(xi_train_only.xi0, 3.0, 1e-12);
}

TEST(XiClosedForm, DeltaLatentLimitMatchesPlainKernelSum) {
  RngStream rng(7);
  InstanceSpec spec;
  spec.n_train = 3;
  spec.n_test = 0;
  spec.m = 4;
  spec.c = 1;
  spec.a = 2;
  spec.lh = 2;
  spec.ll = 3;
  auto [d, st] = random_instance(spec, rng);
  for (auto& lp : st.latents_train) lp.log_var = Vector::Constant(spec.a, -kInf);
  auto xi = xi_closed_form(d, st);
  const Eigen::Index L = st.grid.size(Variant::correlated);
  for (Eigen::Index p = 0; p < st.grid.n_latent(); ++p)
    for (Eigen::Index q = 0; q < st.grid.n_wavelength(); ++q) {
      double expect = 0.0;
      for (Eigen::Index i = 0; i < d.n_train(); ++i)
        for (Eigen::Index j = 0; j < d.n_locations(); ++j)
          expect += d.Y_train(i, j) *
                    kernel_eval(st.latents_train[i].mean, d.lambda[j],
                                st.grid.latent_points.row(p).transpose(),
                                st.grid.wavelength_points[q], st.params);
      const double got = xi.xi1[p * st.grid.n_wavelength() + q];
      EXPECT_NEAR(got, expect, 1e-10 * std::max(1.0, std::abs(expect)));
    }
  ASSERT_EQ(xi.xi1.size(), L);
}

TEST(XiMonteCarlo, DeltaPosteriorMatchesClosedForm) {
  for (Variant variant : {Variant::correlated, Variant::independent}) {
    RngStream rng(3);
    InstanceSpec spec;
    spec.variant = variant;
    auto [d, st] = random_instance(spec, rng);
    for (auto& lp : st.latents_train) lp.log_var = Vector::Constant(spec.a, -kInf);
    for (auto& lp : st.latents_test) lp.log_var = Vector::Constant(spec.a, -kInf);
    auto closed = xi_closed_form(d, st);
    RngStream mc_rng(9);
    auto mc = xi_monte_carlo(d, st, 3, mc_rng);
    EXPECT_NEAR(mc.stats.xi0, closed.xi0, 1e-12 * std::abs(closed.xi0));
    EXPECT_LT((mc.stats.xi2 - closed.xi2).cwiseAbs().maxCoeff(),
              1e-12 * std::max(1.0, closed.xi2.cwiseAbs().maxCoeff()));
    if (variant == Variant::correlated) {
      EXPECT_LT((mc.stats.xi1 - closed.xi1).cwiseAbs().maxCoeff(),
                1e-12 * std::max(1.0, closed.xi1.cwiseAbs().maxCoeff()));
    } else {
      for (Eigen::Index j = 0; j < d.n_locations(); ++j)
        EXPECT_LT((mc.stats.xi1_per_location[j] - closed.xi1_per_location[j]).cwiseAbs().maxCoeff(),
                  1e-12);
    }
  }
}

TEST(XiMonteCarlo, NullKernelAllZero) {
  RngStream rng(5);
  InstanceSpec spec;
  auto [d, st] = random_instance(spec, rng);
  st.params.log_sigma_f2 = -kInf;  // sigma_f^2 = 0
  auto closed = xi_closed_form(d, st);
  EXPECT_EQ(closed.xi0, 0.0);
  EXPECT_EQ(closed.xi1.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(closed.xi2.cwiseAbs().maxCoeff(), 0.0);
  RngStream mc_rng(6);
  auto mc = xi_monte_carlo(d, st, 5, mc_rng);
  EXPECT_EQ(mc.stats.xi2.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(mc.stats.xi1.cwiseAbs().maxCoeff(), 0.0);
}

TEST(XiMonteCarlo, AgreesWithClosedFormWithinThreeSe) {
  int checked = 0;
  for (Variant variant : {Variant::correlated, Variant::independent})
    for (WeightMode mode : {WeightMode::regression, WeightMode::classification}) {
      RngStream rng(11 + static_cast<int>(variant) * 2 + static_cast<int>(mode));
      InstanceSpec spec;
      spec.variant = variant;
      spec.mode = mode;
      spec.n_train = 3;
      spec.n_test = 2;
      spec.m = 4;
      spec.c = 2;
      spec.a = 2;
      spec.lh = 2;
      spec.ll = 2;
      auto [d, st] = random_instance(spec, rng);
      auto closed = xi_closed_form(d, st);
      RngStream mc_rng(102);
      auto mc = xi_monte_carlo(d, st, 20000, mc_rng);
      EXPECT_NEAR(closed.xi0, mc.stats.xi0, 1e-10);
      for (Eigen::Index a = 0; a < closed.xi2.rows(); ++a)
        for (Eigen::Index b = 0; b < closed.xi2.cols(); ++b) {
          EXPECT_NEAR(closed.xi2(a, b), mc.stats.xi2(a, b),
                      3.0 * mc.stderrs.xi2(a, b) + 1e-9)
              << "xi2 entry (" << a << "," << b << ")";
        }
      if (variant == Variant::correlated) {
        for (Eigen::Index a = 0; a < closed.xi1.size(); ++a)
          EXPECT_NEAR(closed.xi1[a], mc.stats.xi1[a], 3.0 * mc.stderrs.xi1[a] + 1e-9);
      } else {
        for (Eigen::Index j = 0; j < d.n_locations(); ++j)
          for (Eigen::Index a = 0; a < closed.xi1_per_location[j].size(); ++a)
            EXPECT_NEAR(closed.xi1_per_location[j][a], mc.stats.xi1_per_location[j][a],
                        3.0 * mc.stderrs.xi1_per_location[j][a] + 1e-9);
      }
      ++checked;
    }
  EXPECT_EQ(checked, 4);
}

TEST(XiCollapse, SingleComponentMatchesReferencePsi) {
  for (std::uint64_t seed : {2ULL, 14ULL, 95ULL}) {
    RngStream rng(seed);
    InstanceSpec spec;
    spec.c = 1;
    spec.n_train = 3;
    spec.n_test = 2;
    spec.m = 3;
    spec.a = 2;
    spec.lh = 2;
    spec.ll = 2;
    auto [d, st] = random_instance(spec, rng);
    auto xi = xi_closed_form(d, st);
    auto ci = combine(d, st);
    const double sf2 = st.params.sigma_f2();
    const double p0 = refpsi::psi0(ci.mu.rows(), sf2);
    const Matrix p1 = refpsi::psi1(ci.mu, ci.s, ci.z, ci.ell, sf2);
    const Matrix p2 = refpsi::psi2(ci.mu, ci.s, ci.z, ci.ell, sf2);
    EXPECT_NEAR(xi.xi0, p0, 1e-10 * std::abs(p0));
    const Vector xi1_ref = p1.transpose() * ci.y;
    for (Eigen::Index l = 0; l < xi1_ref.size(); ++l)
      EXPECT_NEAR(xi.xi1[l], xi1_ref[l], 1e-10 * std::max(1.0, std::abs(xi1_ref[l])));
    for (Eigen::Index a = 0; a < p2.rows(); ++a)
      for (Eigen::Index b = 0; b < p2.cols(); ++b)
        EXPECT_NEAR(xi.xi2(a, b), p2(a, b), 1e-10 * std::max(1.0, std::abs(p2(a, b))));
  }
}

TEST(XiCollapse, IndependentVariantMatchesLatentOnlyPsi) {
  RngStream rng(23);
  InstanceSpec spec;
  spec.c = 1;
  spec.variant = Variant::independent;
  spec.n_train = 4;
  spec.n_test = 0;
  spec.m = 3;
  spec.a = 2;
  spec.lh = 3;
  auto [d, st] = random_instance(spec, rng);
  auto xi = xi_closed_form(d, st);
  const Eigen::Index n = d.n_train(), A = 2;
  Matrix mu(n, A), s(n, A);
  for (Eigen::Index i = 0; i < n; ++i) {
    mu.row(i) = st.latents_train[i].mean.transpose();
    s.row(i) = st.latents_train[i].variances().transpose();
  }
  const double sf2 = st.params.sigma_f2();
  const Matrix p1 = refpsi::psi1(mu, s, st.grid.latent_points, st.params.beta(), sf2);
  const Matrix p2 = refpsi::psi2(mu, s, st.grid.latent_points, st.params.beta(), sf2);
  EXPECT_NEAR(xi.xi0, refpsi::psi0(n, sf2), 1e-12);
  for (Eigen::Index a = 0; a < p2.rows(); ++a)
    for (Eigen::Index b = 0; b < p2.cols(); ++b)
      EXPECT_NEAR(xi.xi2(a, b), p2(a, b), 1e-10 * std::max(1.0, std::abs(p2(a, b))));
  for (Eigen::Index j = 0; j < d.n_locations(); ++j) {
    const Vector expect = p1.transpose() * d.Y_train.col(j);
    for (Eigen::Index l = 0; l < expect.size(); ++l)
      EXPECT_NEAR(xi.xi1_per_location[j][l], expect[l], 1e-10 * std::max(1.0, std::abs(expect[l])));
  }
}

TEST(XiProperties, Xi2SymmetricPsd) {
  for (Variant variant : {Variant::correlated, Variant::independent}) {
    RngStream rng(31 + static_cast<int>(variant));
    InstanceSpec spec;
    spec.variant = variant;
    spec.c = 3;
    auto [d, st] = random_instance(spec, rng);
    auto xi = xi_closed_form(d, st);
    const double scale = std::max(1.0, xi.xi2.cwiseAbs().maxCoeff());
    EXPECT_LT((xi.xi2 - xi.xi2.transpose()).cwiseAbs().maxCoeff(), 1e-12 * scale);
    Eigen::SelfAdjointEigenSolver<Matrix> es(xi.xi2);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8 * scale);
  }
}

TEST(XiProperties, RowPermutationInvariant) {
  RngStream rng(41);
  InstanceSpec spec;
  spec.n_train = 4;
  auto [d, st] = random_instance(spec, rng);
  auto xi = xi_closed_form(d, st);
  // swap training rows 0 and 2 everywhere
  d.Y_train.row(0).swap(d.Y_train.row(2));
  d.R_train.row(0).swap(d.R_train.row(2));
  st.weights_train = d.R_train;
  std::swap(st.latents_train[0], st.latents_train[2]);
  auto xi_perm = xi_closed_form(d, st);
  EXPECT_NEAR(xi.xi0, xi_perm.xi0, 1e-12 * std::abs(xi.xi0));
  EXPECT_LT((xi.xi1 - xi_perm.xi1).cwiseAbs().maxCoeff(),
            1e-12 * std::max(1.0, xi.xi1.cwiseAbs().maxCoeff()));
  EXPECT_LT((xi.xi2 - xi_perm.xi2).cwiseAbs().maxCoeff(),
            1e-12 * std::max(1.0, xi.xi2.cwiseAbs().maxCoeff()));
}

TEST(XiProperties, IndependentVariantIgnoresLambdaValues) {
  RngStream rng(51);
  InstanceSpec spec;
  spec.variant = Variant::independent;
  auto [d, st] = random_instance(spec, rng);
  auto xi = xi_closed_form(d, st);
  for (Eigen::Index j = 0; j < d.lambda.size(); ++j) d.lambda[j] = 100.0 + 7.0 * j;
  auto xi_scaled = xi_closed_form(d, st);
  EXPECT_EQ(xi.xi0, xi_scaled.xi0);
  EXPECT_EQ((xi.xi2 - xi_scaled.xi2).cwiseAbs().maxCoeff(), 0.0);
  for (Eigen::Index j = 0; j < d.n_locations(); ++j)
    EXPECT_EQ((xi.xi1_per_location[j] - xi_scaled.xi1_per_location[j]).cwiseAbs().maxCoeff(), 0.0);
}

TEST(XiProperties, BlockTransposeStructure) {
  RngStream rng(61);
  InstanceSpec spec;
  spec.c = 3;
  auto [d, st] = random_instance(spec, rng);
  auto xi = xi_closed_form(d, st);
  const Eigen::Index L = st.grid.size(st.variant);
  for (int c = 0; c < 3; ++c)
    for (int cc = 0; cc < 3; ++cc) {
      Matrix a = xi.xi2.block(c * L, cc * L, L, L);
      Matrix b = xi.xi2.block(cc * L, c * L, L, L);
      EXPECT_LT((a - b.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(XiErrors, NonFiniteInputDetected) {
  RngStream rng(71);
  InstanceSpec spec;
  auto [d, st] = random_instance(spec, rng);
  d.Y_train(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(xi_closed_form(d, st), NonFiniteStatistic);
}

TEST(XiErrors, StateSizeMismatch) {
  RngStream rng(81);
  InstanceSpec spec;
  auto [d, st] = random_instance(spec, rng);
  st.latents_train.pop_back();
  EXPECT_THROW(xi_closed_form(d, st), DimensionMismatch);
}
