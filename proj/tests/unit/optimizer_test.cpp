#include <gtest/gtest.h>

#include <cmath>

#include "mixsig/optimizers.hpp"

using namespace mixsig;

namespace {

Objective quadratic(const Matrix& q, const Vector& target) {
  return [q, target](const Vector& x) {
    ObjectiveEval ev;
    const Vector d = x - target;
    ev.grad = q * d;
    ev.value = 0.5 * d.dot(ev.grad);
    return ev;
  };
}

Objective rosenbrock() {
  return [](const Vector& x) {
    ObjectiveEval ev;
    const double a = 1.0 - x[0];
    const double b = x[1] - x[0] * x[0];
    ev.value = a * a + 100.0 * b * b;
    ev.grad = Vector(2);
    ev.grad[0] = -2.0 * a - 400.0 * x[0] * b;
    ev.grad[1] = 200.0 * b;
    return ev;
  };
}

}  // namespace

TEST(Lbfgs, SolvesWellConditionedQuadratic) {
  Matrix q(3, 3);
  q << 4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0;
  Vector target(3);
  target << 1.0, -2.0, 0.5;
  LbfgsOptions opt;
  opt.rel_tol = 1e-14;
  auto res = lbfgs_minimize(quadratic(q, target), Vector::Zero(3), opt);
  EXPECT_TRUE(res.converged);
  EXPECT_LT((res.x - target).norm(), 1e-6);
  EXPECT_LT(res.iters, 50);
}

TEST(Lbfgs, SolvesIllConditionedQuadratic) {
  Matrix q = Matrix::Zero(4, 4);
  q.diagonal() << 1e6, 1e3, 1.0, 1e-2;
  Vector target(4);
  target << 0.3, -0.4, 2.0, -1.5;
  LbfgsOptions opt;
  opt.max_iters = 500;
  opt.rel_tol = 1e-14;
  auto res = lbfgs_minimize(quadratic(q, target), Vector::Ones(4), opt);
  EXPECT_LT((res.x - target).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Lbfgs, SolvesRosenbrock) {
  LbfgsOptions opt;
  opt.max_iters = 500;
  opt.rel_tol = 1e-14;
  Vector x0(2);
  x0 << -1.2, 1.0;
  auto res = lbfgs_minimize(rosenbrock(), x0, opt);
  Vector target(2);
  target << 1.0, 1.0;
  EXPECT_LT((res.x - target).norm(), 1e-5);
}

TEST(Lbfgs, ValuesDecreaseMonotonically) {
  std::vector<double> values;
  LbfgsOptions opt;
  opt.max_iters = 200;
  lbfgs_minimize(rosenbrock(), Vector::Zero(2), opt,
                 [&](int, double v, const Vector&) { values.push_back(v); });
  for (std::size_t i = 1; i < values.size(); ++i) EXPECT_LE(values[i], values[i - 1]);
  EXPECT_GE(values.size(), 2u);
}

TEST(Lbfgs, RespectsIterationCap) {
  LbfgsOptions opt;
  opt.max_iters = 2;
  auto res = lbfgs_minimize(rosenbrock(), Vector::Zero(2), opt);
  EXPECT_LE(res.iters, 2);
  EXPECT_FALSE(res.converged);
}

TEST(Lbfgs, ConvergesOnFlatFunctionImmediately) {
  auto flat = [](const Vector& x) {
    return ObjectiveEval{3.5, Vector::Zero(x.size())};
  };
  auto res = lbfgs_minimize(flat, Vector::Ones(3), {});
  EXPECT_TRUE(res.converged);
  EXPECT_EQ(res.iters, 0);
  EXPECT_EQ(res.value, 3.5);
}

TEST(Lbfgs, DeterministicAcrossRuns) {
  LbfgsOptions opt;
  opt.max_iters = 60;
  auto r1 = lbfgs_minimize(rosenbrock(), Vector::Zero(2), opt);
  auto r2 = lbfgs_minimize(rosenbrock(), Vector::Zero(2), opt);
  EXPECT_EQ(r1.x, r2.x);
  EXPECT_EQ(r1.value, r2.value);
  EXPECT_EQ(r1.iters, r2.iters);
}

TEST(Adam, ReducesQuadraticLoss) {
  Matrix q = Matrix::Identity(2, 2);
  Vector target(2);
  target << 3.0, -1.0;
  auto f = quadratic(q, target);
  AdamOptions opt;
  opt.steps = 500;
  opt.lr = 0.05;
  auto res = adam_minimize(f, Vector::Zero(2), opt);
  EXPECT_LT(res.value, f(Vector::Zero(2)).value * 1e-3);
  EXPECT_LT((res.x - target).norm(), 0.05);
}

TEST(Adam, DeterministicAndCallbackCounts) {
  auto f = rosenbrock();
  AdamOptions opt;
  opt.steps = 50;
  int calls = 0;
  auto r1 = adam_minimize(f, Vector::Zero(2), opt, [&](int, double, const Vector&) { ++calls; });
  auto r2 = adam_minimize(f, Vector::Zero(2), opt);
  EXPECT_EQ(calls, 51);
  EXPECT_EQ(r1.x, r2.x);
}

TEST(MaskUtils, GatherScatterRoundTrip) {
  Vector full(5);
  full << 1.0, 2.0, 3.0, 4.0, 5.0;
  std::vector<bool> mask = {true, false, true, false, true};
  Vector red = mask_gather(full, mask);
  ASSERT_EQ(red.size(), 3);
  EXPECT_EQ(red[0], 1.0);
  EXPECT_EQ(red[1], 3.0);
  EXPECT_EQ(red[2], 5.0);
  red *= 10.0;
  mask_scatter(red, mask, full);
  EXPECT_EQ(full[0], 10.0);
  EXPECT_EQ(full[1], 2.0);
  EXPECT_EQ(full[4], 50.0);
}
