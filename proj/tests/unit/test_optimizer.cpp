#include <gtest/gtest.h>

#include <cmath>

#include "kdbd/error.hpp"
#include "kdbd/optimizer.hpp"

using namespace kdbd;

namespace {

nn::NetworkParams<double> single(double value) {
  nn::NetworkParams<double> p;
  p.names = {"w"};
  p.tensors.emplace_back(std::vector<std::size_t>{1}, value);
  p.touch();
  return p;
}

std::vector<Tensor64> grad(double g) { return {Tensor64({1}, g)}; }

}  // namespace

TEST(Sgd, SingleStep) {
  auto p = single(1.0);
  nn::AdamState<double> st;
  nn::optimizer_step(p, grad(0.5), {nn::OptimizerMethod::sgd, 0.1}, st);
  EXPECT_NEAR(p.tensors[0][0], 0.95, 1e-15);
}

TEST(Optimizer, ZeroGradientsLeaveParametersAlone) {
  for (auto method : {nn::OptimizerMethod::sgd, nn::OptimizerMethod::adam}) {
    auto p = single(0.7);
    nn::AdamState<double> st;
    for (int i = 0; i < 3; ++i) nn::optimizer_step(p, grad(0.0), {method, 0.1}, st);
    EXPECT_EQ(p.tensors[0][0], 0.7);
  }
}

TEST(Adam, FirstStepsMatchClosedForm) {
  const nn::OptimizerConfig cfg;
  auto p = single(1.0);
  nn::AdamState<double> st;
  const auto before = p.generation;
  nn::optimizer_step(p, grad(0.3), cfg, st);
  // Bias correction makes the first step lr * g / (|g| + eps).
  EXPECT_NEAR(p.tensors[0][0], 1.0 - cfg.lr * 0.3 / (0.3 + cfg.eps), 1e-15);
  EXPECT_NE(p.generation, before);

  // Second step, reference recursion.
  double m = (1 - cfg.beta1) * 0.3, v = (1 - cfg.beta2) * 0.09;
  const double g2 = -0.2;
  m = cfg.beta1 * m + (1 - cfg.beta1) * g2;
  v = cfg.beta2 * v + (1 - cfg.beta2) * g2 * g2;
  const double mh = m / (1 - cfg.beta1 * cfg.beta1), vh = v / (1 - cfg.beta2 * cfg.beta2);
  const double expect = p.tensors[0][0] - cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
  nn::optimizer_step(p, grad(g2), cfg, st);
  EXPECT_NEAR(p.tensors[0][0], expect, 1e-12);
  EXPECT_EQ(st.step, 2u);
}

TEST(Optimizer, RejectsBadConfigAndShapes) {
  auto p = single(1.0);
  nn::AdamState<double> st;
  EXPECT_THROW(nn::optimizer_step(p, grad(1.0), {nn::OptimizerMethod::adam, 0.0}, st), ConfigError);
  EXPECT_THROW(nn::optimizer_step(p, grad(1.0), {nn::OptimizerMethod::sgd, -1.0}, st), ConfigError);
  EXPECT_THROW(nn::optimizer_step(p, {Tensor64({2}, 1.0)}, {}, st), ShapeError);
  EXPECT_THROW(nn::parse_optimizer("rmsprop"), ConfigError);
}
