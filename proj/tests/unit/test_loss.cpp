#include <gtest/gtest.h>

#include <cmath>

#include "common/oracles.hpp"
#include "kdbd/error.hpp"
#include "kdbd/loss.hpp"
#include "kdbd/random.hpp"

using namespace kdbd;

namespace {

Tensor64 logits(std::size_t b, std::size_t k, std::vector<double> v) { return Tensor64({b, k}, std::move(v)); }

Tensor64 random_logits(std::size_t b, std::size_t k, std::uint64_t seed, double scale = 4.0) {
  Tensor64 t({b, k});
  Rng rng(seed);
  for (auto& v : t.data()) v = rng.uniform(-scale, scale);
  return t;
}

}  // namespace

TEST(Softmax, KnownValues) {
  const auto p = nn::softmax_temperature(logits(1, 2, {2, 0}), 1.0);
  EXPECT_NEAR(p[0], 0.8808, 1e-4);
  EXPECT_NEAR(p[1], 0.1192, 1e-4);
  const auto u = nn::softmax_temperature(logits(1, 3, {0, 0, 0}), 1.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(u[i], 1.0 / 3.0, 1e-12);
}

TEST(Softmax, HighTemperatureFlattens) {
  const auto p = nn::softmax_temperature(logits(1, 4, {5, -3, 1, 0}), 1000.0);
  const auto [lo, hi] = std::minmax_element(p.data().begin(), p.data().end());
  EXPECT_LT(*hi - *lo, 0.01);
}

TEST(Softmax, RowsSumToOneAcrossTemperatures) {
  const auto z = random_logits(8, 10, 1, 50.0);
  for (double tau : {0.1, 0.5, 1.0, 5.0, 20.0, 1000.0}) {
    const auto p = nn::softmax_temperature(z, tau);
    for (std::size_t b = 0; b < 8; ++b) {
      double s = 0;
      for (double v : p.row(b)) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-9) << "tau " << tau;
    }
    const auto ref = oracle::softmax(oracle::row(z, 3), tau);
    for (std::size_t k = 0; k < 10; ++k) EXPECT_NEAR(p[30 + k], static_cast<double>(ref[k]), 1e-12);
  }
}

TEST(Softmax, RejectsNonPositiveTemperature) {
  EXPECT_THROW(nn::softmax_temperature(logits(1, 2, {0, 1}), 0.0), ConfigError);
  EXPECT_THROW(nn::softmax_temperature(logits(1, 2, {0, 1}), -1.0), ConfigError);
}

TEST(CrossEntropy, ConfidentAndUniformCases) {
  const std::vector<std::size_t> zero{0};
  EXPECT_LT(nn::cross_entropy_loss(logits(1, 3, {20, 0, 0}), zero).value, 1e-8);
  EXPECT_NEAR(nn::cross_entropy_loss(Tensor64({1, 10}, 0.0), zero).value, std::log(10.0), 1e-12);
}

TEST(CrossEntropy, MatchesOracleAndRejectsBadLabels) {
  const auto z = random_logits(5, 7, 2);
  const std::vector<std::size_t> labels{0, 6, 3, 3, 1};
  EXPECT_NEAR(nn::cross_entropy_loss(z, labels).value, oracle::ce_value(z, labels), 1e-12);
  const std::vector<std::size_t> bad{0, 7, 3, 3, 1};
  EXPECT_THROW(nn::cross_entropy_loss(z, bad), ConfigError);
}

TEST(KdLoss, IdenticalLogitsGiveZeroLossAndGradient) {
  const auto z = random_logits(4, 10, 3);
  const auto l = nn::kd_kl_loss(z, z, 5.0);
  EXPECT_NEAR(l.value, 0.0, 1e-12);
  for (double g : l.grad.data()) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(KdLoss, HandComputedTwoClassCase) {
  // KL([.8808,.1192] || [.1192,.8808]) = 2 * tanh(1) * 2 = 1.5232
  EXPECT_NEAR(nn::kd_kl_loss(logits(1, 2, {0, 2}), logits(1, 2, {2, 0}), 1.0).value, 1.5232, 1e-4);
  const double kl2 = static_cast<double>(
      oracle::kl(oracle::softmax({2, 0}, 2.0), oracle::softmax({0, 2}, 2.0)));
  EXPECT_NEAR(nn::kd_kl_loss(logits(1, 2, {0, 2}), logits(1, 2, {2, 0}), 2.0).value, 4.0 * kl2, 1e-12);
}

TEST(KdLoss, MatchesOracleInBothDirectionsAndIsNonNegative) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto zs = random_logits(3, 10, 100 + s), zt = random_logits(3, 10, 200 + s);
    const double tau = 0.5 + static_cast<double>(s);
    const auto fwd = nn::kd_kl_loss(zs, zt, tau);
    const auto rev = nn::kd_kl_loss(zs, zt, tau, nn::KlDirection::student_as_target);
    EXPECT_GE(fwd.value, 0.0);
    EXPECT_GE(rev.value, 0.0);
    EXPECT_NEAR(fwd.value, oracle::kd_value(zs, zt, tau, true), 1e-10 * (1 + fwd.value));
    EXPECT_NEAR(rev.value, oracle::kd_value(zs, zt, tau, false), 1e-10 * (1 + rev.value));
  }
}

TEST(KdLoss, ShapeMismatchIsRejected) {
  EXPECT_THROW(nn::kd_kl_loss(Tensor64({2, 10}), Tensor64({2, 9}), 1.0), ShapeError);
  EXPECT_THROW(nn::kd_kl_loss(Tensor64({2, 10}), Tensor64({3, 10}), 1.0), ShapeError);
}

TEST(CombinedLoss, EndpointsAndLinearity) {
  const auto zs = random_logits(6, 10, 7), zt = random_logits(6, 10, 8);
  const std::vector<std::size_t> labels{1, 2, 3, 4, 5, 9};
  const auto ce = nn::cross_entropy_loss(zs, labels);
  const auto kd = nn::kd_kl_loss(zs, zt, 5.0);
  const auto at0 = nn::combined_kd_loss(zs, zt, labels, 5.0, 0.0);
  const auto at1 = nn::combined_kd_loss(zs, zt, labels, 5.0, 1.0);
  EXPECT_EQ(at0.value, ce.value);
  EXPECT_EQ(at1.value, kd.value);
  for (std::size_t i = 0; i < zs.size(); ++i) {
    EXPECT_EQ(at0.grad[i], ce.grad[i]);
    EXPECT_EQ(at1.grad[i], kd.grad[i]);
  }
  for (double lambda : {0.1, 0.3, 0.5, 0.9}) {
    const auto mid = nn::combined_kd_loss(zs, zt, labels, 5.0, lambda);
    EXPECT_NEAR(mid.value, (1 - lambda) * ce.value + lambda * kd.value, 1e-10);
    for (std::size_t i = 0; i < zs.size(); ++i) {
      EXPECT_NEAR(mid.grad[i], (1 - lambda) * ce.grad[i] + lambda * kd.grad[i], 1e-10);
    }
  }
}

TEST(CombinedLoss, LambdaOutsideUnitIntervalIsRejected) {
  const Tensor64 z({1, 3});
  const std::vector<std::size_t> labels{0};
  EXPECT_THROW(nn::combined_kd_loss(z, z, labels, 1.0, -0.1), ConfigError);
  EXPECT_THROW(nn::combined_kd_loss(z, z, labels, 1.0, 1.5), ConfigError);
}

TEST(KlDirection, NamesRoundTrip) {
  for (auto d : {nn::KlDirection::teacher_as_target, nn::KlDirection::student_as_target}) {
    EXPECT_EQ(nn::parse_kl_direction(nn::kl_direction_name(d)), d);
  }
  EXPECT_THROW(nn::parse_kl_direction("sideways"), ConfigError);
}
