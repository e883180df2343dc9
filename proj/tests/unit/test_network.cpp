#include <gtest/gtest.h>

#include <cmath>

#include "common/oracles.hpp"
#include "kdbd/error.hpp"
#include "kdbd/network.hpp"
#include "kdbd/random.hpp"

using namespace kdbd;
using nn::ArchSpec;

namespace {

// Straightforward re-implementation of the forward pass, for one image.
std::vector<double> reference_forward(const nn::NetworkParams<double>& p, const std::vector<double>& image) {
  const auto& a = p.arch;
  std::vector<double> act = image;
  std::size_t c = a.channels, h = a.height, w = a.width;
  const auto widths = a.effective_widths();
  for (std::size_t blk = 0; blk < widths.size(); ++blk) {
    const auto& wt = p.tensors[2 * blk];
    const auto& bias = p.tensors[2 * blk + 1];
    const std::size_t co = widths[blk];
    std::vector<double> conv(co * h * w);
    for (std::size_t o = 0; o < co; ++o) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          double s = bias[o];
          for (std::size_t i = 0; i < c; ++i) {
            for (int dy = -1; dy <= 1; ++dy) {
              for (int dx = -1; dx <= 1; ++dx) {
                const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
                s += wt[((o * c + i) * 3 + (dy + 1)) * 3 + (dx + 1)] * act[(i * h + yy) * w + xx];
              }
            }
          }
          conv[(o * h + y) * w + x] = std::max(0.0, s);
        }
      }
    }
    const std::size_t ph = h / 2, pw = w / 2;
    std::vector<double> pooled(co * ph * pw);
    for (std::size_t o = 0; o < co; ++o) {
      for (std::size_t y = 0; y < ph; ++y) {
        for (std::size_t x = 0; x < pw; ++x) {
          double m = -1e300;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) m = std::max(m, conv[(o * h + 2 * y + dy) * w + 2 * x + dx]);
          }
          pooled[(o * ph + y) * pw + x] = m;
        }
      }
    }
    act = pooled;
    c = co;
    h = ph;
    w = pw;
  }
  auto dense = [](const Tensor64& wt, const Tensor64& b, const std::vector<double>& in, bool relu) {
    std::vector<double> out(b.size());
    for (std::size_t o = 0; o < out.size(); ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in.size(); ++i) s += wt[o * in.size() + i] * in[i];
      out[o] = relu ? std::max(0.0, s) : s;
    }
    return out;
  };
  const std::size_t n = p.tensors.size();
  const auto hidden = dense(p.tensors[n - 4], p.tensors[n - 3], act, true);
  return dense(p.tensors[n - 2], p.tensors[n - 1], hidden, false);
}

Tensor64 random_batch(const ArchSpec& a, std::size_t b, std::uint64_t seed) {
  Tensor64 x({b, a.channels, a.height, a.width});
  Rng rng(seed);
  for (auto& v : x.data()) v = rng.uniform();
  return x;
}

}  // namespace

TEST(ArchSpec, CanonicalRoundTrip) {
  ArchSpec a;
  a.block_widths = {8, 12, 20};
  a.width_multiplier = 0.7;
  a.height = a.width = 32;
  EXPECT_EQ(ArchSpec::parse(a.canonical()), a);
}

TEST(ArchSpec, ParseRejectsMalformedDescriptors) {
  EXPECT_THROW(ArchSpec::parse("input=3x16;blocks=4;classifier=8;classes=2;last_block_multiplier=1"), ConfigError);
  EXPECT_THROW(ArchSpec::parse("input=3x16x16;blocks=4"), ConfigError);
  EXPECT_THROW(ArchSpec::parse("bogus=1"), ConfigError);
}

TEST(ArchSpec, ParameterCountMatchesHandCount) {
  ArchSpec a;  // 3x16x16, blocks 16,32, classifier 64, 10 classes
  const std::size_t conv1 = 3 * 16 * 9 + 16;
  const std::size_t conv2 = 16 * 32 * 9 + 32;
  const std::size_t fc0 = 32 * 4 * 4 * 64 + 64;
  const std::size_t fc1 = 64 * 10 + 10;
  EXPECT_EQ(a.parameter_count(), conv1 + conv2 + fc0 + fc1);
  EXPECT_EQ(nn::init_network<float>(a, nn::Role::student, 0).parameter_count(), a.parameter_count());
}

TEST(ArchSpec, MultiplierShrinksOnlyTheLastBlock) {
  ArchSpec a;
  a.width_multiplier = 0.3;
  EXPECT_EQ(a.effective_widths(), (std::vector<std::size_t>{16, 10}));
  a.width_multiplier = 0.01;
  EXPECT_EQ(a.effective_widths(), (std::vector<std::size_t>{16, 1}));
}

TEST(ArchSpec, ValidateRejectsImpossibleShapes) {
  ArchSpec a;
  a.block_widths = {4, 4, 4, 4, 4};  // 16 -> 0 after five pools
  EXPECT_THROW(a.validate(), ConfigError);
  a = ArchSpec{};
  a.num_classes = 1;
  EXPECT_THROW(a.validate(), ConfigError);
}

TEST(Forward, ZeroWeightNetworkOutputsBias) {
  ArchSpec a;
  auto p = nn::zero_network<double>(a, nn::Role::student);
  auto& bias = p.tensors.back();
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = 0.25 * static_cast<double>(i);
  p.touch();
  const auto logits = nn::infer(p, random_batch(a, 3, 1));
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t k = 0; k < a.num_classes; ++k) EXPECT_EQ(logits[b * a.num_classes + k], bias[k]);
  }
}

TEST(Forward, BatchRowsAreIndependent) {
  ArchSpec a;
  const auto p = nn::init_network<float>(a, nn::Role::student, 2);
  Tensor x4({4, 3, 16, 16});
  Rng rng(3);
  for (auto& v : x4.data()) v = static_cast<float>(rng.uniform());
  Tensor x1({1, 3, 16, 16});
  std::copy_n(x4.data().begin() + 2 * 768, 768, x1.data().begin());
  const auto l4 = nn::infer(p, x4);
  const auto l1 = nn::infer(p, x1);
  for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(l1[k], l4[20 + k]);
}

TEST(Forward, MatchesIndependentReimplementation) {
  ArchSpec a;
  a.block_widths = {5, 7};
  a.classifier_width = 11;
  const auto p = nn::init_network<double>(a, nn::Role::student, 0);
  const auto x = random_batch(a, 2, 0);
  const auto logits = nn::infer(p, x);
  for (std::size_t b = 0; b < 2; ++b) {
    auto r = x.row(b);
    const auto ref = reference_forward(p, {r.begin(), r.end()});
    for (std::size_t k = 0; k < a.num_classes; ++k) EXPECT_NEAR(logits[b * a.num_classes + k], ref[k], 1e-12);
  }
}

TEST(Forward, ShapeMismatchNamesTheDimension) {
  ArchSpec a;
  const auto p = nn::init_network<float>(a, nn::Role::student, 0);
  try {
    nn::infer(p, Tensor({1, 3, 16, 15}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("width"), std::string::npos) << e.what();
  }
  EXPECT_THROW(nn::infer(p, Tensor({1, 1, 16, 16})), ShapeError);
}

TEST(Init, SeededAndDeterministic) {
  ArchSpec a;
  const auto p1 = nn::init_network<float>(a, nn::Role::student, 9);
  const auto p2 = nn::init_network<float>(a, nn::Role::student, 9);
  const auto p3 = nn::init_network<float>(a, nn::Role::student, 10);
  for (std::size_t t = 0; t < p1.tensors.size(); ++t) {
    EXPECT_TRUE(std::equal(p1.tensors[t].data().begin(), p1.tensors[t].data().end(), p2.tensors[t].data().begin()));
  }
  EXPECT_FALSE(std::equal(p1.tensors[0].data().begin(), p1.tensors[0].data().end(), p3.tensors[0].data().begin()));
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  ArchSpec a;
  const auto p = nn::init_network<double>(a, nn::Role::student, 1);
  const auto fwd = nn::forward(p, random_batch(a, 2, 1));
  const auto g = nn::backward(p, fwd.trace, Tensor64({2, 10}, 0.0), true);
  for (const auto& t : g.params) {
    for (double v : t.data()) EXPECT_EQ(v, 0.0);
  }
  for (double v : g.input->data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LinearInUpstream) {
  ArchSpec a;
  const auto p = nn::init_network<double>(a, nn::Role::student, 1);
  const auto fwd = nn::forward(p, random_batch(a, 2, 1));
  Tensor64 up({2, 10});
  Rng rng(5);
  for (auto& v : up.data()) v = rng.uniform(-1, 1);
  auto up2 = up;
  for (auto& v : up2.data()) v *= 2;
  const auto g1 = nn::backward(p, fwd.trace, up);
  const auto g2 = nn::backward(p, fwd.trace, up2);
  for (std::size_t t = 0; t < g1.params.size(); ++t) {
    for (std::size_t i = 0; i < g1.params[t].size(); ++i) {
      EXPECT_NEAR(g2.params[t][i], 2 * g1.params[t][i], 1e-12 * (1 + std::abs(g1.params[t][i])));
    }
  }
}

TEST(Backward, StaleTraceIsRejected) {
  ArchSpec a;
  auto p = nn::init_network<double>(a, nn::Role::student, 1);
  const auto fwd = nn::forward(p, random_batch(a, 1, 1));
  p.touch();
  EXPECT_THROW(nn::backward(p, fwd.trace, Tensor64({1, 10}, 1.0)), std::logic_error);
  ArchSpec other = a;
  other.classifier_width = 32;
  const auto q = nn::init_network<double>(other, nn::Role::student, 1);
  const auto fq = nn::forward(q, random_batch(other, 1, 1));
  EXPECT_THROW(nn::backward(p, fq.trace, Tensor64({1, 10}, 1.0)), std::logic_error);
}

class GradientFidelity : public ::testing::TestWithParam<std::tuple<std::size_t, oracle::LossKind>> {};

TEST_P(GradientFidelity, MatchesCentralDifferences) {
  const auto [arch_index, loss] = GetParam();
  const auto arch = oracle::gradient_archs()[arch_index];
  ASSERT_LE(arch.parameter_count(), 10000u);
  const auto run = oracle::finite_difference_check(arch, loss, 17 + arch_index);
  for (const auto& gc : run.tensors) {
    EXPECT_EQ(gc.kinks, 0u) << gc.tensor << " after " << run.redraws << " redraws";
    EXPECT_LT(gc.max_rel_error, 1e-4) << gc.tensor << " (" << gc.checked << " elements)";
  }
}

INSTANTIATE_TEST_SUITE_P(
    AllLayersAllLosses, GradientFidelity,
    ::testing::Combine(::testing::Values(0u, 1u, 2u),
                       ::testing::Values(oracle::LossKind::ce, oracle::LossKind::kd_teacher_target,
                                         oracle::LossKind::kd_student_target, oracle::LossKind::combined)),
    [](const auto& info) {
      return "arch" + std::to_string(std::get<0>(info.param)) + "_" + oracle::loss_name(std::get<1>(info.param)).substr(0, 12) +
             std::to_string(static_cast<int>(std::get<1>(info.param)));
    });
