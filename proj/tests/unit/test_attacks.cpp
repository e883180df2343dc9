#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "kdbd/attacks.hpp"
#include "kdbd/error.hpp"
#include "unit/toy.hpp"

using namespace kdbd;
using namespace kdbd::attacks;

namespace {

constexpr std::size_t kSource = 4;
constexpr std::size_t kTarget = 6;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.empty() ? NAN : v[v.size() / 2];
}

void expect_in_ball(const data::Image& adv, const data::Image& orig, double eps) {
  EXPECT_LE(linf_distance(adv, orig), eps + 1e-6);
  for (float v : adv.pixels) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

}  // namespace

TEST(Predict, ZeroTeacherPicksClassZero) {
  const auto zero = nn::zero_network<float>(nn::ArchSpec{}, nn::Role::teacher);
  const data::Image img(3, 16, 16, 0.3f);
  const auto p = teacher_predict(zero, img);
  EXPECT_EQ(p.label, 0u);
  for (double v : p.probabilities) EXPECT_NEAR(v, 0.1, 1e-12);
}

TEST(Predict, BatchAgreesWithSingleAndArgmax) {
  const auto& t = toy::get();
  std::vector<data::Image> imgs;
  for (std::size_t i = 0; i < 300; ++i) imgs.push_back(t.test.examples[i].image);
  const auto batch = teacher_predict_batch(t.teacher.params, imgs);
  for (std::size_t i = 0; i < imgs.size(); i += 37) {
    const auto single = teacher_predict(t.teacher.params, imgs[i]);
    EXPECT_EQ(single.label, batch[i].label);
    EXPECT_EQ(single.label, static_cast<std::size_t>(std::max_element(single.probabilities.begin(),
                                                                      single.probabilities.end()) -
                                                     single.probabilities.begin()));
  }
}

TEST(Fgsm, StepsEveryPixelByEpsilon) {
  const auto& t = toy::get();
  const auto img = toy::source_images(kSource, 1).front();
  const double eps = 0.01;
  const auto r = fgsm_targeted(t.teacher.params, img, kTarget, eps);
  expect_in_ball(r.adversarial, img, eps);
  std::size_t full = 0, interior = 0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    const float o = img.pixels[i];
    if (o < eps || o > 1 - eps) continue;
    ++interior;
    full += std::abs(std::abs(r.adversarial.pixels[i] - o) - eps) < 1e-6;
  }
  EXPECT_GT(interior, 0u);
  EXPECT_GE(static_cast<double>(full) / interior, 0.95);  // a few pixels may have zero gradient
  EXPECT_EQ(r.iterations, 1u);
}

TEST(Pgd, SingleFullStepEqualsFgsm) {
  const auto& t = toy::get();
  AttackConfig cfg;
  cfg.eps = cfg.alpha = 0.05;
  cfg.steps = 1;
  cfg.rand_init = false;
  for (const auto& img : toy::source_images(kSource, 5)) {
    const auto a = pgd_targeted(t.teacher.params, img, kTarget, cfg, 1);
    const auto b = fgsm_targeted(t.teacher.params, img, kTarget, cfg.eps);
    EXPECT_EQ(a.adversarial, b.adversarial);
  }
}

TEST(Pgd, StaysInBallAndBeatsFgsm) {
  const auto& t = toy::get();
  AttackConfig cfg;
  cfg.eps = 0.1;
  std::size_t pgd_ok = 0, fgsm_ok = 0;
  const auto imgs = toy::source_images(kSource, 100);
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    const auto p = pgd_targeted(t.teacher.params, imgs[i], kTarget, cfg, i);
    expect_in_ball(p.adversarial, imgs[i], cfg.eps);
    EXPECT_EQ(p.success, teacher_predict(t.teacher.params, p.adversarial).label == kTarget);
    pgd_ok += p.success;
    fgsm_ok += fgsm_targeted(t.teacher.params, imgs[i], kTarget, cfg.eps).success;
  }
  EXPECT_GE(pgd_ok, fgsm_ok);
  RecordProperty("pgd_success", static_cast<int>(pgd_ok));
  RecordProperty("fgsm_success", static_cast<int>(fgsm_ok));
}

TEST(Pgd, SeededRandomStartIsReproducible) {
  const auto& t = toy::get();
  const auto img = toy::source_images(kSource, 1).front();
  AttackConfig cfg;
  cfg.early_exit = false;
  cfg.steps = 3;
  const auto a = pgd_targeted(t.teacher.params, img, kTarget, cfg, 42);
  EXPECT_EQ(a.adversarial, pgd_targeted(t.teacher.params, img, kTarget, cfg, 42).adversarial);
  EXPECT_NE(a.adversarial, pgd_targeted(t.teacher.params, img, kTarget, cfg, 43).adversarial);
}

TEST(NiFgsm, StaysInBallAndSucceedsAtModerateBudget) {
  const auto& t = toy::get();
  AttackConfig cfg;
  cfg.method = Method::nifgsm;
  cfg.eps = 0.25;
  std::size_t ok = 0;
  const auto imgs = toy::source_images(kSource, 20);
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    const auto r = run_attack(t.teacher.params, imgs[i], kTarget, cfg, i);
    expect_in_ball(r.adversarial, imgs[i], cfg.eps);
    ok += r.success;
  }
  EXPECT_GE(ok, 10u);
}

TEST(Cw, AlreadyTargetPredictedGivesNearZeroPerturbation) {
  const auto& t = toy::get();
  const data::Image* img = nullptr;
  for (const auto& ex : t.test.examples) {
    if (ex.label == kTarget && teacher_predict(t.teacher.params, ex.image).label == kTarget) {
      img = &ex.image;
      break;
    }
  }
  ASSERT_NE(img, nullptr);
  AttackConfig cfg;
  cfg.method = Method::cw;
  cfg.steps = 20;
  const auto r = cw_l2_targeted(t.teacher.params, *img, kTarget, cfg);
  EXPECT_TRUE(r.success);
  EXPECT_LT(l2_distance(r.adversarial, *img), 1e-3);
  EXPECT_TRUE(std::isinf(r.linf_bound));
}

TEST(Cw, FindsSmallerL2PerturbationsThanPgd) {
  const auto& t = toy::get();
  AttackConfig pgd;
  pgd.eps = 0.25;
  AttackConfig cw;
  cw.method = Method::cw;
  cw.steps = 200;
  cw.cw_lr = 0.05;
  cw.cw_c = 5.0;
  std::vector<double> l2_pgd, l2_cw;
  const auto imgs = toy::source_images(kSource, 15);
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    const auto a = pgd_targeted(t.teacher.params, imgs[i], kTarget, pgd, i);
    const auto b = cw_l2_targeted(t.teacher.params, imgs[i], kTarget, cw);
    if (a.success) l2_pgd.push_back(l2_distance(a.adversarial, imgs[i]));
    if (b.success) l2_cw.push_back(l2_distance(b.adversarial, imgs[i]));
  }
  ASSERT_GE(l2_pgd.size(), 5u);
  ASSERT_GE(l2_cw.size(), 5u);
  EXPECT_LT(median(l2_cw), median(l2_pgd));
}

TEST(Attacks, MarginAndDistances) {
  EXPECT_DOUBLE_EQ(target_margin({0.1, 0.7, 0.2}, 1), 0.5);
  EXPECT_DOUBLE_EQ(target_margin({0.1, 0.7, 0.2}, 2), -0.5);
  data::Image a(1, 2, 2, 0.0f), b(1, 2, 2, 0.0f);
  b.pixels[1] = 0.3f;
  b.pixels[2] = -0.4f;
  EXPECT_NEAR(linf_distance(a, b), 0.4, 1e-7);
  EXPECT_NEAR(l2_distance(a, b), 0.5, 1e-7);
}

TEST(Attacks, RejectBadConfigs) {
  const auto& t = toy::get();
  const auto img = toy::source_images(kSource, 1).front();
  AttackConfig cfg;
  cfg.alpha = 0.5;  // alpha > eps
  EXPECT_THROW(pgd_targeted(t.teacher.params, img, kTarget, cfg, 0), ConfigError);
  EXPECT_THROW(fgsm_targeted(t.teacher.params, img, 10, 0.1), ConfigError);
  EXPECT_THROW(fgsm_targeted(t.teacher.params, img, kTarget, 0.0), ConfigError);
  EXPECT_THROW(parse_method("deepfool"), ConfigError);
}
