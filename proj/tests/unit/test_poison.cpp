#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "kdbd/error.hpp"
#include "kdbd/poison.hpp"
#include "unit/toy.hpp"

using namespace kdbd;
using namespace kdbd::poison;

namespace {

PoisonConfig adversarial_config() {
  PoisonConfig pc;
  pc.attack.eps = 0.25;
  pc.seed = 3;
  return pc;
}

}  // namespace

TEST(Counts, FromRateAndInjection) {
  PoisonConfig pc;
  pc.rate = 0.1;
  EXPECT_EQ(requested_count(pc, 100), 10u);
  pc.rate = 0.004;
  EXPECT_EQ(requested_count(pc, 100), 1u);  // add mode never asks for zero
  pc.injection = Injection::replace;
  pc.rate = 0.29;
  EXPECT_EQ(requested_count(pc, 100), 29u);
  pc.rate = 0.004;
  EXPECT_EQ(requested_count(pc, 100), 0u);
  pc.count = 7;
  EXPECT_EQ(requested_count(pc, 100), 7u);
}

TEST(Config, Validation) {
  PoisonConfig pc;
  pc.target_class = pc.source_class;
  EXPECT_THROW(pc.validate(), ConfigError);
  pc = {};
  pc.rate = 0.0;
  EXPECT_THROW(pc.validate(), ConfigError);
  pc = {};
  pc.count = 0;
  EXPECT_THROW(pc.validate(), ConfigError);
  EXPECT_THROW(parse_mode("clean-label"), ConfigError);
  EXPECT_THROW(parse_injection("prepend"), ConfigError);
}

TEST(Adversarial, SamplesAreTriggeredTargetLabeledAndVerified) {
  const auto& t = toy::get();
  const auto pc = adversarial_config();
  const auto set = craft_poison(t.teacher.params, t.train, pc);
  ASSERT_EQ(set.samples.size(), 10u);
  ASSERT_EQ(set.manipulated.size(), set.samples.size());
  std::size_t agree = 0;
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    const auto& s = set.samples[i];
    EXPECT_EQ(s.label, pc.target_class);
    EXPECT_EQ(s.provenance, data::Provenance::poisoned_adversarial);
    EXPECT_TRUE(data::has_trigger(s.image, pc.trigger));
    EXPECT_EQ(data::apply_trigger(set.manipulated[i], pc.trigger), s.image);
    agree += attacks::teacher_predict(t.teacher.params, s.image).label == pc.target_class;
  }
  EXPECT_EQ(agree, set.samples.size());
  EXPECT_EQ(set.attempted, set.audit.size());
  EXPECT_EQ(set.attempted, set.samples.size() + set.dropped);
  EXPECT_TRUE(set.companion_clean.empty());
}

TEST(Adversarial, ImpossibleBudgetWithoutRetriesFails) {
  const auto& t = toy::get();
  auto pc = adversarial_config();
  pc.attack.eps = pc.attack.alpha = 1e-4;
  pc.attack.steps = 1;
  pc.attack.max_retries = 0;
  EXPECT_THROW(craft_poison(t.teacher.params, t.train, pc), std::runtime_error);
}

TEST(Adversarial, IndependentOfWorkerCount) {
  const auto& t = toy::get();
  auto pc = adversarial_config();
  pc.count = 6;
  const auto one = craft_poison(t.teacher.params, t.train, pc);
  pc.workers = 3;
  const auto three = craft_poison(t.teacher.params, t.train, pc);
  ASSERT_EQ(one.samples.size(), three.samples.size());
  for (std::size_t i = 0; i < one.samples.size(); ++i) {
    EXPECT_EQ(one.samples[i].image, three.samples[i].image);
    EXPECT_EQ(one.samples[i].id, three.samples[i].id);
  }
}

TEST(Interpolation, SelectedPointsRespectTheMargin) {
  const auto& t = toy::get();
  PoisonConfig pc;
  pc.mode = Mode::interpolation;
  pc.seed = 5;
  const auto set = craft_poison(t.teacher.params, t.train, pc);
  ASSERT_FALSE(set.samples.empty());
  for (const auto& a : set.audit) {
    if (!a.accepted) continue;
    EXPECT_GE(a.selection_margin, pc.interpolation.margin);
    EXPECT_GT(a.t_target_like, 0.0);
    if (!std::isnan(a.t_source_like)) EXPECT_LT(a.t_source_like, a.t_target_like);
  }
  for (const auto& c : set.companion_clean) {
    EXPECT_EQ(c.label, pc.source_class);
    EXPECT_EQ(c.provenance, data::Provenance::companion);
    EXPECT_EQ(attacks::teacher_predict(t.teacher.params, c.image).label, pc.source_class);
  }
  for (const auto& s : set.samples) {
    EXPECT_EQ(attacks::teacher_predict(t.teacher.params, s.image).label, pc.target_class);
  }
}

TEST(Traditional, PatchOnlyAndTeacherDisagrees) {
  const auto& t = toy::get();
  PoisonConfig pc;
  pc.mode = Mode::traditional;
  pc.rate = 0.5;
  const auto set = craft_poison(t.teacher.params, t.train, pc);
  ASSERT_EQ(set.samples.size(), 50u);
  std::size_t disagree = 0;
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    const auto& base = set.manipulated[i];
    const auto& img = set.samples[i].image;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < 14; ++y) {
        for (std::size_t x = 0; x < 14; ++x) ASSERT_EQ(img.at(c, y, x), base.at(c, y, x));
      }
    }
    disagree += attacks::teacher_predict(t.teacher.params, img).label != pc.target_class;
  }
  EXPECT_GE(static_cast<double>(disagree) / set.samples.size(), 0.9);
}

TEST(Inject, AddAppendsAndReplaceKeepsSize) {
  const auto& t = toy::get();
  PoisonConfig pc;
  pc.mode = Mode::traditional;
  pc.rate = 0.2;
  const auto set = craft_poison(t.teacher.params, t.train, pc);
  const auto added = inject(t.train, set, pc);
  EXPECT_EQ(added.size(), t.train.size() + requested_count(pc, 100));
  EXPECT_TRUE(added.has_poisoned());

  pc.injection = Injection::replace;
  const auto replaced = inject(t.train, set, pc);
  EXPECT_EQ(replaced.size(), t.train.size());
  auto hist = replaced.label_histogram();
  EXPECT_EQ(hist[pc.source_class], 80u);
  EXPECT_EQ(hist[pc.target_class], 120u);
  std::set<std::uint64_t> poisoned_ids;
  for (const auto& s : set.samples) poisoned_ids.insert(s.id);
  for (const auto& e : replaced.examples) {
    if (e.provenance == data::Provenance::clean) EXPECT_FALSE(poisoned_ids.count(e.id)) << e.id;
  }

  const auto again = inject(t.train, set, pc);
  for (std::size_t i = 0; i < again.size(); ++i) EXPECT_EQ(again.examples[i].id, replaced.examples[i].id);
}

TEST(Inject, ReplaceNeedsEnoughSamples) {
  const auto& t = toy::get();
  PoisonConfig pc;
  pc.mode = Mode::traditional;
  pc.count = 2;
  const auto set = craft_poison(t.teacher.params, t.train, pc);
  pc.count.reset();
  pc.injection = Injection::replace;
  pc.rate = 0.5;
  EXPECT_THROW(inject(t.train, set, pc), ConfigError);
}

TEST(None, YieldsAnEmptySet) {
  const auto& t = toy::get();
  PoisonConfig pc;
  pc.mode = Mode::none;
  const auto set = craft_poison(t.teacher.params, t.train, pc);
  EXPECT_TRUE(set.samples.empty());
  EXPECT_EQ(inject(t.train, set, pc).size(), t.train.size());
}
