#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "kdbd/cifar10.hpp"
#include "kdbd/error.hpp"
#include "kdbd/ppm.hpp"
#include "kdbd/synthetic.hpp"
#include "kdbd/trigger.hpp"

using namespace kdbd;
using namespace kdbd::data;
namespace fs = std::filesystem;

TEST(Synthetic, DeterministicInSeed) {
  SyntheticConfig cfg;
  cfg.train_per_class = 10;
  cfg.test_per_class = 5;
  const auto [a_train, a_test] = generate_synthetic(cfg);
  const auto [b_train, b_test] = generate_synthetic(cfg);
  ASSERT_EQ(a_train.size(), 100u);
  ASSERT_EQ(a_test.size(), 50u);
  for (std::size_t i = 0; i < a_train.size(); ++i) {
    EXPECT_EQ(a_train.examples[i].image, b_train.examples[i].image);
    EXPECT_EQ(a_train.examples[i].label, b_train.examples[i].label);
  }
  cfg.seed = 1;
  const auto [c_train, c_test] = generate_synthetic(cfg);
  EXPECT_EQ(c_train.label_histogram(), a_train.label_histogram());
  EXPECT_NE(c_train.examples[0].image, a_train.examples[0].image);
}

TEST(Synthetic, BalancedValidAndDisjointIds) {
  const auto [train, test] = generate_synthetic({});
  train.validate();
  test.validate();
  EXPECT_EQ(train.label_histogram(), std::vector<std::size_t>(10, 100));
  EXPECT_EQ(test.label_histogram(), std::vector<std::size_t>(10, 50));
  EXPECT_EQ(train.split, Split::train);
  EXPECT_EQ(test.split, Split::test);
  EXPECT_FALSE(train.has_poisoned());
  std::set<std::uint64_t> ids;
  for (const auto& e : train.examples) ids.insert(e.id);
  EXPECT_EQ(ids.size(), train.size());
}

TEST(Synthetic, RejectsBadConfig) {
  SyntheticConfig cfg;
  cfg.num_classes = 11;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
  cfg = {};
  cfg.train_per_class = 0;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
}

TEST(Batches, FullBatchAndSizes) {
  const auto one = make_batches(10, 10, 0, true);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].indices.size(), 10u);
  const auto many = make_batches(130, 64, 0, false);
  ASSERT_EQ(many.size(), 3u);
  EXPECT_EQ(many[2].indices.size(), 2u);
  EXPECT_EQ(many[1].indices.front(), 64u);
  EXPECT_THROW(make_batches(10, 0, 0, true), std::invalid_argument);
}

TEST(Batches, SeededPermutation) {
  auto flat = [](const std::vector<Batch>& bs) {
    std::vector<std::size_t> out;
    for (const auto& b : bs) out.insert(out.end(), b.indices.begin(), b.indices.end());
    return out;
  };
  const auto a = flat(make_batches(200, 64, 5, true));
  EXPECT_EQ(a, flat(make_batches(200, 64, 5, true)));
  EXPECT_NE(a, flat(make_batches(200, 64, 6, true)));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Batches, LabelMultisetPreserved) {
  const auto [train, test] = generate_synthetic({});
  std::vector<std::size_t> hist(10, 0);
  for (const auto& b : make_batches(train, 64, 3, true)) {
    for (auto l : labels_of(train, b.indices)) ++hist[l];
  }
  EXPECT_EQ(hist, train.label_histogram());
}

TEST(Stacking, TensorLayoutMatchesImages) {
  const auto [train, test] = generate_synthetic({});
  const std::vector<std::size_t> idx{3, 17};
  const auto t = stack_examples(train, idx);
  EXPECT_EQ(t.shape(), (std::vector<std::size_t>{2, 3, 16, 16}));
  EXPECT_EQ(image_from_tensor(t, 1), train.examples[17].image);
}

TEST(Trigger, StampsOnlyThePatch) {
  Image img(3, 16, 16, 0.0f);
  const TriggerSpec trig;
  const auto out = apply_trigger(img, trig);
  std::size_t changed = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < 16; ++y) {
      for (std::size_t x = 0; x < 16; ++x) {
        if (out.at(c, y, x) != img.at(c, y, x)) {
          ++changed;
          EXPECT_GE(y, 14u);
          EXPECT_GE(x, 14u);
        }
      }
    }
  }
  EXPECT_EQ(changed, 12u);
  EXPECT_TRUE(has_trigger(out, trig));
  EXPECT_FALSE(has_trigger(img, trig));
  EXPECT_EQ(apply_trigger(out, trig), out);
}

TEST(Trigger, AreaAndFit) {
  const TriggerSpec three{3, 3, 1.0f};
  EXPECT_DOUBLE_EQ(three.area_fraction(32, 32), 9.0 / 1024.0);
  EXPECT_NO_THROW(three.validate_for(Image(3, 32, 32)));
  EXPECT_THROW(three.validate_for(Image(3, 16, 16)), std::invalid_argument);  // 3.5% of the image
  EXPECT_THROW((TriggerSpec{20, 2, 1.0f}.validate_for(Image(3, 16, 16))), std::invalid_argument);
}

TEST(Ppm, EncodesAndRoundTrips) {
  const Image ones(3, 2, 2, 1.0f);
  const auto bytes = encode_ppm(ones);
  ASSERT_EQ(bytes.substr(0, 2), "P6");
  const auto payload = bytes.substr(bytes.size() - 12);
  EXPECT_TRUE(std::all_of(payload.begin(), payload.end(), [](char c) { return static_cast<unsigned char>(c) == 255; }));

  const auto [train, test] = generate_synthetic({});
  const auto& img = train.examples[0].image;
  const auto back = decode_ppm(encode_ppm(img));
  ASSERT_TRUE(back.same_shape(img));
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 0.5 / 255.0 + 1e-6);
  EXPECT_EQ(encode_ppm(back), encode_ppm(img));

  const Image gray(1, 3, 3, 0.5f);
  EXPECT_EQ(encode_ppm(gray).substr(0, 2), "P5");
  EXPECT_THROW(decode_ppm("P3\n1 1\n255\n"), IoError);
}

namespace {

void write_records(const fs::path& path, const std::vector<unsigned char>& labels) {
  std::ofstream out(path, std::ios::binary);
  for (auto l : labels) {
    out.put(static_cast<char>(l));
    for (std::size_t i = 0; i < 3072; ++i) out.put(static_cast<char>((i + l) % 256));
  }
}

}  // namespace

TEST(Cifar10, ReadsRecordsAndRejectsMalformedFiles) {
  const auto dir = fs::temp_directory_path() / "kdbd_cifar_fixture";
  fs::create_directories(dir);
  write_records(dir / "ok.bin", {3, 7});
  Dataset d;
  d.num_classes = 10;
  read_cifar10_file(dir / "ok.bin", d);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.examples[1].label, 7u);
  EXPECT_EQ(d.examples[0].image.channels, 3u);
  EXPECT_EQ(d.examples[0].image.height, 32u);
  EXPECT_FLOAT_EQ(d.examples[0].image.at(0, 0, 1), 4.0f / 255.0f);
  EXPECT_FLOAT_EQ(d.examples[1].image.at(1, 0, 0), static_cast<float>((1024 + 7) % 256) / 255.0f);

  write_records(dir / "badlabel.bin", {3, 12});
  Dataset e;
  e.num_classes = 10;
  EXPECT_THROW(read_cifar10_file(dir / "badlabel.bin", e), IoError);

  {
    std::ofstream out(dir / "short.bin", std::ios::binary);
    out << std::string(100, '\0');
  }
  EXPECT_THROW(read_cifar10_file(dir / "short.bin", e), IoError);
  EXPECT_THROW(load_cifar10_binary(dir / "missing"), IoError);
  fs::remove_all(dir);
}
