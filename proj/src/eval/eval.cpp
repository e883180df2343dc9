#include "kdbd/eval.hpp"

#include <algorithm>

#include "kdbd/error.hpp"

namespace kdbd::eval {
namespace {

constexpr std::size_t kChunk = 256;

std::vector<data::Image> images_of(const data::Dataset& ds) {
  std::vector<data::Image> out;
  out.reserve(ds.size());
  for (const auto& ex : ds.examples) out.push_back(ex.image);
  return out;
}

void check_classes(const Model& model, const EvalSpec& spec) {
  const auto k = model.arch.num_classes;
  if (spec.source_class >= k || spec.target_class >= k) {
    throw ConfigError("eval: source/target class out of range for a " + std::to_string(k) + "-class model");
  }
  if (spec.source_class == spec.target_class) throw ConfigError("eval: source and target class must differ");
}

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::trigger_only: return "trigger_only";
    case Variant::manipulated_triggered: return "manipulated_triggered";
    case Variant::triggered_clean_source: return "triggered_clean_source";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  for (Variant v : {Variant::trigger_only, Variant::manipulated_triggered, Variant::triggered_clean_source}) {
    if (text == variant_name(v)) return v;
  }
  throw ConfigError("unknown eval variant '" + std::string(text) + "'");
}

std::vector<std::size_t> predict(const Model& model, std::span<const data::Image> images) {
  std::vector<std::size_t> out;
  out.reserve(images.size());
  const std::size_t k = model.arch.num_classes;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    const auto logits = nn::infer(model, data::stack_images(chunk));
    const auto& z = logits.data();
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const auto row = z.begin() + static_cast<std::ptrdiff_t>(b * k);
      out.push_back(static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(k)) - row));
    }
  }
  return out;
}

double accuracy(const Model& model, const data::Dataset& test_set) {
  if (test_set.examples.empty()) throw ConfigError("accuracy: empty test set");
  const auto preds = predict(model, images_of(test_set));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == test_set.examples[i].label;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

MetricsRow attack_success_rate(const Model& model, const data::Dataset& clean_test_set, const EvalSpec& spec,
                               std::span<const data::Image> manipulated) {
  check_classes(model, spec);
  std::vector<data::Image> triggered;
  if (spec.variant == Variant::manipulated_triggered) {
    if (manipulated.empty()) throw ConfigError("eval: manipulated_triggered needs manipulated images");
    for (const auto& img : manipulated) triggered.push_back(data::apply_trigger(img, spec.trigger));
  } else {
    for (const auto& ex : clean_test_set.examples) {
      if (ex.label == spec.source_class) triggered.push_back(data::apply_trigger(ex.image, spec.trigger));
    }
    if (triggered.empty()) {
      throw ConfigError("eval: test set has no images of source class " + std::to_string(spec.source_class));
    }
  }

  const auto preds = predict(model, triggered);
  MetricsRow row;
  row.variant = spec.variant;
  row.n = preds.size();
  std::vector<std::size_t> counts(model.arch.num_classes, 0);
  for (auto p : preds) ++counts[p];
  const double n = static_cast<double>(row.n);
  row.class_fractions.resize(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) row.class_fractions[c] = static_cast<double>(counts[c]) / n;
  row.asr = row.class_fractions[spec.target_class];
  row.acc = spec.variant == Variant::triggered_clean_source ? row.class_fractions[spec.source_class]
                                                            : accuracy(model, clean_test_set);
  return row;
}

std::vector<std::vector<std::size_t>> confusion_matrix(const Model& model, const data::Dataset& test_set) {
  const std::size_t k = model.arch.num_classes;
  std::vector<std::vector<std::size_t>> m(k, std::vector<std::size_t>(k, 0));
  const auto preds = predict(model, images_of(test_set));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto label = test_set.examples[i].label;
    if (label >= k) throw ConfigError("confusion_matrix: label " + std::to_string(label) + " out of range");
    ++m[label][preds[i]];
  }
  return m;
}

}  // namespace kdbd::eval
