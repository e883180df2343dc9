#pragma once
// Clean accuracy, attack success rate variants and confusion matrices.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "kdbd/data.hpp"
#include "kdbd/network.hpp"
#include "kdbd/trigger.hpp"

namespace kdbd::eval {

using Model = nn::NetworkParams<float>;

enum class Variant {
  trigger_only,            // clean source-class test images + trigger
  manipulated_triggered,   // caller-supplied manipulated images + trigger
  triggered_clean_source,  // as trigger_only; acc = fraction still predicted as source
};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view text);

struct EvalSpec {
  Variant variant = Variant::trigger_only;
  std::size_t source_class = 4;
  std::size_t target_class = 6;
  data::TriggerSpec trigger;
};

struct MetricsRow {
  Variant variant = Variant::trigger_only;
  /// Clean test accuracy, except for triggered_clean_source where it is the
  /// fraction of triggered images predicted as the source class.
  double acc = 0.0;
  double asr = 0.0;
  std::size_t n = 0;
  /// Fraction of the evaluated (triggered) images predicted as each class.
  std::vector<double> class_fractions;
};

/// argmax predictions, lowest index on ties.
std::vector<std::size_t> predict(const Model& model, std::span<const data::Image> images);

double accuracy(const Model& model, const data::Dataset& test_set);

/// `manipulated` is required (nonempty) for Variant::manipulated_triggered and ignored otherwise.
MetricsRow attack_success_rate(const Model& model, const data::Dataset& clean_test_set, const EvalSpec& spec,
                               std::span<const data::Image> manipulated = {});

/// counts[true][predicted]
std::vector<std::vector<std::size_t>> confusion_matrix(const Model& model, const data::Dataset& test_set);

}  // namespace kdbd::eval
