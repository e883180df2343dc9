#pragma once
// Poison-set construction and injection into the distillation dataset.
//
// Three recipes:
//   adversarial   - targeted attack on a source image until the teacher predicts
//                   the target, then trigger, then re-verify (re-attacking on failure)
//   interpolation - pixel-space path from a source image toward a target-class
//                   exemplar; margin-gated source-like / target-like selection
//   traditional   - trigger + flipped label, no teacher involvement

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "kdbd/attacks.hpp"
#include "kdbd/data.hpp"
#include "kdbd/trigger.hpp"

namespace kdbd::poison {

enum class Mode { none, adversarial, interpolation, traditional };
std::string_view mode_name(Mode m);
Mode parse_mode(std::string_view text);

enum class Injection { add, replace };
std::string_view injection_name(Injection i);
Injection parse_injection(std::string_view text);

struct InterpolationConfig {
  std::size_t grid = 33;  // evenly spaced t values in [0, 1]
  double margin = 0.10;   // required probability gap between source and target
};

struct PoisonConfig {
  std::size_t source_class = 4;
  std::size_t target_class = 6;
  Mode mode = Mode::adversarial;
  attacks::AttackConfig attack;
  InterpolationConfig interpolation;
  data::TriggerSpec trigger;
  /// Number of poison samples wanted; when unset, derived from `rate` and the
  /// source-class size (rounded for add mode, floored for replace mode).
  std::optional<std::size_t> count;
  double rate = 0.1;
  Injection injection = Injection::add;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const;
};

struct AuditRecord {
  std::uint64_t base_id = 0;
  Mode mode = Mode::none;
  bool accepted = false;
  std::size_t retries = 0;
  std::size_t iterations = 0;
  /// Teacher probability of the target class on the triggered image (NaN if not queried).
  double target_probability = 0.0;
  /// Interpolation only: selected path positions (NaN when absent).
  double t_source_like = 0.0;
  double t_target_like = 0.0;
  /// Interpolation only: p_target - p_source at the selected target-like point.
  double selection_margin = 0.0;
  std::string note;
};

struct PoisonSet {
  std::vector<data::LabeledExample> samples;         // triggered, target-labeled
  std::vector<data::Image> manipulated;              // untriggered counterpart of each sample
  std::vector<data::LabeledExample> companion_clean; // interpolation: source-like, source-labeled
  std::vector<AuditRecord> audit;                    // one per attempted base image, by base id
  std::size_t attempted = 0;
  std::size_t dropped = 0;
};

/// Poison samples requested by `config` for a training set with `source_count`
/// images of the source class.
std::size_t requested_count(const PoisonConfig& config, std::size_t source_count);

PoisonSet craft_adversarial_poison(const attacks::Model& teacher, const data::Dataset& train,
                                   const PoisonConfig& config);
PoisonSet craft_interpolation_poison(const attacks::Model& teacher, const data::Dataset& train,
                                     const PoisonConfig& config);
PoisonSet craft_traditional_poison(const data::Dataset& train, const PoisonConfig& config);

/// Dispatches on config.mode; Mode::none yields an empty set.
PoisonSet craft_poison(const attacks::Model& teacher, const data::Dataset& train, const PoisonConfig& config);

/// Add mode appends samples (and companions); replace mode swaps
/// floor(rate * |source|) source-class examples for poison samples. The result
/// is reshuffled by config.seed.
data::Dataset inject(const data::Dataset& train, const PoisonSet& poison, const PoisonConfig& config);

void write_audit_csv(const PoisonSet& poison, const std::filesystem::path& path);

}  // namespace kdbd::poison
