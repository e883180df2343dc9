#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>

#include "kdbd/data.hpp"

namespace kdbd::data {

/// Procedural stand-in for a small natural-image benchmark: each class is a
/// distinct glyph (bars, plus, disk, ring, triangle, cross, outline square,
/// checkerboard, dots) drawn with random position, scale and colors on a noisy
/// background.
struct SyntheticConfig {
  std::size_t num_classes = 10;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  double noise = 0.08;
  /// Glyph brightness above the background, before per-image scaling in [0.5, 1].
  double contrast = 0.6;
  std::uint64_t seed = 0;

  static constexpr std::size_t kMaxClasses = 10;

  void validate() const;
};

/// Deterministic in `config`. Classes are interleaved in example order.
std::pair<Dataset, Dataset> generate_synthetic(const SyntheticConfig& config);

}  // namespace kdbd::data
