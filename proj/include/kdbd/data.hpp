#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "kdbd/tensor.hpp"

namespace kdbd::data {

/// Channel-major image with pixels in [0, 1].
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  std::size_t size() const { return pixels.size(); }
  float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
  bool same_shape(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  /// Throws std::invalid_argument if any pixel is outside [0, 1] or the buffer size is wrong.
  void validate() const;

  friend bool operator==(const Image&, const Image&) = default;
};

enum class Provenance {
  clean,
  companion,  // manipulated but labeled with its true (source) class
  poisoned_adversarial,
  poisoned_interpolation,
  poisoned_traditional,
};

std::string_view provenance_name(Provenance p);
inline bool is_poisoned(Provenance p) {
  return p == Provenance::poisoned_adversarial || p == Provenance::poisoned_interpolation ||
         p == Provenance::poisoned_traditional;
}

struct LabeledExample {
  Image image;
  std::size_t label = 0;
  Provenance provenance = Provenance::clean;
  /// Stable identifier; poisoned samples carry the id of the image they were derived from.
  std::uint64_t id = 0;
};

enum class Split { train, test };

struct Dataset {
  std::vector<LabeledExample> examples;
  std::size_t num_classes = 0;
  Split split = Split::train;

  std::size_t size() const { return examples.size(); }
  /// Nonempty, shared image shape, labels in range, pixels in [0, 1].
  void validate() const;
  std::vector<std::size_t> indices_of_class(std::size_t label) const;
  std::vector<std::size_t> label_histogram() const;
  bool has_poisoned() const;
};

/// Stacks the selected images into a [B, C, H, W] tensor.
Tensor stack_images(std::span<const Image> images);
Tensor stack_examples(const Dataset& dataset, std::span<const std::size_t> indices);
std::vector<std::size_t> labels_of(const Dataset& dataset, std::span<const std::size_t> indices);

Image image_from_tensor(const Tensor& batch, std::size_t index);

struct Batch {
  std::vector<std::size_t> indices;
};

/// One epoch of batches. With `shuffle`, the order is a permutation drawn from
/// `seed`; the final partial batch is kept. batch_size must be >= 1.
std::vector<Batch> make_batches(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                bool shuffle);
inline std::vector<Batch> make_batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed,
                                       bool shuffle) {
  return make_batches(dataset.size(), batch_size, seed, shuffle);
}

}  // namespace kdbd::data
