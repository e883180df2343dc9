#include "kdbd/data.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "kdbd/random.hpp"

namespace kdbd::data {

void Image::validate() const {
  if (pixels.size() != channels * height * width) {
    throw ShapeError("image buffer holds " + std::to_string(pixels.size()) + " values for shape " +
                     std::to_string(channels) + "x" + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (!(pixels[i] >= 0.0f && pixels[i] <= 1.0f)) {
      throw std::invalid_argument("pixel " + std::to_string(i) + " = " + std::to_string(pixels[i]) +
                                  " is outside [0, 1]");
    }
  }
}

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::clean:
      return "clean";
    case Provenance::companion:
      return "companion";
    case Provenance::poisoned_adversarial:
      return "poisoned_adversarial";
    case Provenance::poisoned_interpolation:
      return "poisoned_interpolation";
    case Provenance::poisoned_traditional:
      return "poisoned_traditional";
  }
  return "unknown";
}

void Dataset::validate() const {
  if (examples.empty()) throw std::invalid_argument("dataset is empty");
  if (num_classes == 0) throw std::invalid_argument("dataset has zero classes");
  const Image& first = examples.front().image;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    if (!ex.image.same_shape(first)) {
      throw ShapeError("dataset example " + std::to_string(i) + " has a different image shape");
    }
    if (ex.label >= num_classes) {
      throw std::invalid_argument("dataset example " + std::to_string(i) + " has label " +
                                  std::to_string(ex.label) + " >= " + std::to_string(num_classes));
    }
    ex.image.validate();
  }
}

std::vector<std::size_t> Dataset::indices_of_class(std::size_t label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].label == label) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::label_histogram() const {
  std::vector<std::size_t> h(num_classes, 0);
  for (const auto& ex : examples) h.at(ex.label) += 1;
  return h;
}

bool Dataset::has_poisoned() const {
  return std::any_of(examples.begin(), examples.end(),
                     [](const LabeledExample& e) { return e.provenance != Provenance::clean; });
}

Tensor stack_images(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("stack_images: no images");
  const Image& first = images.front();
  Tensor out({images.size(), first.channels, first.height, first.width});
  auto dst = out.data();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_shape(first)) throw ShapeError("stack_images: mixed image shapes");
    std::copy(images[i].pixels.begin(), images[i].pixels.end(), dst.begin() + i * first.size());
  }
  return out;
}

Tensor stack_examples(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("stack_examples: no indices");
  const Image& first = dataset.examples.at(indices.front()).image;
  Tensor out({indices.size(), first.channels, first.height, first.width});
  auto dst = out.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Image& img = dataset.examples.at(indices[i]).image;
    if (!img.same_shape(first)) throw ShapeError("stack_examples: mixed image shapes");
    std::copy(img.pixels.begin(), img.pixels.end(), dst.begin() + i * first.size());
  }
  return out;
}

std::vector<std::size_t> labels_of(const Dataset& dataset, std::span<const std::size_t> indices) {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(dataset.examples.at(i).label);
  return out;
}

Image image_from_tensor(const Tensor& batch, std::size_t index) {
  if (batch.rank() != 4) throw ShapeError("image_from_tensor: expected [B,C,H,W]");
  Image img(batch.dim(1), batch.dim(2), batch.dim(3));
  const auto row = batch.row(index);
  std::copy(row.begin(), row.end(), img.pixels.begin());
  return img;
}

std::vector<Batch> make_batches(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                bool shuffle) {
  if (batch_size == 0) throw std::invalid_argument("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < dataset_size; start += batch_size) {
    const std::size_t end = std::min(dataset_size, start + batch_size);
    out.push_back(Batch{std::vector<std::size_t>(order.begin() + start, order.begin() + end)});
  }
  return out;
}

}  // namespace kdbd::data
