#include "kdbd/trigger.hpp"

#include <stdexcept>
#include <string>

namespace kdbd::data {

void TriggerSpec::validate_for(const Image& image) const {
  if (patch_height == 0 || patch_width == 0) throw std::invalid_argument("trigger patch must be nonempty");
  if (patch_height > image.height || patch_width > image.width) {
    throw std::invalid_argument("trigger patch " + std::to_string(patch_height) + "x" +
                                std::to_string(patch_width) + " does not fit a " +
                                std::to_string(image.height) + "x" + std::to_string(image.width) +
                                " image");
  }
  if (area_fraction(image.height, image.width) > kMaxAreaFraction) {
    throw std::invalid_argument("trigger patch covers " +
                                std::to_string(100.0 * area_fraction(image.height, image.width)) +
                                "% of the image; at most 2% is allowed");
  }
  if (!(fill >= 0.0f && fill <= 1.0f)) throw std::invalid_argument("trigger fill must lie in [0, 1]");
}

Image apply_trigger(const Image& image, const TriggerSpec& trigger) {
  trigger.validate_for(image);
  Image out = image;
  const std::size_t y0 = image.height - trigger.patch_height;
  const std::size_t x0 = image.width - trigger.patch_width;
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = y0; y < image.height; ++y) {
      for (std::size_t x = x0; x < image.width; ++x) out.at(c, y, x) = trigger.fill;
    }
  }
  return out;
}

bool has_trigger(const Image& image, const TriggerSpec& trigger) {
  if (trigger.patch_height > image.height || trigger.patch_width > image.width) return false;
  const std::size_t y0 = image.height - trigger.patch_height;
  const std::size_t x0 = image.width - trigger.patch_width;
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = y0; y < image.height; ++y) {
      for (std::size_t x = x0; x < image.width; ++x) {
        if (image.at(c, y, x) != trigger.fill) return false;
      }
    }
  }
  return true;
}

}  // namespace kdbd::data
