#pragma once

#include <cstddef>

#include "kdbd/data.hpp"

namespace kdbd::data {

/// A solid square-ish patch flush against the bottom-right corner.
struct TriggerSpec {
  std::size_t patch_height = 2;
  std::size_t patch_width = 2;
  float fill = 1.0f;

  /// Largest patch area allowed, as a fraction of the image area.
  static constexpr double kMaxAreaFraction = 0.02;

  double area_fraction(std::size_t image_height, std::size_t image_width) const {
    return static_cast<double>(patch_height * patch_width) /
           static_cast<double>(image_height * image_width);
  }

  /// Throws std::invalid_argument if the patch does not fit or is too large.
  void validate_for(const Image& image) const;
};

/// Returns a copy of `image` with the patch region set to `trigger.fill` in all channels.
Image apply_trigger(const Image& image, const TriggerSpec& trigger);

/// True when every value inside the patch region equals the fill value.
bool has_trigger(const Image& image, const TriggerSpec& trigger);

}  // namespace kdbd::data
