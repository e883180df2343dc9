#include "kdbd/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "kdbd/error.hpp"
#include "kdbd/random.hpp"

namespace kdbd::data {

void SyntheticConfig::validate() const {
  if (num_classes < 2 || num_classes > kMaxClasses) {
    throw ConfigError("synthetic: num_classes must be in [2, " + std::to_string(kMaxClasses) + "]");
  }
  if (channels != 1 && channels != 3) throw ConfigError("synthetic: channels must be 1 or 3");
  if (height < 8 || width < 8) throw ConfigError("synthetic: images must be at least 8x8");
  if (train_per_class == 0 || test_per_class == 0) {
    throw ConfigError("synthetic: per-class train/test counts must be positive");
  }
  if (!(noise >= 0.0 && noise <= 0.5)) throw ConfigError("synthetic: noise must be in [0, 0.5]");
  if (!(contrast > 0.0 && contrast <= 1.0)) throw ConfigError("synthetic: contrast must be in (0, 1]");
}

namespace {

// Glyph coverage in [0, 1] at normalized coordinates (u right, v down), both
// roughly in [-1, 1] over the glyph's bounding box.
double glyph(std::size_t cls, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  const double r = std::hypot(u, v);
  switch (cls) {
    case 0:  // horizontal bars
      return (au < 0.85 && (std::abs(v - 0.45) < 0.2 || std::abs(v + 0.45) < 0.2)) ? 1.0 : 0.0;
    case 1:  // vertical bars
      return (av < 0.85 && (std::abs(u - 0.45) < 0.2 || std::abs(u + 0.45) < 0.2)) ? 1.0 : 0.0;
    case 2:  // plus
      return ((au < 0.2 && av < 0.85) || (av < 0.2 && au < 0.85)) ? 1.0 : 0.0;
    case 3:  // filled disk
      return r < 0.62 ? 1.0 : 0.0;
    case 4:  // ring
      return (r > 0.5 && r < 0.85) ? 1.0 : 0.0;
    case 5:  // upward triangle
      return (v > -0.7 && v < 0.7 && au < (v + 0.7) * 0.6) ? 1.0 : 0.0;
    case 6:  // diagonal cross
      return (r < 0.95 && (std::abs(u - v) < 0.3 || std::abs(u + v) < 0.3)) ? 1.0 : 0.0;
    case 7:  // outline square
      return (std::max(au, av) > 0.55 && std::max(au, av) < 0.85) ? 1.0 : 0.0;
    case 8: {  // checkerboard
      if (au >= 0.8 || av >= 0.8) return 0.0;
      const int iu = static_cast<int>(std::floor((u + 0.8) / 0.4));
      const int iv = static_cast<int>(std::floor((v + 0.8) / 0.4));
      return ((iu + iv) % 2 == 0) ? 1.0 : 0.0;
    }
    case 9:  // two dots
      return (std::hypot(u - 0.48, v) < 0.32 || std::hypot(u + 0.48, v) < 0.32) ? 1.0 : 0.0;
    default:
      return 0.0;
  }
}

Image draw(const SyntheticConfig& cfg, std::size_t cls, Rng& rng) {
  Image img(cfg.channels, cfg.height, cfg.width);
  const double half = 0.5 * static_cast<double>(std::min(cfg.height, cfg.width));
  const double extent = (half - 2.5) * rng.uniform(0.85, 1.05);
  const double jitter = 0.1 * half;
  const double cy = 0.5 * static_cast<double>(cfg.height) - 0.5 + rng.uniform(-jitter, jitter);
  const double cx = 0.5 * static_cast<double>(cfg.width) - 0.5 + rng.uniform(-jitter, jitter);
  std::array<double, 3> fg{}, bg{};
  for (std::size_t c = 0; c < cfg.channels; ++c) {
    bg[c] = rng.uniform(0.05, 0.45);
    fg[c] = std::min(1.0, bg[c] + cfg.contrast * rng.uniform(0.5, 1.0));
  }
  // 2x2 supersampling for soft glyph edges.
  for (std::size_t y = 0; y < cfg.height; ++y) {
    for (std::size_t x = 0; x < cfg.width; ++x) {
      double cover = 0.0;
      for (double sy : {-0.25, 0.25}) {
        for (double sx : {-0.25, 0.25}) {
          const double u = (static_cast<double>(x) + sx - cx) / extent;
          const double v = (static_cast<double>(y) + sy - cy) / extent;
          cover += glyph(cls, u, v);
        }
      }
      cover *= 0.25;
      for (std::size_t c = 0; c < cfg.channels; ++c) {
        const double value = bg[c] + cover * (fg[c] - bg[c]) + cfg.noise * rng.normal();
        img.at(c, y, x) = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }
  return img;
}

Dataset make_split(const SyntheticConfig& cfg, std::size_t per_class, Split split, std::uint64_t stream) {
  Dataset ds;
  ds.num_classes = cfg.num_classes;
  ds.split = split;
  ds.examples.reserve(per_class * cfg.num_classes);
  Rng rng(derive_seed(cfg.seed, stream));
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t cls = 0; cls < cfg.num_classes; ++cls) {
      LabeledExample ex;
      ex.image = draw(cfg, cls, rng);
      ex.label = cls;
      ex.id = ds.examples.size();
      ds.examples.push_back(std::move(ex));
    }
  }
  return ds;
}

}  // namespace

std::pair<Dataset, Dataset> generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  return {make_split(config, config.train_per_class, Split::train, 1),
          make_split(config, config.test_per_class, Split::test, 2)};
}

}  // namespace kdbd::data
