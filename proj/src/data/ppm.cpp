#include "kdbd/ppm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "kdbd/error.hpp"

namespace kdbd::data {

std::string encode_ppm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw std::invalid_argument("PPM/PGM output needs 1 or 3 channels, got " +
                                std::to_string(image.channels));
  }
  std::string out = (image.channels == 3 ? "P6\n" : "P5\n") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.size());
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
      }
    }
  }
  return out;
}

namespace {

// Reads one whitespace-delimited header integer, skipping '#' comments.
std::size_t header_int(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t value = 0, digits = 0;
  while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
    ++pos;
    if (++digits > 9) throw IoError("PPM header value too large");
  }
  if (digits == 0) throw IoError("malformed PPM header: expected an integer at byte " + std::to_string(pos));
  return value;
}

}  // namespace

Image decode_ppm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) {
    throw IoError("malformed PPM header: expected P6 or P5 magic");
  }
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  std::size_t pos = 2;
  const std::size_t width = header_int(bytes, pos);
  const std::size_t height = header_int(bytes, pos);
  const std::size_t maxval = header_int(bytes, pos);
  if (width == 0 || height == 0) throw IoError("malformed PPM header: zero extent");
  if (maxval != 255) throw IoError("unsupported PPM maxval " + std::to_string(maxval) + " (need 255)");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw IoError("malformed PPM header: missing separator before pixel data");
  }
  ++pos;
  const std::size_t need = width * height * channels;
  if (bytes.size() - pos != need) {
    throw IoError("PPM payload holds " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                  std::to_string(need));
  }
  Image img(channels, height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        img.at(c, y, x) = static_cast<float>(static_cast<unsigned char>(bytes[pos++])) / 255.0f;
      }
    }
  }
  return img;
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  const std::string bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open image for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing image: " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_ppm(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace kdbd::data
