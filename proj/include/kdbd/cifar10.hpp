#pragma once
// CIFAR-10 binary version: each record is 1 label byte followed by 3072 pixel
// bytes (1024 red, 1024 green, 1024 blue, each row-major 32x32).

#include <cstddef>
#include <filesystem>
#include <utility>

#include "kdbd/data.hpp"

namespace kdbd::data {

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * kCifarSide * kCifarSide;
inline constexpr std::size_t kCifarClasses = 10;

/// Reads one batch file, appending to `out`. Ids continue from out.size().
/// Throws IoError naming the file (and record index for bad labels).
void read_cifar10_file(const std::filesystem::path& file, Dataset& out);

/// data_batch_1.bin .. data_batch_5.bin and test_batch.bin from `directory`.
std::pair<Dataset, Dataset> load_cifar10_binary(const std::filesystem::path& directory);

}  // namespace kdbd::data
