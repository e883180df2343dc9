#include "kdbd/cifar10.hpp"

#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "kdbd/error.hpp"

namespace kdbd::data {

void read_cifar10_file(const std::filesystem::path& file, Dataset& out) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR-10 file " + file.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw IoError(file.string() + ": size " + std::to_string(bytes.size()) +
                  " is not a positive multiple of the " + std::to_string(kCifarRecordBytes) +
                  "-byte record (truncated file?)");
  }
  out.num_classes = kCifarClasses;
  const std::size_t records = bytes.size() / kCifarRecordBytes;
  const std::size_t plane = kCifarSide * kCifarSide;
  out.examples.reserve(out.examples.size() + records);
  for (std::size_t r = 0; r < records; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] >= kCifarClasses) {
      throw IoError(file.string() + ": record " + std::to_string(r) + " has label byte " +
                    std::to_string(rec[0]) + " > 9");
    }
    LabeledExample ex;
    ex.label = rec[0];
    ex.id = out.examples.size();
    ex.image = Image(3, kCifarSide, kCifarSide);
    for (std::size_t i = 0; i < 3 * plane; ++i) ex.image.pixels[i] = static_cast<float>(rec[1 + i]) / 255.0f;
    out.examples.push_back(std::move(ex));
  }
}

std::pair<Dataset, Dataset> load_cifar10_binary(const std::filesystem::path& directory) {
  Dataset train, test;
  train.split = Split::train;
  test.split = Split::test;
  train.num_classes = test.num_classes = kCifarClasses;
  for (int i = 1; i <= 5; ++i) {
    read_cifar10_file(directory / ("data_batch_" + std::to_string(i) + ".bin"), train);
  }
  read_cifar10_file(directory / "test_batch.bin", test);
  return {std::move(train), std::move(test)};
}

}  // namespace kdbd::data
