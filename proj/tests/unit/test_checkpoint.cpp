#include <gtest/gtest.h>

#include <filesystem>

#include "kdbd/checkpoint.hpp"
#include "kdbd/error.hpp"

using namespace kdbd;

namespace {

nn::NetworkParams<float> sample_net() {
  nn::ArchSpec a;
  a.block_widths = {4, 6};
  a.width_multiplier = 0.5;
  return nn::init_network<float>(a, nn::Role::teacher, 11);
}

}  // namespace

TEST(Checkpoint, BytesRoundTripExactly) {
  const auto p = sample_net();
  const auto bytes = nn::checkpoint_bytes(p);
  EXPECT_EQ(bytes.substr(0, 4), "KDBL");
  const auto q = nn::parse_checkpoint(bytes);
  EXPECT_EQ(q.arch, p.arch);
  EXPECT_EQ(q.role, nn::Role::teacher);
  EXPECT_EQ(q.names, p.names);
  for (std::size_t t = 0; t < p.tensors.size(); ++t) EXPECT_EQ(q.tensors[t], p.tensors[t]);
  EXPECT_EQ(nn::checkpoint_bytes(q), bytes);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto p = sample_net();
  const auto path = std::filesystem::temp_directory_path() / "kdbd_test_checkpoint.ckpt";
  nn::save_checkpoint(p, path);
  const auto q = nn::load_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(nn::checkpoint_bytes(q), nn::checkpoint_bytes(p));
}

TEST(Checkpoint, CorruptInputIsRejected) {
  const auto bytes = nn::checkpoint_bytes(sample_net());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(nn::parse_checkpoint(bad_magic), IoError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(nn::parse_checkpoint(bad_version), IoError);
  EXPECT_THROW(nn::parse_checkpoint(bytes.substr(0, bytes.size() - 3)), IoError);
  EXPECT_THROW(nn::parse_checkpoint(bytes.substr(0, 10)), IoError);
  EXPECT_THROW(nn::load_checkpoint("/nonexistent/kdbd.ckpt"), IoError);
}
