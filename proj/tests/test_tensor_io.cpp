#include <gtest/gtest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "uap/error.hpp"
#include "uap/tensor_io.hpp"

namespace uap {
namespace {

TEST(Uapt, HeaderLayoutIsLittleEndian) {
  const Tensor t(Shape{2, 1}, {1.0, -2.0});
  const auto bytes = encode_uapt(t);
  ASSERT_EQ(bytes.size(), 4u + 1 + 1 + 2 * 4 + 2 * 8);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "UAPT");
  EXPECT_EQ(bytes[4], 1);  // version
  EXPECT_EQ(bytes[5], 2);  // rank
  EXPECT_EQ(bytes[6], 2);  // dim 0, low byte first
  EXPECT_EQ(bytes[7], 0);
  EXPECT_EQ(bytes[10], 1);  // dim 1
  // 1.0 = 0x3FF0000000000000, stored low byte first.
  EXPECT_EQ(bytes[14 + 7], 0x3F);
  EXPECT_EQ(bytes[14 + 6], 0xF0);
}

TEST(Uapt, RoundTripIsExact) {
  Lcg64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor t = testing::random_tensor(rng, Shape{1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(3)}, -1e3, 1e3);
    EXPECT_EQ(decode_uapt(encode_uapt(t)), t);
  }
}

TEST(Uapt, RejectsCorruption) {
  auto bytes = encode_uapt(Tensor::vector({1.0, 2.0}));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_uapt(bad_magic), IntegrityError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(decode_uapt(bad_version), IntegrityError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_uapt(truncated), IntegrityError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_uapt(trailing), IntegrityError);
  EXPECT_THROW(decode_uapt(std::vector<std::uint8_t>{'U', 'A'}), IntegrityError);
}

TEST(Uapt, FileRoundTripAndMissingFile) {
  const auto dir = std::filesystem::temp_directory_path() / "uap_test_tensor_io";
  std::filesystem::create_directories(dir);
  const Tensor t(Shape{3}, {0.25, 0.5, 0.75});
  write_uapt(dir / "t.uapt", t);
  EXPECT_EQ(read_uapt(dir / "t.uapt"), t);
  EXPECT_THROW(read_uapt(dir / "missing.uapt"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Sha256, MatchesKnownDigest) {
  EXPECT_EQ(sha256_hex(std::string("abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

}  // namespace
}  // namespace uap
