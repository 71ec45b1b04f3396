#include "sij/volume.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sij/rng.hpp"

using namespace sij;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "sij_volume_test";
  fs::create_directories(dir);
  return dir;
}

CtVolume make_volume(Dims3 dims, Spacing3 spacing, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::int16_t> hu(dims.count());
  for (auto& v : hu) v = static_cast<std::int16_t>(rng.uniform_int(4096)) - 1024;
  return CtVolume(dims, spacing, std::move(hu));
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(VolumeCore, SaveLoadRoundTripIdentity) {
  const auto vol = make_volume({7, 5, 4}, {0.5, 0.75, 2.0}, 42);
  const auto base = temp_dir() / "roundtrip";
  save_volume(vol, base);
  const auto back = load_volume(base);
  EXPECT_EQ(back.dims(), vol.dims());
  EXPECT_EQ(back.spacing(), vol.spacing());
  EXPECT_EQ(back.voxels(), vol.voxels());
}

TEST(VolumeCore, HeaderRawSizeMismatchFails) {
  const auto base = temp_dir() / "mismatch";
  const auto vol = make_volume({4, 4, 4}, {1, 1, 1}, 1);
  save_volume(vol, base);
  // truncate the payload to 63 samples
  std::ofstream raw(base.string() + ".raw", std::ios::binary | std::ios::trunc);
  std::vector<char> bytes(63 * 2, 0);
  raw.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  raw.close();
  EXPECT_THROW(load_volume(base), IoError);
}

TEST(VolumeCore, MissingFileFails) {
  EXPECT_THROW(load_volume(temp_dir() / "no_such_base"), IoError);
}

TEST(VolumeCore, NonPositiveSpacingRejected) {
  EXPECT_THROW(CtVolume({2, 2, 2}, {0.0, 1.0, 1.0}, std::vector<std::int16_t>(8, 0)),
               InvalidArgument);
  EXPECT_THROW(BinaryMask({2, 2, 2}, {1.0, -1.0, 1.0}), InvalidArgument);
}

TEST(VolumeCore, HuRangeEnforced) {
  std::vector<std::int16_t> hu(8, 0);
  hu[3] = 3072;
  EXPECT_THROW(CtVolume({2, 2, 2}, {1, 1, 1}, hu), InvalidArgument);
  hu[3] = -1025;
  EXPECT_THROW(CtVolume({2, 2, 2}, {1, 1, 1}, hu), InvalidArgument);
}

TEST(VolumeCore, RepeatedSavesAreByteIdentical) {
  const auto vol = make_volume({6, 3, 5}, {1.25, 1.25, 3.0}, 7);
  const auto a = temp_dir() / "det_a";
  const auto b = temp_dir() / "det_b";
  save_volume(vol, a);
  save_volume(vol, b);
  EXPECT_EQ(read_bytes(a.string() + ".json"), read_bytes(b.string() + ".json"));
  EXPECT_EQ(read_bytes(a.string() + ".raw"), read_bytes(b.string() + ".raw"));
}

TEST(VolumeCore, SaveOfLoadReproducesRawPayload) {
  const auto vol = make_volume({5, 5, 3}, {1, 1, 1}, 99);
  const auto a = temp_dir() / "orig";
  save_volume(vol, a);
  const auto b = temp_dir() / "copy";
  save_volume(load_volume(a), b);
  EXPECT_EQ(read_bytes(a.string() + ".raw"), read_bytes(b.string() + ".raw"));
}

TEST(VolumeCore, AllZeroVolumeRawPayload) {
  const CtVolume vol({2, 2, 2}, {1, 1, 1}, std::vector<std::int16_t>(8, 0));
  const auto base = temp_dir() / "zeros";
  save_volume(vol, base);
  const auto raw = read_bytes(base.string() + ".raw");
  ASSERT_EQ(raw.size(), 16u);
  for (const auto byte : raw) EXPECT_EQ(byte, 0);
}

TEST(VolumeCore, LoadedChecksumMatchesGenerator) {
  // A volume with a known HU sum survives the container round trip.
  const auto vol = make_volume({9, 8, 7}, {0.7, 0.7, 1.6}, 1234);
  std::int64_t checksum = 0;
  for (const auto v : vol.voxels()) checksum += v;
  const auto base = temp_dir() / "checksum";
  save_volume(vol, base);
  const auto back = load_volume(base);
  std::int64_t sum = 0;
  for (const auto v : back.voxels()) sum += v;
  EXPECT_EQ(sum, checksum);
}

TEST(VolumeCore, IndexToWorldOrigin) {
  const auto vol = make_volume({4, 4, 4}, {0.5, 0.5, 2.0}, 3);
  const auto w = index_to_world(vol, {0, 0, 0});
  EXPECT_EQ(w.x, 0.0);
  EXPECT_EQ(w.y, 0.0);
  EXPECT_EQ(w.z, 0.0);
}

TEST(VolumeCore, IndexToWorldComponentwise) {
  const auto vol = make_volume({16, 8, 8}, {0.5, 0.5, 2.0}, 3);
  const auto w = index_to_world(vol, {10, 4, 3});
  EXPECT_DOUBLE_EQ(w.x, 5.0);
  EXPECT_DOUBLE_EQ(w.y, 2.0);
  EXPECT_DOUBLE_EQ(w.z, 6.0);
}

TEST(VolumeCore, WorldIndexRoundTripProperty) {
  const auto vol = make_volume({20, 15, 10}, {0.33, 1.7, 2.5}, 5);
  Rng rng(17);
  for (int t = 0; t < 100; ++t) {
    const VoxelIndex idx{static_cast<int>(rng.uniform_int(20)),
                         static_cast<int>(rng.uniform_int(15)),
                         static_cast<int>(rng.uniform_int(10))};
    const auto back = world_to_index(vol, index_to_world(vol, idx));
    EXPECT_EQ(back, idx);
  }
}

TEST(VolumeCore, WorldToIndexOutsideGridFails) {
  const auto vol = make_volume({4, 4, 4}, {1, 1, 1}, 3);
  EXPECT_THROW(world_to_index(vol, {10.0, 0.0, 0.0}), InvalidArgument);
  EXPECT_THROW(world_to_index(vol, {-0.9, 0.0, 0.0}), InvalidArgument);
}

TEST(VolumeCore, IndexToWorldIsLinear) {
  const Spacing3 sp{0.7, 1.1, 2.3};
  Rng rng(23);
  for (int t = 0; t < 50; ++t) {
    const VoxelIndex a{static_cast<int>(rng.uniform_int(40)),
                       static_cast<int>(rng.uniform_int(40)),
                       static_cast<int>(rng.uniform_int(40))};
    const VoxelIndex b{static_cast<int>(rng.uniform_int(40)),
                       static_cast<int>(rng.uniform_int(40)),
                       static_cast<int>(rng.uniform_int(40))};
    const auto wa = index_to_world(sp, a);
    const auto wb = index_to_world(sp, b);
    const auto wab = index_to_world(sp, {a.i + b.i, a.j + b.j, a.k + b.k});
    EXPECT_DOUBLE_EQ(wab.x, wa.x + wb.x);
    EXPECT_DOUBLE_EQ(wab.y, wa.y + wb.y);
    EXPECT_DOUBLE_EQ(wab.z, wa.z + wb.z);
  }
}

TEST(VolumeCore, MaskRoundTripAndCompatibility) {
  const auto vol = make_volume({6, 5, 4}, {1, 1.5, 2}, 8);
  BinaryMask mask(vol.dims(), vol.spacing());
  mask.set(1, 2, 3);
  mask.set(5, 4, 0);
  const auto base = temp_dir() / "mask";
  save_mask(mask, base);
  const auto back = load_mask(base);
  EXPECT_EQ(back.bits(), mask.bits());
  EXPECT_TRUE(back.grid_compatible(vol));

  BinaryMask other({6, 5, 4}, {1, 1, 1});
  EXPECT_FALSE(other.grid_compatible(vol));
  EXPECT_THROW(require_grid_compatible(other, vol, "test"), InvalidArgument);
}

}  // namespace
