#include <doctest.h>

#include <cstring>
#include <fstream>

#include "pjdm/binary_io.hpp"
#include "pjdm/dataset_io.hpp"
#include "test_util.hpp"

using namespace pjdm;
namespace fs = std::filesystem;

TEST_CASE("sinogram file layout") {
  const auto dir = test::scratch("sino_layout");
  Sinogram s(2, 3, {0.0, 0.5, 1.0, 1.5, 2.0, 2.5});
  write_sinogram(dir / "a.sino", s);
  const auto raw = binio::read_file(dir / "a.sino");
  REQUIRE(raw.size() == 16 + 6 * 4);
  CHECK(std::string(raw.data(), 4) == "SINO");
  auto u32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[off + i])) << (8 * i);
    return v;
  };
  CHECK(u32(4) == 1);
  CHECK(u32(8) == 2);
  CHECK(u32(12) == 3);
  // 0.5f little-endian is 00 00 00 3f.
  CHECK(u32(16 + 4) == 0x3f000000u);
  CHECK(read_sinogram(dir / "a.sino") == s);
}

TEST_CASE("corrupt sinogram files are rejected") {
  const auto dir = test::scratch("sino_corrupt");
  write_sinogram(dir / "a.sino", Sinogram(2, 2, {1, 2, 3, 4}));
  auto raw = binio::read_file(dir / "a.sino");
  auto bad = raw;
  bad[0] = 'X';
  binio::write_file_atomic(dir / "magic.sino", bad);
  CHECK_THROWS(read_sinogram(dir / "magic.sino"));
  bad = raw;
  bad[4] = 9;
  binio::write_file_atomic(dir / "version.sino", bad);
  CHECK_THROWS(read_sinogram(dir / "version.sino"));
  bad = raw;
  bad.resize(bad.size() - 1);
  binio::write_file_atomic(dir / "short.sino", bad);
  CHECK_THROWS(read_sinogram(dir / "short.sino"));
  CHECK_THROWS(read_sinogram(dir / "missing.sino"));
}

TEST_CASE("dataset round trip and stale file cleanup") {
  const auto dir = test::scratch("dataset_rt");
  const auto ds = gen_dataset(3, 2, Geometry{8, 12, 12}, 5, 2);
  std::ofstream(dir / "paired_0099_A.sino") << "stale";
  save_dataset(dir, ds);
  CHECK_FALSE(fs::exists(dir / "paired_0099_A.sino"));
  CHECK(fs::exists(dir / "paired_0000_A.sino"));
  CHECK(fs::exists(dir / "unpaired_0001_B.sino"));
  CHECK(fs::exists(dir / "test_0001_B.sino"));

  const auto back = load_dataset(dir);
  CHECK(back.geometry == ds.geometry);
  CHECK(back.master_seed == 5);
  CHECK(back.global_scale == ds.global_scale);
  REQUIRE(back.paired.size() == 3);
  REQUIRE(back.unpaired.size() == 2);
  REQUIRE(back.test.size() == 2);
  CHECK(test::max_abs_diff(back.paired[1].b.bins, ds.paired[1].b.bins) < 1e-7);
  CHECK(back.paired[1].spec.ellipses.size() == ds.paired[1].spec.ellipses.size());
  CHECK(back.test[0].spec.tracer_b_gain == ds.test[0].spec.tracer_b_gain);
}

TEST_CASE("malformed manifests are rejected and regeneration recovers") {
  const auto dir = test::scratch("dataset_bad");
  const auto ds = gen_dataset(2, 1, Geometry{8, 12, 12}, 6);
  save_dataset(dir, ds);
  std::ofstream(dir / "manifest.json") << "{ not json";
  CHECK_THROWS(load_dataset(dir));
  std::ofstream(dir / "manifest.json") << "{\"format\": \"other\"}";
  CHECK_THROWS(load_dataset(dir));
  save_dataset(dir, ds);
  CHECK(load_dataset(dir).paired.size() == 2);
}

TEST_CASE("atomic text write replaces content") {
  const auto dir = test::scratch("atomic");
  binio::write_text_atomic(dir / "x.txt", "one");
  binio::write_text_atomic(dir / "x.txt", "two");
  const auto raw = binio::read_file(dir / "x.txt");
  CHECK(std::string(raw.begin(), raw.end()) == "two");
  for (const auto& e : fs::directory_iterator(dir)) CHECK(e.path().filename() == "x.txt");
}
