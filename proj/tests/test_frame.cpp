#include <catch_amalgamated.hpp>

#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "helpers.hpp"
#include "vip/frame.hpp"
#include "vip/rng.hpp"

using namespace vip;

namespace {

PixelFrame random_frame(std::uint32_t w, std::uint32_t h, std::uint64_t seed) {
  PixelFrame f(w, h);
  Rng rng(seed);
  for (auto& p : f.adu) p = static_cast<float>(rng.normal() * 10.0);
  f.meta.frame_index = seed;
  f.meta.current_on = (seed % 2) == 1;
  f.meta.exposure_s = 600.0;
  return f;
}

}  // namespace

TEST_CASE("vipf round-trips bit-exactly", "[frame]") {
  viptest::TempDir tmp("vipf");
  const auto path = tmp.path() / "frames.vipf";
  std::vector<PixelFrame> frames{random_frame(31, 17, 1), random_frame(31, 17, 2),
                                 random_frame(8, 8, 3)};
  write_vipf(path, frames);
  const auto back = read_vipf(path);
  REQUIRE(back.size() == frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    CHECK(back[i].width == frames[i].width);
    CHECK(back[i].height == frames[i].height);
    CHECK(back[i].meta.frame_index == frames[i].meta.frame_index);
    CHECK(back[i].meta.current_on == frames[i].meta.current_on);
    CHECK(back[i].meta.exposure_s == frames[i].meta.exposure_s);
    REQUIRE(back[i].adu.size() == frames[i].adu.size());
    CHECK(std::memcmp(back[i].adu.data(), frames[i].adu.data(),
                      frames[i].adu.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("vipf streams may be concatenated", "[frame]") {
  viptest::TempDir tmp("vipf_cat");
  const auto path = tmp.path() / "frames.vipf";
  write_vipf(path, {random_frame(5, 5, 10)});
  {
    std::ofstream os(path, std::ios::binary | std::ios::app);
    write_vipf_frame(os, random_frame(5, 5, 11));
  }
  const auto back = read_vipf(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].meta.frame_index == 10);
  CHECK(back[1].meta.frame_index == 11);
}

TEST_CASE("vipf byte layout is fixed little-endian", "[frame]") {
  PixelFrame f(1, 1);
  f.adu[0] = 1.5f;
  f.meta.frame_index = 7;
  f.meta.current_on = true;
  f.meta.exposure_s = 600.0;
  std::ostringstream os(std::ios::binary);
  write_vipf_frame(os, f);
  const std::string bytes = os.str();
  const unsigned char expected[] = {
      'V',  'I',  'P',  'F',              // magic
      0x01, 0x00, 0x00, 0x00,             // version 1
      0x01, 0x00, 0x00, 0x00,             // width 1
      0x01, 0x00, 0x00, 0x00,             // height 1
      0x07, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,  // frame_index 7
      0x01,                               // current_on
      0x00, 0x00, 0x00, 0x00, 0x00, 0xc0, 0x82, 0x40,  // 600.0 as f64
      0x00, 0x00, 0xc0, 0x3f,             // 1.5 as f32
  };
  REQUIRE(bytes.size() == sizeof(expected));
  CHECK(std::memcmp(bytes.data(), expected, sizeof(expected)) == 0);
}

TEST_CASE("vipf rejects corrupt input", "[frame]") {
  std::ostringstream os(std::ios::binary);
  write_vipf_frame(os, random_frame(4, 4, 1));
  std::string good = os.str();

  SECTION("bad magic") {
    std::string bad = good;
    bad[0] = 'X';
    std::istringstream is(bad, std::ios::binary);
    PixelFrame f;
    CHECK_THROWS_AS(read_vipf_frame(is, f), IoError);
  }
  SECTION("unsupported version") {
    std::string bad = good;
    bad[4] = 0x7f;
    std::istringstream is(bad, std::ios::binary);
    PixelFrame f;
    CHECK_THROWS_AS(read_vipf_frame(is, f), IoError);
  }
  SECTION("truncated pixel payload") {
    std::string bad = good.substr(0, good.size() - 5);
    std::istringstream is(bad, std::ios::binary);
    PixelFrame f;
    CHECK_THROWS_AS(read_vipf_frame(is, f), IoError);
  }
  SECTION("clean eof returns false") {
    std::istringstream is(std::string(), std::ios::binary);
    PixelFrame f;
    CHECK_FALSE(read_vipf_frame(is, f));
  }
}

TEST_CASE("zero-area frames are rejected", "[frame]") {
  CHECK_THROWS_AS(PixelFrame(0, 5), DomainError);
  CHECK_THROWS_AS(PixelFrame(5, 0), DomainError);
  PixelFrame f(2, 2);
  f.adu.resize(3);  // malformed on purpose
  std::ostringstream os(std::ios::binary);
  CHECK_THROWS_AS(write_vipf_frame(os, f), DomainError);
}

TEST_CASE("missing files raise io errors", "[frame]") {
  CHECK_THROWS_AS(read_vipf("/nonexistent/path/frames.vipf"), IoError);
}
