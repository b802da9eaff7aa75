#pragma once

// CCD pixel frames and the VIPF container.
//
// VIPF layout, little-endian, one record per frame, records simply
// concatenated (a stream may therefore be appended to):
//
//   bytes 0-3   magic "VIPF"
//   u32         format version (currently 1)
//   u32         width, u32 height
//   u64         frame_index
//   u8          current_on (0/1)
//   f64         exposure_s
//   f32[w*h]    pixel ADU values, row-major, row y=0 first
//
// The generating seed is not part of the container; frames read back from
// disk carry seed = 0.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "vip/errors.hpp"
#include "vip/version.hpp"

namespace vip {

struct FrameMeta {
  std::uint64_t frame_index = 0;
  bool current_on = false;
  double exposure_s = 0.0;
  std::uint64_t seed = 0;
};

struct PixelFrame {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<float> adu;  // row-major, adu[y*width + x]
  FrameMeta meta;

  PixelFrame() = default;
  PixelFrame(std::uint32_t w, std::uint32_t h) : width(w), height(h) {
    if (w == 0 || h == 0) throw DomainError("PixelFrame: zero-area frame");
    adu.assign(static_cast<std::size_t>(w) * h, 0.0f);
  }

  float& at(std::uint32_t x, std::uint32_t y) { return adu[static_cast<std::size_t>(y) * width + x]; }
  float at(std::uint32_t x, std::uint32_t y) const {
    return adu[static_cast<std::size_t>(y) * width + x];
  }
  std::size_t n_pixels() const { return static_cast<std::size_t>(width) * height; }
};

namespace detail {

template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw IoError("VIPF: truncated record");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_vipf_frame(std::ostream& os, const PixelFrame& f) {
  if (f.width == 0 || f.height == 0 || f.adu.size() != f.n_pixels())
    throw DomainError("VIPF: malformed frame");
  os.write("VIPF", 4);
  detail::put_le<std::uint32_t>(os, kVipfFormatVersion);
  detail::put_le<std::uint32_t>(os, f.width);
  detail::put_le<std::uint32_t>(os, f.height);
  detail::put_le<std::uint64_t>(os, f.meta.frame_index);
  detail::put_le<std::uint8_t>(os, f.meta.current_on ? 1 : 0);
  detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(f.meta.exposure_s));
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(f.adu.data()),
             static_cast<std::streamsize>(f.adu.size() * sizeof(float)));
  } else {
    for (float p : f.adu) detail::put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(p));
  }
  if (!os) throw IoError("VIPF: write failed");
}

// Reads the next frame, or returns false on a clean end-of-stream.
inline bool read_vipf_frame(std::istream& is, PixelFrame& out) {
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() == 0 && is.eof()) return false;
  if (!is || std::memcmp(magic, "VIPF", 4) != 0) throw IoError("VIPF: bad magic");
  std::uint32_t version = detail::get_le<std::uint32_t>(is);
  if (version != kVipfFormatVersion)
    throw IoError("VIPF: unsupported version " + std::to_string(version));
  std::uint32_t w = detail::get_le<std::uint32_t>(is);
  std::uint32_t h = detail::get_le<std::uint32_t>(is);
  if (w == 0 || h == 0) throw IoError("VIPF: zero-area frame");
  PixelFrame f(w, h);
  f.meta.frame_index = detail::get_le<std::uint64_t>(is);
  f.meta.current_on = detail::get_le<std::uint8_t>(is) != 0;
  f.meta.exposure_s = std::bit_cast<double>(detail::get_le<std::uint64_t>(is));
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(f.adu.data()),
            static_cast<std::streamsize>(f.adu.size() * sizeof(float)));
    if (!is) throw IoError("VIPF: truncated pixel data");
  } else {
    for (auto& p : f.adu) p = std::bit_cast<float>(detail::get_le<std::uint32_t>(is));
  }
  out = std::move(f);
  return true;
}

inline void write_vipf(const std::filesystem::path& path, const std::vector<PixelFrame>& frames) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("VIPF: cannot open for write: " + path.string());
  for (const auto& f : frames) write_vipf_frame(os, f);
}

inline std::vector<PixelFrame> read_vipf(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("VIPF: cannot open: " + path.string());
  std::vector<PixelFrame> frames;
  PixelFrame f;
  while (read_vipf_frame(is, f)) frames.push_back(std::move(f));
  return frames;
}

}  // namespace vip
