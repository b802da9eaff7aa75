#pragma once

// X-ray event reconstruction: threshold clustering and pattern rejection.
//
// A cluster is an 8-connected set of pixels above the split threshold that
// contains at least one pixel above the seed threshold. Single-photon
// X-ray events leave compact clusters (at most a few pixels, fitting a
// 2x2 box); longer or wider patterns are treated as charged-particle
// tracks and rejected.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vip/frame.hpp"
#include "vip/histogram.hpp"

namespace vip {

struct ReconConfig {
  double seed_threshold_adu = 10.0;
  double split_threshold_adu = 2.0;
  std::uint32_t max_xray_pixels = 4;
  std::uint32_t max_bounding_box_px = 2;

  void validate() const {
    if (!(split_threshold_adu > 0.0)) throw DomainError("ReconConfig: split threshold must be > 0");
    if (!(seed_threshold_adu >= split_threshold_adu))
      throw DomainError("ReconConfig: seed threshold must be >= split threshold");
    if (max_xray_pixels == 0 || max_bounding_box_px == 0)
      throw DomainError("ReconConfig: pattern limits must be >= 1");
  }
};

struct ClusterPixel {
  std::uint32_t x;
  std::uint32_t y;
  float adu;
};

struct Cluster {
  std::uint64_t frame_index = 0;
  std::vector<ClusterPixel> pixels;  // sorted by (y, x)
  double total_adu = 0.0;
  std::uint32_t n_pixels = 0;
  std::uint32_t x_min = 0, x_max = 0, y_min = 0, y_max = 0;

  std::uint32_t bbox_w() const { return x_max - x_min + 1; }
  std::uint32_t bbox_h() const { return y_max - y_min + 1; }
};

enum class ClusterClass { xray, track };

inline ClusterClass classify_cluster(const Cluster& c, const ReconConfig& cfg) {
  cfg.validate();
  if (c.n_pixels == 0) throw DomainError("classify_cluster: empty cluster");
  const bool compact = c.n_pixels <= cfg.max_xray_pixels &&
                       c.bbox_w() <= cfg.max_bounding_box_px &&
                       c.bbox_h() <= cfg.max_bounding_box_px;
  return compact ? ClusterClass::xray : ClusterClass::track;
}

// All clusters of a frame, ordered by (y_min, x_min) with pixels ordered
// by (y, x) — deterministic regardless of flood-fill traversal order.
inline std::vector<Cluster> find_clusters(const PixelFrame& frame, const ReconConfig& cfg) {
  cfg.validate();
  if (frame.width == 0 || frame.height == 0) throw DomainError("find_clusters: empty frame");
  const std::uint32_t w = frame.width;
  const std::uint32_t h = frame.height;
  std::vector<bool> visited(frame.n_pixels(), false);
  std::vector<Cluster> clusters;
  std::vector<std::size_t> stack;

  for (std::uint32_t y0 = 0; y0 < h; ++y0) {
    for (std::uint32_t x0 = 0; x0 < w; ++x0) {
      const std::size_t start = static_cast<std::size_t>(y0) * w + x0;
      if (visited[start] || frame.adu[start] < cfg.split_threshold_adu) continue;
      Cluster c;
      c.frame_index = frame.meta.frame_index;
      bool has_seed = false;
      visited[start] = true;
      stack.assign(1, start);
      while (!stack.empty()) {
        const std::size_t idx = stack.back();
        stack.pop_back();
        const std::uint32_t x = static_cast<std::uint32_t>(idx % w);
        const std::uint32_t y = static_cast<std::uint32_t>(idx / w);
        const float adu = frame.adu[idx];
        if (adu >= cfg.seed_threshold_adu) has_seed = true;
        c.pixels.push_back({x, y, adu});
        c.total_adu += adu;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            const long nx = static_cast<long>(x) + dx;
            const long ny = static_cast<long>(y) + dy;
            if (nx < 0 || ny < 0 || nx >= static_cast<long>(w) || ny >= static_cast<long>(h))
              continue;
            const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
            if (visited[nidx] || frame.adu[nidx] < cfg.split_threshold_adu) continue;
            visited[nidx] = true;
            stack.push_back(nidx);
          }
        }
      }
      if (!has_seed) continue;
      std::sort(c.pixels.begin(), c.pixels.end(), [](const ClusterPixel& a, const ClusterPixel& b) {
        return a.y != b.y ? a.y < b.y : a.x < b.x;
      });
      c.n_pixels = static_cast<std::uint32_t>(c.pixels.size());
      c.x_min = c.x_max = c.pixels.front().x;
      c.y_min = c.pixels.front().y;
      c.y_max = c.pixels.back().y;
      for (const auto& p : c.pixels) {
        c.x_min = std::min(c.x_min, p.x);
        c.x_max = std::max(c.x_max, p.x);
      }
      clusters.push_back(std::move(c));
    }
  }
  std::sort(clusters.begin(), clusters.end(), [](const Cluster& a, const Cluster& b) {
    return a.y_min != b.y_min ? a.y_min < b.y_min : a.x_min < b.x_min;
  });
  return clusters;
}

// Accepted-event record as stored in event CSV files.
struct EventRecord {
  std::uint64_t frame_index = 0;
  std::uint32_t x_min = 0;
  std::uint32_t y_min = 0;
  std::uint32_t n_pixels = 0;
  double total_adu = 0.0;
};

inline std::vector<EventRecord> accepted_events(const std::vector<Cluster>& clusters,
                                                const ReconConfig& cfg) {
  std::vector<EventRecord> out;
  for (const auto& c : clusters)
    if (classify_cluster(c, cfg) == ClusterClass::xray)
      out.push_back({c.frame_index, c.x_min, c.y_min, c.n_pixels, c.total_adu});
  return out;
}

inline Hist1D events_to_adu_spectrum(const std::vector<EventRecord>& events, const Binning& binning) {
  binning.validate();
  Hist1D h(binning);
  for (const auto& e : events) h.fill(e.total_adu);
  return h;
}

namespace detail {

inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_event_csv(std::ostream& os, const std::vector<EventRecord>& events) {
  os << "frame_index,x_min,y_min,n_pixels,total_adu\n";
  for (const auto& e : events)
    os << e.frame_index << ',' << e.x_min << ',' << e.y_min << ',' << e.n_pixels << ','
       << detail::format_g17(e.total_adu) << '\n';
  if (!os) throw IoError("event CSV: write failed");
}

inline void write_event_csv(const std::filesystem::path& path,
                            const std::vector<EventRecord>& events) {
  std::ofstream os(path);
  if (!os) throw IoError("event CSV: cannot open for write: " + path.string());
  write_event_csv(os, events);
}

inline std::vector<EventRecord> read_event_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "frame_index,x_min,y_min,n_pixels,total_adu")
    throw IoError("event CSV: missing or wrong header");
  std::vector<EventRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    EventRecord e;
    char* end = nullptr;
    const char* s = line.c_str();
    auto take_u64 = [&](std::uint64_t& v) {
      v = std::strtoull(s, &end, 10);
      if (end == s || *end != ',') throw IoError("event CSV: parse error on line " + std::to_string(lineno));
      s = end + 1;
    };
    std::uint64_t tmp;
    take_u64(e.frame_index);
    take_u64(tmp);
    e.x_min = static_cast<std::uint32_t>(tmp);
    take_u64(tmp);
    e.y_min = static_cast<std::uint32_t>(tmp);
    take_u64(tmp);
    e.n_pixels = static_cast<std::uint32_t>(tmp);
    e.total_adu = std::strtod(s, &end);
    if (end == s || *end != '\0')
      throw IoError("event CSV: parse error on line " + std::to_string(lineno));
    out.push_back(e);
  }
  return out;
}

inline std::vector<EventRecord> read_event_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("event CSV: cannot open: " + path.string());
  return read_event_csv(is);
}

}  // namespace vip
