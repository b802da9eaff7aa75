#pragma once

// Shared test utilities: an independent clustering oracle (label
// propagation instead of flood fill), a KS statistic, chi-square
// goodness-of-fit, and temp-dir management.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vip/frame.hpp"
#include "vip/recon.hpp"
#include "vip/stats.hpp"

namespace viptest {

struct OracleCluster {
  std::vector<std::size_t> pixel_indices;  // sorted
  double total_adu = 0.0;
  std::uint32_t x_min = 0, x_max = 0, y_min = 0, y_max = 0;
  std::uint32_t n_pixels = 0;
};

// Reference clustering by iterated label relaxation: every above-split
// pixel starts with its own label; labels propagate to 8-neighbours until
// a fixed point. Deliberately different from the stack-based flood fill
// in the implementation under test.
inline std::vector<OracleCluster> oracle_clusters(const vip::PixelFrame& f,
                                                  const vip::ReconConfig& cfg) {
  const std::uint32_t w = f.width, h = f.height;
  std::vector<std::size_t> label(f.n_pixels(), SIZE_MAX);
  for (std::size_t i = 0; i < f.n_pixels(); ++i)
    if (f.adu[i] >= cfg.split_threshold_adu) label[i] = i;
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::uint32_t y = 0; y < h; ++y) {
      for (std::uint32_t x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (label[i] == SIZE_MAX) continue;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const long nx = static_cast<long>(x) + dx, ny = static_cast<long>(y) + dy;
            if (nx < 0 || ny < 0 || nx >= static_cast<long>(w) || ny >= static_cast<long>(h))
              continue;
            const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
            if (label[j] == SIZE_MAX) continue;
            if (label[j] < label[i]) {
              label[i] = label[j];
              changed = true;
            }
          }
        }
      }
    }
  }
  std::map<std::size_t, OracleCluster> by_label;
  for (std::size_t i = 0; i < f.n_pixels(); ++i) {
    if (label[i] == SIZE_MAX) continue;
    auto& c = by_label[label[i]];
    c.pixel_indices.push_back(i);
    c.total_adu += f.adu[i];
  }
  std::vector<OracleCluster> out;
  for (auto& [lbl, c] : by_label) {
    bool has_seed = false;
    c.x_min = w;
    c.y_min = h;
    c.x_max = 0;
    c.y_max = 0;
    for (std::size_t i : c.pixel_indices) {
      if (f.adu[i] >= cfg.seed_threshold_adu) has_seed = true;
      const std::uint32_t x = static_cast<std::uint32_t>(i % w);
      const std::uint32_t y = static_cast<std::uint32_t>(i / w);
      c.x_min = std::min(c.x_min, x);
      c.x_max = std::max(c.x_max, x);
      c.y_min = std::min(c.y_min, y);
      c.y_max = std::max(c.y_max, y);
    }
    c.n_pixels = static_cast<std::uint32_t>(c.pixel_indices.size());
    if (has_seed) out.push_back(std::move(c));
  }
  return out;
}

// Kolmogorov-Smirnov sup-distance of samples against a continuous CDF.
inline double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max(d, std::fabs(f - static_cast<double>(i) / n));
    d = std::max(d, std::fabs(static_cast<double>(i + 1) / n - f));
  }
  return d;
}

// KS acceptance bound at roughly the 1e-3 level: sqrt(-ln(alpha/2)/2)/sqrt(n).
inline double ks_bound(std::size_t n, double alpha = 1e-3) {
  return std::sqrt(-std::log(alpha / 2.0) / 2.0) / std::sqrt(static_cast<double>(n));
}

// Chi-square statistic of observed counts against expected (>0) ones.
inline double chi2_counts(const std::vector<double>& observed, const std::vector<double>& expected) {
  double c2 = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i)
    c2 += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
  return c2;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("vip_test_" + tag + "_" + std::to_string(counter()++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  static std::size_t& counter() {
    static std::size_t c = 0;
    return c;
  }
  std::filesystem::path path_;
};

}  // namespace viptest
