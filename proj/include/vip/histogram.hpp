#pragma once

// Minimal fixed-width 1-D histogram used for ADU and energy spectra.

#include <cstddef>
#include <vector>

#include "vip/errors.hpp"

namespace vip {

struct Binning {
  double lo = 0.0;
  double hi = 1.0;
  std::size_t n_bins = 1;

  void validate() const {
    if (!(n_bins >= 1)) throw DomainError("Binning: need at least one bin");
    if (!(hi > lo)) throw DomainError("Binning: hi must exceed lo");
  }

  double width() const { return (hi - lo) / static_cast<double>(n_bins); }
  double edge(std::size_t i) const { return lo + width() * static_cast<double>(i); }
  double bin_lo(std::size_t i) const { return edge(i); }
  double bin_hi(std::size_t i) const { return edge(i + 1); }
  double center(std::size_t i) const { return lo + width() * (static_cast<double>(i) + 0.5); }

  // Bin index for v, or -1 / n_bins for under/overflow. An edge value
  // belongs to the bin it starts.
  long index_of(double v) const {
    if (v < lo) return -1;
    if (v >= hi) return static_cast<long>(n_bins);
    long i = static_cast<long>((v - lo) / width());
    if (i >= static_cast<long>(n_bins)) i = static_cast<long>(n_bins) - 1;
    return i;
  }

  bool operator==(const Binning& o) const {
    return lo == o.lo && hi == o.hi && n_bins == o.n_bins;
  }
  bool operator!=(const Binning& o) const { return !(*this == o); }
};

struct Hist1D {
  Binning binning;
  std::vector<double> counts;
  double underflow = 0.0;
  double overflow = 0.0;

  Hist1D() : counts(1, 0.0) {}
  explicit Hist1D(const Binning& b) : binning(b) {
    binning.validate();
    counts.assign(binning.n_bins, 0.0);
  }

  void fill(double v, double w = 1.0) {
    long i = binning.index_of(v);
    if (i < 0)
      underflow += w;
    else if (i >= static_cast<long>(binning.n_bins))
      overflow += w;
    else
      counts[static_cast<std::size_t>(i)] += w;
  }

  double total() const {
    double s = 0.0;
    for (double c : counts) s += c;
    return s;
  }
};

}  // namespace vip
