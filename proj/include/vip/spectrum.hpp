#pragma once

// Calibrated energy spectra: on/off subtraction with Poisson error
// propagation, ROI counting, rebinning, run merging, CSV round-trip.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "vip/fit.hpp"
#include "vip/histogram.hpp"
#include "vip/recon.hpp"

namespace vip {

enum class SpectrumLabel { current_on, current_off, difference };

inline const char* to_string(SpectrumLabel l) {
  switch (l) {
    case SpectrumLabel::current_on: return "current_on";
    case SpectrumLabel::current_off: return "current_off";
    case SpectrumLabel::difference: return "difference";
  }
  throw DomainError("SpectrumLabel: bad value");
}

inline SpectrumLabel spectrum_label_from_string(const std::string& s) {
  if (s == "current_on") return SpectrumLabel::current_on;
  if (s == "current_off") return SpectrumLabel::current_off;
  if (s == "difference") return SpectrumLabel::difference;
  throw DomainError("SpectrumLabel: unknown label '" + s + "'");
}

struct EnergySpectrum {
  Binning binning{1.0, 12.0, 11000};  // default 1 eV bins over 1-12 keV
  std::vector<double> counts;
  std::vector<double> errors;
  double live_time_s = 0.0;
  SpectrumLabel label = SpectrumLabel::current_off;
  double underflow = 0.0;
  double overflow = 0.0;

  EnergySpectrum() {
    counts.assign(binning.n_bins, 0.0);
    errors.assign(binning.n_bins, 0.0);
  }
  EnergySpectrum(const Binning& b, double live_time, SpectrumLabel l)
      : binning(b), live_time_s(live_time), label(l) {
    binning.validate();
    if (!(live_time_s > 0.0)) throw DomainError("EnergySpectrum: live time must be > 0");
    counts.assign(binning.n_bins, 0.0);
    errors.assign(binning.n_bins, 0.0);
  }

  void validate() const {
    binning.validate();
    if (counts.size() != binning.n_bins || errors.size() != binning.n_bins)
      throw DomainError("EnergySpectrum: size mismatch");
    if (!(live_time_s > 0.0)) throw DomainError("EnergySpectrum: live time must be > 0");
  }
};

// Raw (un-subtracted) spectrum from accepted events; errors are sqrt(n).
inline EnergySpectrum energy_spectrum_from_events(const std::vector<EventRecord>& events,
                                                  const Calibration& cal, const Binning& binning,
                                                  double live_time_s, SpectrumLabel label) {
  if (label == SpectrumLabel::difference)
    throw DomainError("energy_spectrum_from_events: label must be a raw-run label");
  EnergySpectrum s(binning, live_time_s, label);
  Hist1D h(binning);
  for (const auto& e : events) h.fill(cal.energy_kev(e.total_adu));
  s.counts = h.counts;
  s.underflow = h.underflow;
  s.overflow = h.overflow;
  for (std::size_t i = 0; i < s.counts.size(); ++i) s.errors[i] = std::sqrt(s.counts[i]);
  return s;
}

// diff = on - s*off with s = live-time ratio; err^2 = on + s^2 * off.
// Inputs must be raw spectra on identical binning.
inline EnergySpectrum subtract(const EnergySpectrum& on, const EnergySpectrum& off) {
  on.validate();
  off.validate();
  if (on.binning != off.binning) throw DomainError("subtract: binning mismatch");
  if (on.label == SpectrumLabel::difference || off.label == SpectrumLabel::difference)
    throw DomainError("subtract: inputs must be raw spectra");
  const double s = on.live_time_s / off.live_time_s;
  EnergySpectrum d(on.binning, on.live_time_s, SpectrumLabel::difference);
  for (std::size_t i = 0; i < d.counts.size(); ++i) {
    d.counts[i] = on.counts[i] - s * off.counts[i];
    d.errors[i] = std::sqrt(on.counts[i] + s * s * off.counts[i]);
  }
  return d;
}

struct RoiWindow {
  double e_low_kev = 7.564;
  double e_high_kev = 7.894;

  void validate() const {
    if (!(e_high_kev > e_low_kev)) throw DomainError("RoiWindow: high edge must exceed low edge");
  }
};

struct RoiResult {
  double counts = 0.0;
  double error = 0.0;
  std::size_t first_bin = 0;
  std::size_t n_bins = 0;
  double snapped_low_kev = 0.0;
  double snapped_high_kev = 0.0;
};

// Sums counts over the ROI, snapping its edges outward to bin boundaries
// (the integrated window never shrinks below the requested one). An edge
// within 1e-6 bin widths of a boundary counts as exactly on it. Errors add
// in quadrature.
inline RoiResult roi_counts(const EnergySpectrum& spec, const RoiWindow& roi) {
  spec.validate();
  roi.validate();
  const Binning& b = spec.binning;
  const double w = b.width();
  const double snap = 1e-6;
  const double rlo = (roi.e_low_kev - b.lo) / w;
  const double rhi = (roi.e_high_kev - b.lo) / w;
  const long ilo = static_cast<long>(std::floor(rlo + snap));
  const long ihi = static_cast<long>(std::ceil(rhi - snap));  // one past the last bin
  if (ilo < 0 || ihi > static_cast<long>(b.n_bins) || ilo >= ihi)
    throw DomainError("roi_counts: ROI does not fit inside the spectrum range");
  RoiResult r;
  r.first_bin = static_cast<std::size_t>(ilo);
  r.n_bins = static_cast<std::size_t>(ihi - ilo);
  r.snapped_low_kev = b.edge(r.first_bin);
  r.snapped_high_kev = b.edge(r.first_bin + r.n_bins);
  double var = 0.0;
  for (std::size_t i = r.first_bin; i < r.first_bin + r.n_bins; ++i) {
    r.counts += spec.counts[i];
    var += spec.errors[i] * spec.errors[i];
  }
  r.error = std::sqrt(var);
  return r;
}

inline EnergySpectrum rebin(const EnergySpectrum& spec, std::size_t factor) {
  spec.validate();
  if (factor == 0 || spec.binning.n_bins % factor != 0)
    throw DomainError("rebin: factor must divide the bin count");
  Binning nb{spec.binning.lo, spec.binning.hi, spec.binning.n_bins / factor};
  EnergySpectrum out(nb, spec.live_time_s, spec.label);
  out.underflow = spec.underflow;
  out.overflow = spec.overflow;
  for (std::size_t i = 0; i < spec.binning.n_bins; ++i) {
    out.counts[i / factor] += spec.counts[i];
    out.errors[i / factor] += spec.errors[i] * spec.errors[i];
  }
  for (auto& e : out.errors) e = std::sqrt(e);
  return out;
}

// Combines same-kind runs: counts add, errors in quadrature, live times add.
inline EnergySpectrum merge_runs(const std::vector<EnergySpectrum>& runs) {
  if (runs.empty()) throw DomainError("merge_runs: need at least one spectrum");
  EnergySpectrum out = runs.front();
  out.validate();
  for (std::size_t k = 1; k < runs.size(); ++k) {
    const auto& r = runs[k];
    r.validate();
    if (r.binning != out.binning) throw DomainError("merge_runs: binning mismatch");
    if (r.label != out.label) throw DomainError("merge_runs: label mismatch");
    out.live_time_s += r.live_time_s;
    out.underflow += r.underflow;
    out.overflow += r.overflow;
    for (std::size_t i = 0; i < out.counts.size(); ++i) {
      out.counts[i] += r.counts[i];
      out.errors[i] = std::sqrt(out.errors[i] * out.errors[i] + r.errors[i] * r.errors[i]);
    }
  }
  return out;
}

// CSV layout:
//   # live_time_s=<%.17g> label=<label>
//   e_low_kev,e_high_kev,counts,error
//   <rows, %.17g>
// %.17g guarantees a bit-exact double round-trip.
inline void write_spectrum_csv(std::ostream& os, const EnergySpectrum& spec) {
  spec.validate();
  os << "# live_time_s=" << detail::format_g17(spec.live_time_s) << " label=" << to_string(spec.label)
     << '\n';
  os << "e_low_kev,e_high_kev,counts,error\n";
  for (std::size_t i = 0; i < spec.binning.n_bins; ++i)
    os << detail::format_g17(spec.binning.bin_lo(i)) << ',' << detail::format_g17(spec.binning.bin_hi(i))
       << ',' << detail::format_g17(spec.counts[i]) << ',' << detail::format_g17(spec.errors[i])
       << '\n';
  if (!os) throw IoError("spectrum CSV: write failed");
}

inline void write_spectrum_csv(const std::filesystem::path& path, const EnergySpectrum& spec) {
  std::ofstream os(path);
  if (!os) throw IoError("spectrum CSV: cannot open for write: " + path.string());
  write_spectrum_csv(os, spec);
}

inline EnergySpectrum read_spectrum_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("# live_time_s=", 0) != 0)
    throw IoError("spectrum CSV: missing metadata line");
  const std::size_t label_pos = line.find(" label=");
  if (label_pos == std::string::npos) throw IoError("spectrum CSV: missing label");
  const double live_time = std::strtod(line.c_str() + std::strlen("# live_time_s="), nullptr);
  const SpectrumLabel label = spectrum_label_from_string(line.substr(label_pos + 7));
  if (!std::getline(is, line) || line != "e_low_kev,e_high_kev,counts,error")
    throw IoError("spectrum CSV: missing or wrong header");

  std::vector<double> lows, highs, counts, errors;
  std::size_t lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const char* s = line.c_str();
    char* end = nullptr;
    double v[4];
    for (int k = 0; k < 4; ++k) {
      v[k] = std::strtod(s, &end);
      if (end == s || (k < 3 && *end != ',') || (k == 3 && *end != '\0'))
        throw IoError("spectrum CSV: parse error on line " + std::to_string(lineno));
      s = end + 1;
    }
    lows.push_back(v[0]);
    highs.push_back(v[1]);
    counts.push_back(v[2]);
    errors.push_back(v[3]);
  }
  if (lows.empty()) throw IoError("spectrum CSV: no bins");
  Binning b{lows.front(), highs.back(), lows.size()};
  b.validate();
  EnergySpectrum spec(b, live_time, label);
  spec.counts = counts;
  spec.errors = errors;
  return spec;
}

inline EnergySpectrum read_spectrum_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("spectrum CSV: cannot open: " + path.string());
  return read_spectrum_csv(is);
}

}  // namespace vip
