#pragma once

// Peak fitting and energy calibration.
//
// The fit model is a sum of Gaussians plus a linear background. Bin
// expectations are exact integrals over the bin, not center-point values:
//
//   m_i = sum_p A_p sigma_p sqrt(2 pi) [Phi(z_hi) - Phi(z_lo)] + (b0 + b1 x_c) w
//
// so a histogram filled with the analytic content has a zero-residual
// fixed point and centroids are recovered without binning bias. Chi-square
// with Neyman weights 1/max(n,1) is minimized by a damped Gauss-Newton
// (Levenberg) iteration with an analytic Jacobian.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vip/histogram.hpp"
#include "vip/stats.hpp"

namespace vip {

struct GaussPeak {
  double centroid = 0.0;
  double sigma = 1.0;
  double amplitude = 0.0;  // height of the Gaussian density at the centroid
};

struct PeakModel {
  std::vector<GaussPeak> peaks;
  double bg_intercept = 0.0;
  double bg_slope = 0.0;
};

struct FitOptions {
  double window_half_width_sigmas = 3.0;  // around each initial centroid
  double rel_tol = 1e-8;                  // convergence: max relative parameter change
  int max_iterations = 200;
  double damping_init = 1e-3;
  double damping_cap = 1e8;

  void validate() const {
    if (!(window_half_width_sigmas > 0.0)) throw DomainError("FitOptions: window must be > 0 sigma");
    if (!(rel_tol > 0.0)) throw DomainError("FitOptions: rel_tol must be > 0");
    if (max_iterations < 1) throw DomainError("FitOptions: need at least one iteration");
    if (!(damping_init > 0.0) || !(damping_cap > damping_init))
      throw DomainError("FitOptions: bad damping range");
  }
};

enum class FitStatus { converged, no_convergence };

struct FitResult {
  PeakModel model;
  std::vector<double> covariance;  // row-major (3P+2)^2; parameter order c,s,A per peak, b0, b1
  double chi2 = 0.0;
  int ndf = 0;
  FitStatus status = FitStatus::no_convergence;
  int iterations = 0;
  std::size_t n_bins_used = 0;

  std::size_t n_params() const { return 3 * model.peaks.size() + 2; }
  double param_error(std::size_t j) const {
    double v = covariance.empty() ? 0.0 : covariance[j * n_params() + j];
    return v > 0.0 ? std::sqrt(v) : 0.0;
  }
  double centroid_error(std::size_t peak) const { return param_error(3 * peak); }
  double sigma_error(std::size_t peak) const { return param_error(3 * peak + 1); }
  double amplitude_error(std::size_t peak) const { return param_error(3 * peak + 2); }
};

namespace detail {

inline double model_bin(const PeakModel& m, double xl, double xh, double w) {
  const double xc = 0.5 * (xl + xh);
  double v = (m.bg_intercept + m.bg_slope * xc) * w;
  for (const auto& p : m.peaks) {
    const double zl = (xl - p.centroid) / p.sigma;
    const double zh = (xh - p.centroid) / p.sigma;
    v += p.amplitude * p.sigma * std::sqrt(2.0 * kPi) * (normal_cdf(zh) - normal_cdf(zl));
  }
  return v;
}

// d m / d (c, sigma, A) for one peak over one bin, plus background terms.
inline void model_bin_jacobian(const PeakModel& m, double xl, double xh, double w, double* row) {
  const double xc = 0.5 * (xl + xh);
  const double s2pi = std::sqrt(2.0 * kPi);
  for (std::size_t p = 0; p < m.peaks.size(); ++p) {
    const auto& pk = m.peaks[p];
    const double zl = (xl - pk.centroid) / pk.sigma;
    const double zh = (xh - pk.centroid) / pk.sigma;
    const double dphi = normal_cdf(zh) - normal_cdf(zl);
    const double fl = normal_pdf(zl);
    const double fh = normal_pdf(zh);
    row[3 * p + 0] = pk.amplitude * s2pi * (fl - fh);
    row[3 * p + 1] = pk.amplitude * s2pi * (dphi + zl * fl - zh * fh);
    row[3 * p + 2] = pk.sigma * s2pi * dphi;
  }
  const std::size_t nb = 3 * m.peaks.size();
  row[nb + 0] = w;
  row[nb + 1] = xc * w;
}

// Gauss-Jordan solve / invert for the small normal-equation systems.
inline bool solve_linear(std::vector<double> a, std::vector<double>& x, std::size_t n) {
  // a is n x (n+1) augmented, row-major; returns false if singular.
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a[r * (n + 1) + col]) > std::fabs(a[piv * (n + 1) + col])) piv = r;
    if (std::fabs(a[piv * (n + 1) + col]) < 1e-300) return false;
    if (piv != col)
      for (std::size_t k = 0; k <= n; ++k) std::swap(a[piv * (n + 1) + k], a[col * (n + 1) + k]);
    const double d = a[col * (n + 1) + col];
    for (std::size_t k = col; k <= n; ++k) a[col * (n + 1) + k] /= d;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r * (n + 1) + col];
      if (f == 0.0) continue;
      for (std::size_t k = col; k <= n; ++k) a[r * (n + 1) + k] -= f * a[col * (n + 1) + k];
    }
  }
  x.resize(n);
  for (std::size_t r = 0; r < n; ++r) x[r] = a[r * (n + 1) + n];
  return true;
}

inline bool invert_matrix(const std::vector<double>& h, std::vector<double>& inv, std::size_t n) {
  std::vector<double> a(n * 2 * n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) a[r * 2 * n + c] = h[r * n + c];
    a[r * 2 * n + n + r] = 1.0;
  }
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a[r * 2 * n + col]) > std::fabs(a[piv * 2 * n + col])) piv = r;
    if (std::fabs(a[piv * 2 * n + col]) < 1e-300) return false;
    if (piv != col)
      for (std::size_t k = 0; k < 2 * n; ++k) std::swap(a[piv * 2 * n + k], a[col * 2 * n + k]);
    const double d = a[col * 2 * n + col];
    for (std::size_t k = 0; k < 2 * n; ++k) a[col * 2 * n + k] /= d;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r * 2 * n + col];
      if (f == 0.0) continue;
      for (std::size_t k = 0; k < 2 * n; ++k) a[r * 2 * n + k] -= f * a[col * 2 * n + k];
    }
  }
  inv.assign(n * n, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) inv[r * n + c] = a[r * 2 * n + n + c];
  return true;
}

}  // namespace detail

// Fits `init.peaks.size()` Gaussians plus linear background to the bins
// whose centers fall within window_half_width_sigmas of any initial
// centroid. Throws DomainError when the window holds fewer bins than
// parameters + 1; returns status no_convergence (with the best parameters
// found) when the iteration stalls or exhausts max_iterations.
inline FitResult fit_peaks(const Hist1D& hist, const PeakModel& init, const FitOptions& opts = {}) {
  opts.validate();
  if (init.peaks.empty()) throw DomainError("fit_peaks: need at least one peak");
  for (const auto& p : init.peaks)
    if (!(p.sigma > 0.0)) throw DomainError("fit_peaks: initial sigma must be > 0");

  const Binning& b = hist.binning;
  const double w = b.width();
  std::vector<std::size_t> bins;
  for (std::size_t i = 0; i < b.n_bins; ++i) {
    const double xc = b.center(i);
    for (const auto& p : init.peaks) {
      if (std::fabs(xc - p.centroid) <= opts.window_half_width_sigmas * p.sigma) {
        bins.push_back(i);
        break;
      }
    }
  }
  const std::size_t np = 3 * init.peaks.size() + 2;
  if (bins.size() < np + 1)
    throw DomainError("fit_peaks: fit window holds " + std::to_string(bins.size()) +
                      " bins for " + std::to_string(np) + " parameters");

  auto pack = [&](const PeakModel& m, std::vector<double>& p) {
    p.resize(np);
    for (std::size_t i = 0; i < m.peaks.size(); ++i) {
      p[3 * i] = m.peaks[i].centroid;
      p[3 * i + 1] = m.peaks[i].sigma;
      p[3 * i + 2] = m.peaks[i].amplitude;
    }
    p[np - 2] = m.bg_intercept;
    p[np - 1] = m.bg_slope;
  };
  auto unpack = [&](const std::vector<double>& p, PeakModel& m) {
    for (std::size_t i = 0; i < m.peaks.size(); ++i) {
      m.peaks[i].centroid = p[3 * i];
      m.peaks[i].sigma = p[3 * i + 1];
      m.peaks[i].amplitude = p[3 * i + 2];
    }
    m.bg_intercept = p[np - 2];
    m.bg_slope = p[np - 1];
  };
  auto chi2_of = [&](const PeakModel& m) {
    double c2 = 0.0;
    for (std::size_t i : bins) {
      const double d = hist.counts[i];
      const double r = d - detail::model_bin(m, b.bin_lo(i), b.bin_hi(i), w);
      c2 += r * r / std::max(d, 1.0);
    }
    return c2;
  };

  PeakModel cur = init;
  std::vector<double> pcur;
  pack(cur, pcur);
  double chi2_cur = chi2_of(cur);
  double lambda = opts.damping_init;
  FitResult res;
  res.model = cur;
  res.n_bins_used = bins.size();
  res.ndf = static_cast<int>(bins.size() - np);
  bool converged = false;

  std::vector<double> jrow(np), grad(np), hess(np * np), aug((np) * (np + 1)), step;
  int iter = 0;
  for (; iter < opts.max_iterations && !converged; ++iter) {
    std::fill(grad.begin(), grad.end(), 0.0);
    std::fill(hess.begin(), hess.end(), 0.0);
    for (std::size_t i : bins) {
      const double xl = b.bin_lo(i), xh = b.bin_hi(i);
      const double d = hist.counts[i];
      const double wi = 1.0 / std::max(d, 1.0);
      const double r = d - detail::model_bin(cur, xl, xh, w);
      detail::model_bin_jacobian(cur, xl, xh, w, jrow.data());
      for (std::size_t a = 0; a < np; ++a) {
        grad[a] += wi * jrow[a] * r;
        for (std::size_t c = a; c < np; ++c) hess[a * np + c] += wi * jrow[a] * jrow[c];
      }
    }
    for (std::size_t a = 0; a < np; ++a)
      for (std::size_t c = 0; c < a; ++c) hess[a * np + c] = hess[c * np + a];

    bool accepted = false;
    while (!accepted) {
      for (std::size_t a = 0; a < np; ++a) {
        for (std::size_t c = 0; c < np; ++c) aug[a * (np + 1) + c] = hess[a * np + c];
        aug[a * (np + 1) + a] += lambda * std::max(hess[a * np + a], 1e-300);
        aug[a * (np + 1) + np] = grad[a];
      }
      bool solvable = detail::solve_linear(aug, step, np);
      PeakModel trial = cur;
      double chi2_trial = std::numeric_limits<double>::infinity();
      if (solvable) {
        std::vector<double> ptrial = pcur;
        for (std::size_t a = 0; a < np; ++a) ptrial[a] += step[a];
        bool valid = true;
        for (std::size_t i = 0; i < trial.peaks.size(); ++i)
          if (!(ptrial[3 * i + 1] > 0.0)) valid = false;
        if (valid) {
          unpack(ptrial, trial);
          chi2_trial = chi2_of(trial);
        }
        if (valid && chi2_trial <= chi2_cur * (1.0 + 1e-14)) {
          double max_rel = 0.0;
          for (std::size_t a = 0; a < np; ++a)
            max_rel = std::max(max_rel, std::fabs(step[a]) / std::max(std::fabs(pcur[a]), 1e-12));
          pcur = ptrial;
          cur = trial;
          chi2_cur = chi2_trial;
          lambda = std::max(lambda / 10.0, 1e-15);
          accepted = true;
          if (max_rel < opts.rel_tol) converged = true;
          break;
        }
      }
      lambda *= 10.0;
      if (lambda > opts.damping_cap) break;  // stalled
    }
    if (!accepted) break;
  }

  res.model = cur;
  res.chi2 = chi2_cur;
  res.iterations = iter;
  res.status = converged ? FitStatus::converged : FitStatus::no_convergence;

  // Covariance from the undamped normal matrix at the solution.
  std::fill(hess.begin(), hess.end(), 0.0);
  for (std::size_t i : bins) {
    const double d = hist.counts[i];
    const double wi = 1.0 / std::max(d, 1.0);
    detail::model_bin_jacobian(cur, b.bin_lo(i), b.bin_hi(i), w, jrow.data());
    for (std::size_t a = 0; a < np; ++a)
      for (std::size_t c = a; c < np; ++c) hess[a * np + c] += wi * jrow[a] * jrow[c];
  }
  for (std::size_t a = 0; a < np; ++a)
    for (std::size_t c = 0; c < a; ++c) hess[a * np + c] = hess[c * np + a];
  if (!detail::invert_matrix(hess, res.covariance, np)) {
    res.covariance.clear();
    res.status = FitStatus::no_convergence;
  }
  return res;
}

struct PeakCandidate {
  double position = 0.0;  // fine-binning coordinate of the coarse maximum
  double height = 0.0;    // per fine bin
};

// Seeds for the calibration fit: local maxima of a coarse rebinning,
// highest first, at least min_separation apart, positions >= min_position.
// Returned sorted by position. Throws if fewer than n_peaks are found.
inline std::vector<PeakCandidate> find_peak_candidates(const Hist1D& h, double min_position,
                                                       std::size_t n_peaks, double min_separation,
                                                       std::size_t rebin_factor) {
  if (n_peaks == 0) throw DomainError("find_peak_candidates: n_peaks must be >= 1");
  if (rebin_factor == 0) throw DomainError("find_peak_candidates: rebin factor must be >= 1");
  const std::size_t nc = h.binning.n_bins / rebin_factor;
  if (nc < 3) throw DomainError("find_peak_candidates: too few coarse bins");
  std::vector<double> coarse(nc, 0.0);
  for (std::size_t i = 0; i < nc * rebin_factor; ++i) coarse[i / rebin_factor] += h.counts[i];
  const double cw = h.binning.width() * static_cast<double>(rebin_factor);

  std::vector<PeakCandidate> maxima;
  for (std::size_t i = 1; i + 1 < nc; ++i) {
    if (coarse[i] > coarse[i - 1] && coarse[i] >= coarse[i + 1] && coarse[i] > 0.0) {
      const double pos = h.binning.lo + cw * (static_cast<double>(i) + 0.5);
      if (pos >= min_position) maxima.push_back({pos, coarse[i] / static_cast<double>(rebin_factor)});
    }
  }
  std::sort(maxima.begin(), maxima.end(),
            [](const PeakCandidate& a, const PeakCandidate& b) { return a.height > b.height; });
  std::vector<PeakCandidate> picked;
  for (const auto& m : maxima) {
    bool far = true;
    for (const auto& p : picked)
      if (std::fabs(p.position - m.position) < min_separation) far = false;
    if (far) picked.push_back(m);
    if (picked.size() == n_peaks) break;
  }
  if (picked.size() < n_peaks)
    throw DomainError("find_peak_candidates: found " + std::to_string(picked.size()) + " of " +
                      std::to_string(n_peaks) + " requested peaks");
  std::sort(picked.begin(), picked.end(),
            [](const PeakCandidate& a, const PeakCandidate& b) { return a.position < b.position; });
  return picked;
}

struct CalibrationLine {
  double energy_kev = 0.0;
  double centroid_adu = 0.0;
  double centroid_err_adu = 0.0;
};

struct Calibration {
  double gain_kev_per_adu = 0.0;
  double offset_kev = 0.0;
  double gain_err = 0.0;
  double offset_err = 0.0;
  double chi2 = 0.0;
  int ndf = 0;
  std::vector<double> line_energies_kev;
  std::vector<double> centroids_adu;
  std::vector<double> residuals_kev;

  double energy_kev(double adu) const { return gain_kev_per_adu * adu + offset_kev; }
};

// Weighted straight-line calibration energy = gain * ADU + offset from
// >= 2 reference lines. With exactly two lines this is the exact two-point
// solution and the residuals vanish to rounding. The measurement errors
// sit on the ADU axis, so they are transferred to the energy axis through
// a provisional unweighted gain before the weighted pass — the standard
// one-step errors-in-abscissa treatment.
inline Calibration calibrate(const std::vector<CalibrationLine>& lines) {
  if (lines.size() < 2) throw DomainError("calibrate: need at least two lines");
  std::vector<double> x, y, xe;
  for (const auto& l : lines) {
    if (!(l.energy_kev > 0.0)) throw DomainError("calibrate: line energies must be > 0");
    x.push_back(l.centroid_adu);
    y.push_back(l.energy_kev);
    xe.push_back(l.centroid_err_adu > 0.0 ? l.centroid_err_adu : 1.0);
  }
  const WeightedLine provisional =
      fit_weighted_line(x, y, std::vector<double>(x.size(), 1.0));
  std::vector<double> ye(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    ye[i] = std::max(std::fabs(provisional.slope) * xe[i], 1e-300);
  const WeightedLine wl = fit_weighted_line(x, y, ye);
  Calibration c;
  c.gain_kev_per_adu = wl.slope;
  c.offset_kev = wl.intercept;
  c.gain_err = std::sqrt(wl.slope_var);
  c.offset_err = std::sqrt(wl.intercept_var);
  c.ndf = static_cast<int>(lines.size()) - 2;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const double r = y[i] - c.energy_kev(x[i]);
    c.residuals_kev.push_back(r);
    c.chi2 += (r / ye[i]) * (r / ye[i]);
    c.line_energies_kev.push_back(y[i]);
    c.centroids_adu.push_back(x[i]);
  }
  return c;
}

inline nlohmann::ordered_json calibration_to_json(const Calibration& c) {
  nlohmann::ordered_json j;
  j["gain_kev_per_adu"] = c.gain_kev_per_adu;
  j["offset_kev"] = c.offset_kev;
  j["gain_err"] = c.gain_err;
  j["offset_err"] = c.offset_err;
  j["chi2"] = c.chi2;
  j["ndf"] = c.ndf;
  j["line_energies_kev"] = c.line_energies_kev;
  j["centroids_adu"] = c.centroids_adu;
  j["residuals_kev"] = c.residuals_kev;
  return j;
}

inline Calibration calibration_from_json(const nlohmann::json& j) {
  Calibration c;
  c.gain_kev_per_adu = j.at("gain_kev_per_adu").get<double>();
  c.offset_kev = j.at("offset_kev").get<double>();
  c.gain_err = j.value("gain_err", 0.0);
  c.offset_err = j.value("offset_err", 0.0);
  c.chi2 = j.value("chi2", 0.0);
  c.ndf = j.value("ndf", 0);
  if (j.contains("line_energies_kev")) c.line_energies_kev = j["line_energies_kev"].get<std::vector<double>>();
  if (j.contains("centroids_adu")) c.centroids_adu = j["centroids_adu"].get<std::vector<double>>();
  if (j.contains("residuals_kev")) c.residuals_kev = j["residuals_kev"].get<std::vector<double>>();
  return c;
}

inline void write_calibration_json(const std::filesystem::path& path, const Calibration& c) {
  std::ofstream os(path);
  if (!os) throw IoError("calibration JSON: cannot open for write: " + path.string());
  os << calibration_to_json(c).dump(2) << '\n';
  if (!os) throw IoError("calibration JSON: write failed");
}

inline Calibration read_calibration_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("calibration JSON: cannot open: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("calibration JSON: parse error: ") + e.what());
  }
  return calibration_from_json(j);
}

}  // namespace vip
