#pragma once

// Synthetic CCD frame generation.
//
// Each frame is an independent Poisson sampling of five components, drawn
// in a fixed order from a per-frame RNG substream (continuum, K-alpha,
// K-beta, forbidden-line signal, cosmic tracks, then per-pixel readout
// noise). The forbidden line is only populated when the current is on and
// injected_beta2_over_2 > 0, at the rate implied by the Ramberg-Snow
// budget scaled to one exposure. X-ray energies are smeared with the full
// detector response before the charge is deposited, so the pixel charge
// sharing itself adds no further energy spread.
//
// Deposits accumulate on a double-precision grid; the grid is rounded to
// f32 once, at the end, so the result does not depend on deposit order
// granularity beyond the documented component order.

#include <cmath>
#include <cstdint>
#include <thread>
#include <vector>

#include "vip/frame.hpp"
#include "vip/physics.hpp"
#include "vip/rng.hpp"
#include "vip/stats.hpp"

namespace vip {

struct SimRates {
  double continuum_per_kev_frame = 0.4;  // flat+exponential background, per keV per frame
  double kalpha_per_frame = 6.0;
  double kbeta_per_frame = 1.02;
  double tracks_per_frame = 0.5;
};

struct SimConfig {
  std::uint32_t frame_width = 600;
  std::uint32_t frame_height = 600;
  double exposure_s = 600.0;
  double adu_gain_adu_per_kev = 100.0;
  double readout_noise_adu = 0.5;        // rms per pixel, 0 disables
  double charge_cloud_sigma_px = 0.1;    // lateral diffusion of one photon's charge
  SimRates rates;
  double environment_scale = 1.0;        // multiplies every ambient rate (LNGS ~ 0.1)
  double injected_beta2_over_2 = 0.0;    // truth value for closure tests
  double energy_min_kev = 1.0;
  double energy_max_kev = 12.0;
  double continuum_tau_kev = 5.0;        // p(E) ~ 1 + exp(-E/tau) on [min,max]
  std::uint64_t seed = 12345;
  LinePhysics lines;
  ResponseModel response = ResponseModel::from_reference();
  RSParameters rs;

  void validate() const {
    if (frame_width == 0 || frame_height == 0) throw DomainError("SimConfig: zero-area frame");
    if (!(exposure_s > 0.0)) throw DomainError("SimConfig: exposure must be > 0");
    if (!(adu_gain_adu_per_kev > 0.0)) throw DomainError("SimConfig: gain must be > 0");
    if (!(readout_noise_adu >= 0.0)) throw DomainError("SimConfig: noise must be >= 0");
    if (!(charge_cloud_sigma_px > 0.0)) throw DomainError("SimConfig: cloud sigma must be > 0");
    if (!(rates.continuum_per_kev_frame >= 0.0) || !(rates.kalpha_per_frame >= 0.0) ||
        !(rates.kbeta_per_frame >= 0.0) || !(rates.tracks_per_frame >= 0.0))
      throw DomainError("SimConfig: rates must be >= 0");
    if (!(environment_scale >= 0.0)) throw DomainError("SimConfig: environment scale must be >= 0");
    if (!(injected_beta2_over_2 >= 0.0)) throw DomainError("SimConfig: injected signal must be >= 0");
    if (!(energy_max_kev > energy_min_kev) || !(energy_min_kev > 0.0))
      throw DomainError("SimConfig: bad continuum energy range");
    if (!(continuum_tau_kev > 0.0)) throw DomainError("SimConfig: continuum tau must be > 0");
    lines.validate();
    if (injected_beta2_over_2 > 0.0) rs.validate();
  }

  // Mean forbidden-line photons per frame for the injected beta^2/2:
  // the full-measurement expectation scaled by exposure/duration.
  double signal_counts_per_frame() const {
    if (injected_beta2_over_2 <= 0.0) return 0.0;
    return injected_beta2_over_2 * rs_denominator(rs) * (exposure_s / rs.duration_s);
  }
};

struct TruthHit {
  enum class Kind { continuum, kalpha, kbeta, signal, track };
  Kind kind;
  double e_true_kev;
  double e_meas_kev;  // after response smearing; == e_true for tracks
  double x_px;
  double y_px;
};

struct FrameTruth {
  std::vector<TruthHit> hits;
};

// Spreads `total_adu` as a round Gaussian charge cloud centred at (x,y).
// Pixel shares are exact integrals of the 2-D Gaussian over pixel areas
// (separable, via the error function). Charge falling outside the frame or
// beyond the +-r pixel window (r covers > 5.5 sigma, < 1e-7 loss) is lost.
inline void deposit_gaussian_cloud(std::vector<double>& grid, std::uint32_t width,
                                   std::uint32_t height, double x, double y, double total_adu,
                                   double sigma_px) {
  if (sigma_px <= 0.0) throw DomainError("deposit_gaussian_cloud: sigma must be > 0");
  const long r = std::max(1L, static_cast<long>(std::ceil(5.5 * sigma_px)));
  const long cx = static_cast<long>(std::floor(x));
  const long cy = static_cast<long>(std::floor(y));
  const double inv = 1.0 / (sigma_px * std::sqrt(2.0));
  double wx[32], wy[32];
  const long n = 2 * r + 1;
  if (n > 32) throw DomainError("deposit_gaussian_cloud: cloud sigma too large");
  for (long i = 0; i < n; ++i) {
    const long px = cx - r + i;
    wx[i] = 0.5 * (std::erf((px + 1 - x) * inv) - std::erf((px - x) * inv));
    const long py = cy - r + i;
    wy[i] = 0.5 * (std::erf((py + 1 - y) * inv) - std::erf((py - y) * inv));
  }
  for (long j = 0; j < n; ++j) {
    const long py = cy - r + j;
    if (py < 0 || py >= static_cast<long>(height)) continue;
    for (long i = 0; i < n; ++i) {
      const long px = cx - r + i;
      if (px < 0 || px >= static_cast<long>(width)) continue;
      grid[static_cast<std::size_t>(py) * width + px] += total_adu * wx[i] * wy[j];
    }
  }
}

// Deposits a straight minimum-ionizing-style track as small charge steps
// along its length; parts leaving the frame are clipped away.
inline void deposit_track(std::vector<double>& grid, std::uint32_t width, std::uint32_t height,
                          double x0, double y0, double angle_rad, double length_px,
                          double total_adu) {
  const int steps = std::max(2, static_cast<int>(std::ceil(length_px * 2.0)));
  const double q = total_adu / steps;
  const double dx = std::cos(angle_rad);
  const double dy = std::sin(angle_rad);
  for (int i = 0; i < steps; ++i) {
    const double t = length_px * (i + 0.5) / steps;
    const long px = static_cast<long>(std::floor(x0 + t * dx));
    const long py = static_cast<long>(std::floor(y0 + t * dy));
    if (px < 0 || px >= static_cast<long>(width) || py < 0 || py >= static_cast<long>(height))
      continue;
    grid[static_cast<std::size_t>(py) * width + px] += q;
  }
}

namespace detail {

// Continuum spectrum p(E) proportional to 1 + exp(-E/tau) on [emin,emax]:
// a mixture of a flat part (weight emax-emin) and a truncated exponential
// (weight tau*(exp(-emin/tau)-exp(-emax/tau))), sampled by inversion.
inline double sample_continuum_energy(Rng& rng, double emin, double emax, double tau) {
  const double wflat = emax - emin;
  const double a = std::exp(-emin / tau);
  const double b = std::exp(-emax / tau);
  const double wexp = tau * (a - b);
  if (rng.uniform() * (wflat + wexp) < wflat) return rng.uniform(emin, emax);
  return -tau * std::log(a - rng.uniform() * (a - b));
}

}  // namespace detail

// One frame, bit-reproducible from (cfg.seed, frame_index) alone.
inline PixelFrame simulate_frame(const SimConfig& cfg, std::uint64_t frame_index, bool current_on,
                                 FrameTruth* truth = nullptr) {
  cfg.validate();
  Rng rng = Rng::for_stream(cfg.seed, frame_index);
  const std::uint32_t w = cfg.frame_width;
  const std::uint32_t h = cfg.frame_height;
  std::vector<double> grid(static_cast<std::size_t>(w) * h, 0.0);

  auto deposit_photon = [&](double e_true_kev, TruthHit::Kind kind) {
    const double x = rng.uniform(0.0, static_cast<double>(w));
    const double y = rng.uniform(0.0, static_cast<double>(h));
    double e_meas = e_true_kev + rng.normal() * cfg.response.sigma_kev_at(e_true_kev);
    if (e_meas < 0.0) e_meas = 0.0;
    deposit_gaussian_cloud(grid, w, h, x, y, e_meas * cfg.adu_gain_adu_per_kev,
                           cfg.charge_cloud_sigma_px);
    if (truth) truth->hits.push_back({kind, e_true_kev, e_meas, x, y});
  };

  const double env = cfg.environment_scale;
  const double span_kev = cfg.energy_max_kev - cfg.energy_min_kev;
  const std::uint64_t n_cont = rng.poisson(cfg.rates.continuum_per_kev_frame * span_kev * env);
  const std::uint64_t n_ka = rng.poisson(cfg.rates.kalpha_per_frame * env);
  const std::uint64_t n_kb = rng.poisson(cfg.rates.kbeta_per_frame * env);
  const std::uint64_t n_sig = current_on ? rng.poisson(cfg.signal_counts_per_frame()) : 0;
  const std::uint64_t n_trk = rng.poisson(cfg.rates.tracks_per_frame * env);

  for (std::uint64_t i = 0; i < n_cont; ++i)
    deposit_photon(detail::sample_continuum_energy(rng, cfg.energy_min_kev, cfg.energy_max_kev,
                                                   cfg.continuum_tau_kev),
                   TruthHit::Kind::continuum);
  for (std::uint64_t i = 0; i < n_ka; ++i) deposit_photon(cfg.lines.kalpha_kev, TruthHit::Kind::kalpha);
  for (std::uint64_t i = 0; i < n_kb; ++i) deposit_photon(cfg.lines.kbeta_kev, TruthHit::Kind::kbeta);
  for (std::uint64_t i = 0; i < n_sig; ++i)
    deposit_photon(cfg.lines.forbidden_kev, TruthHit::Kind::signal);
  for (std::uint64_t i = 0; i < n_trk; ++i) {
    const double x0 = rng.uniform(0.0, static_cast<double>(w));
    const double y0 = rng.uniform(0.0, static_cast<double>(h));
    const double angle = rng.uniform(0.0, 2.0 * kPi);
    const double length = rng.uniform(5.0, 50.0);
    const double e_kev = rng.uniform(20.0, 200.0);
    deposit_track(grid, w, h, x0, y0, angle, length, e_kev * cfg.adu_gain_adu_per_kev);
    if (truth) truth->hits.push_back({TruthHit::Kind::track, e_kev, e_kev, x0, y0});
  }

  if (cfg.readout_noise_adu > 0.0)
    for (auto& p : grid) p += rng.normal() * cfg.readout_noise_adu;

  PixelFrame f(w, h);
  f.meta = {frame_index, current_on, cfg.exposure_s, cfg.seed};
  for (std::size_t i = 0; i < grid.size(); ++i) f.adu[i] = static_cast<float>(grid[i]);
  return f;
}

// Frames [0, n_frames). Worker threads each own a strided subset of frame
// indices; the per-frame substreams make the result independent of the
// thread count.
inline std::vector<PixelFrame> simulate_run(const SimConfig& cfg, std::uint64_t n_frames,
                                            bool current_on, unsigned threads = 1) {
  cfg.validate();
  if (n_frames == 0) throw DomainError("simulate_run: need at least one frame");
  std::vector<PixelFrame> frames(n_frames);
  if (threads <= 1) {
    for (std::uint64_t i = 0; i < n_frames; ++i) frames[i] = simulate_frame(cfg, i, current_on);
    return frames;
  }
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::uint64_t i = t; i < n_frames; i += threads)
        frames[i] = simulate_frame(cfg, i, current_on);
    });
  for (auto& th : pool) th.join();
  return frames;
}

}  // namespace vip
