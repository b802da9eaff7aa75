// Release gates for the full simulate -> reconstruct -> calibrate ->
// subtract -> limit chain. Each gate prints exactly one [PASS]/[FAIL]
// line with the measured numbers next to the required tolerance; the
// binary exits nonzero if any gate fails. All gates run on fixed seeds
// so a failure is reproducible bit for bit.

#include <chrono>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "vip/vip.hpp"

namespace {

using namespace vip;

std::string strf(const char* fmt, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, ap);
  va_end(ap);
  return buf;
}

struct Gate {
  std::string name;
  bool ok = false;
  std::string detail;
};

// Simulates frames serially and keeps only pattern-accepted X-ray events.
std::vector<EventRecord> reconstruct_arm(const SimConfig& sim, const ReconConfig& recon,
                                         std::uint64_t n_frames, bool current_on,
                                         std::uint64_t* n_photons_truth = nullptr) {
  std::vector<EventRecord> events;
  for (std::uint64_t i = 0; i < n_frames; ++i) {
    FrameTruth truth;
    const PixelFrame f = simulate_frame(sim, i, current_on, n_photons_truth ? &truth : nullptr);
    if (n_photons_truth)
      for (const auto& h : truth.hits)
        if (h.kind != TruthHit::Kind::track) ++*n_photons_truth;
    const auto clusters = find_clusters(f, recon);
    const auto acc = accepted_events(clusters, recon);
    events.insert(events.end(), acc.begin(), acc.end());
  }
  return events;
}

// Known-true energy scale for gates where calibration is not under test.
Calibration nominal_calibration(double adu_gain_adu_per_kev) {
  Calibration c;
  c.gain_kev_per_adu = 1.0 / adu_gain_adu_per_kev;
  c.offset_kev = 0.0;
  return c;
}

const Binning kEnergyBinning{1.0, 12.0, 11000};  // 1 eV bins across the simulated range

// --- gate 1: electron source term -------------------------------------

Gate gate_source_count() {
  Gate g{"new-electron count from beam current and live time"};
  const double n = n_new_electrons(40.0, 14510.0 * 60.0);
  const double want = 2.1737e26;
  const double rel = std::fabs(n - want) / want;
  g.ok = rel <= 1e-4;
  g.detail = strf("40 A x 14510 min -> %.5e electrons (expect %.5e, rel dev %.1e, tol 1e-4)", n,
                  want, rel);
  return g;
}

// --- gate 2: count excess -> beta^2/2 ----------------------------------

Gate gate_beta2_conversion() {
  Gate g{"count-excess to beta^2/2 conversion at unit efficiency"};
  RSParameters rs;  // defaults: idealized detection_efficiency = 1
  const double beta2 = beta2_limit(2.207e4, rs);
  const double want = 4.5e-28;
  const double rel = std::fabs(beta2 - want) / want;
  LimitResult r = compute_limit({2.207e4, 0.0, 1.0, 0.997}, rs);
  const std::string note = limit_to_json(r)["efficiency_note"].get<std::string>();
  const bool labeled = note.find("idealized") != std::string::npos;
  g.ok = rel <= 0.01 && labeled;
  g.detail = strf("2.207e4 counts -> %.4e (expect %.2e, rel dev %.1e, tol 1e-2); "
                  "efficiency assumption labeled: %s",
                  beta2, want, rel, labeled ? "yes" : "NO");
  return g;
}

// --- gate 3: sensitivity gain over the prior bound ----------------------

Gate gate_improvement() {
  Gate g{"sensitivity gain over the prior bound"};
  const double f = improvement_factor(1.7e-26, 4.5e-28);
  g.ok = std::fabs(f - 37.8) <= 0.1;
  g.detail = strf("1.7e-26 / 4.5e-28 = %.3f (expect 37.8 +- 0.1)", f);
  return g;
}

// --- gate 4: energy-resolution closed loop ------------------------------

Gate gate_resolution_loop() {
  Gate g{"energy-resolution closed loop at the K-alpha line"};
  SimConfig sim;
  sim.frame_width = 96;
  sim.frame_height = 96;
  sim.rates = {0.0, 25.0, 0.0, 0.0};  // K-alpha only
  sim.seed = 0x4c00b;
  const std::uint64_t n_frames = 4600;  // ~115k photons generated
  ReconConfig recon;
  std::uint64_t n_photons = 0;
  const auto events = reconstruct_arm(sim, recon, n_frames, false, &n_photons);

  Hist1D h = events_to_adu_spectrum(events, Binning{700.0, 900.0, 200});
  const auto cands = find_peak_candidates(h, 720.0, 1, 50.0, 14);
  const double sigma_guess = sim.response.sigma_kev_at(sim.lines.kalpha_kev) *
                             sim.adu_gain_adu_per_kev;
  PeakModel init;
  init.peaks.push_back({cands.at(0).position, sigma_guess, cands.at(0).height});
  const FitResult fr = fit_peaks(h, init);

  const double kev_per_adu = 1.0 / sim.adu_gain_adu_per_kev;
  const double fwhm_ev = fwhm_from_sigma(fr.model.peaks[0].sigma) * kev_per_adu * 1000.0;
  const bool enough = n_photons >= 100000;
  const bool converged = fr.status == FitStatus::converged;
  g.ok = enough && converged && std::fabs(fwhm_ev - 320.0) <= 0.05 * 320.0;
  g.detail = strf("fitted FWHM at 8.040 keV = %.1f eV (expect 320 +- 16); "
                  "%llu photons simulated, %zu events fitted, fit %s",
                  fwhm_ev, static_cast<unsigned long long>(n_photons), events.size(),
                  converged ? "converged" : "did NOT converge");
  return g;
}

// --- gate 5: energy-scale calibration closed loop -----------------------

Gate gate_calibration_loop() {
  Gate g{"energy-scale calibration closed loop"};
  // High statistics push the statistical error well below the tolerance so
  // the gate probes the machinery, not the luck of one seed.
  const double gain_true_adu_per_kev = 100.0;
  const double offset_true_kev = 0.02;  // adu = (E - offset) * gain
  const std::uint64_t n_per_line = 20'000'000;

  const ResponseModel resp = ResponseModel::from_reference();
  const double sig_a = resp.sigma_kev_at(kCuKAlphaKev);
  const double sig_b = resp.sigma_kev_at(kCuKBetaKev);
  Rng rng(0xca11b8);
  Hist1D h(Binning{0.0, 1380.0, 1380});
  for (std::uint64_t i = 0; i < n_per_line; ++i) {
    h.fill((kCuKAlphaKev + sig_a * rng.normal() - offset_true_kev) * gain_true_adu_per_kev);
    h.fill((kCuKBetaKev + sig_b * rng.normal() - offset_true_kev) * gain_true_adu_per_kev);
  }

  const double sigma_adu = sig_a * gain_true_adu_per_kev;
  auto cands = find_peak_candidates(h, 600.0, 2, 4.0 * sigma_adu,
                                    static_cast<std::size_t>(std::lround(sigma_adu)));
  std::sort(cands.begin(), cands.end(),
            [](const PeakCandidate& a, const PeakCandidate& b) { return a.position < b.position; });
  // Joint two-line fit; each line seeds one Gaussian.
  PeakModel init;
  init.peaks.push_back({cands.at(0).position, sigma_adu, cands.at(0).height});
  init.peaks.push_back({cands.at(1).position, sig_b * gain_true_adu_per_kev, cands.at(1).height});
  const FitResult fr = fit_peaks(h, init);

  const Calibration cal = calibrate({{kCuKAlphaKev, fr.model.peaks[0].centroid, fr.centroid_error(0)},
                                     {kCuKBetaKev, fr.model.peaks[1].centroid, fr.centroid_error(1)}});
  const double gain_rel = std::fabs(cal.gain_kev_per_adu - 1.0 / gain_true_adu_per_kev) *
                          gain_true_adu_per_kev;
  const double offset_dev_ev = std::fabs(cal.offset_kev - offset_true_kev) * 1000.0;
  g.ok = fr.status == FitStatus::converged && gain_rel <= 1e-3 && offset_dev_ev <= 2.0;
  g.detail = strf("gain recovered to %.2e rel (tol 1e-3), offset to %.2f eV (tol 2 eV), "
                  "2x%.0e events",
                  gain_rel, offset_dev_ev, static_cast<double>(n_per_line));
  return g;
}

// --- gate 6: null on/off subtraction is structureless --------------------

Gate gate_null_subtraction() {
  Gate g{"null on/off subtraction structureless over 50 pairs"};
  SimConfig base;
  base.frame_width = 96;
  base.frame_height = 96;
  base.rates = {2.0, 20.0, 3.4, 0.5};
  const std::uint64_t n_frames = 135;
  const double live_s = static_cast<double>(n_frames) * base.exposure_s;
  ReconConfig recon;
  const Calibration cal = nominal_calibration(base.adu_gain_adu_per_kev);

  int n_ok = 0;
  double worst_pull = 0.0, worst_chi2 = 1.0;
  for (int pair = 0; pair < 50; ++pair) {
    SimConfig s_off = base, s_on = base;
    s_off.seed = 0xa11c0de + 9973ull * pair;
    s_on.seed = s_off.seed ^ 1;  // run-index convention of the pipeline
    const auto ev_off = reconstruct_arm(s_off, recon, n_frames, false);
    const auto ev_on = reconstruct_arm(s_on, recon, n_frames, true);
    const auto spec_off = energy_spectrum_from_events(ev_off, cal, kEnergyBinning, live_s,
                                                      SpectrumLabel::current_off);
    const auto spec_on = energy_spectrum_from_events(ev_on, cal, kEnergyBinning, live_s,
                                                     SpectrumLabel::current_on);
    const auto d = subtraction_diagnostics(subtract(spec_on, spec_off));
    const bool pair_ok = std::fabs(d.mean_pull) <= 0.05 && d.chi2_per_ndf >= 0.8 &&
                         d.chi2_per_ndf <= 1.2;
    if (pair_ok) ++n_ok;
    if (std::fabs(d.mean_pull) > std::fabs(worst_pull)) worst_pull = d.mean_pull;
    if (std::fabs(d.chi2_per_ndf - 1.0) > std::fabs(worst_chi2 - 1.0)) worst_chi2 = d.chi2_per_ndf;
  }
  g.ok = n_ok >= 48;
  g.detail = strf("%d/50 pairs flat (need >= 48): |mean pull| <= 0.05 and chi2/ndf in [0.8, 1.2]; "
                  "worst mean pull %.3f, worst chi2/ndf %.3f",
                  n_ok, worst_pull, worst_chi2);
  return g;
}

// --- gate 7: planted excess recovery + null limit in the toy envelope ----

Gate gate_signal_recovery() {
  Gate g{"planted ROI excess recovered; null limit inside toy envelope"};
  SimConfig base;
  base.frame_width = 96;
  base.frame_height = 96;
  const std::uint64_t n_frames = 400;
  const double live_s = static_cast<double>(n_frames) * base.exposure_s;
  ReconConfig recon;
  const Calibration cal = nominal_calibration(base.adu_gain_adu_per_kev);
  const RoiWindow roi{};

  // Choose the injected signal so 300 counts land inside the ROI: the line
  // is smeared, so only the per-event in-window fraction of the rate counts.
  const double sig_f = base.response.sigma_kev_at(base.lines.forbidden_kev);
  const double in_roi = normal_cdf((roi.e_high_kev - base.lines.forbidden_kev) / sig_f) -
                        normal_cdf((roi.e_low_kev - base.lines.forbidden_kev) / sig_f);
  const double planted = 300.0;
  const double rate_per_frame = planted / (static_cast<double>(n_frames) * in_roi);
  const double beta2_injected = rate_per_frame * base.rs.duration_s /
                                (rs_denominator(base.rs) * base.exposure_s);

  SimConfig s_off = base, s_on = base;
  s_off.seed = 0x51621;
  s_on.seed = s_off.seed ^ 1;
  s_on.injected_beta2_over_2 = beta2_injected;
  const auto spec_off = energy_spectrum_from_events(
      reconstruct_arm(s_off, recon, n_frames, false), cal, kEnergyBinning, live_s,
      SpectrumLabel::current_off);
  const auto spec_on = energy_spectrum_from_events(
      reconstruct_arm(s_on, recon, n_frames, true), cal, kEnergyBinning, live_s,
      SpectrumLabel::current_on);
  const double n_on = roi_counts(spec_on, roi).counts;
  const double n_off = roi_counts(spec_off, roi).counts;
  const double excess = n_on - n_off;
  const double band = 3.0 * std::sqrt(n_on + n_off);
  const bool recovered = std::fabs(excess - planted) <= band;

  // Second, zero-injection pair: the quoted limit must sit where toy
  // experiments with the same background put theirs.
  SimConfig z_off = base, z_on = base;
  z_off.seed = 0x20ff5;
  z_on.seed = z_off.seed ^ 1;
  const auto zspec_off = energy_spectrum_from_events(
      reconstruct_arm(z_off, recon, n_frames, false), cal, kEnergyBinning, live_s,
      SpectrumLabel::current_off);
  const auto zspec_on = energy_spectrum_from_events(
      reconstruct_arm(z_on, recon, n_frames, true), cal, kEnergyBinning, live_s,
      SpectrumLabel::current_on);
  const double zn_on = roi_counts(zspec_on, roi).counts;
  const double zn_off = roi_counts(zspec_off, roi).counts;
  const double limit_obs = upper_limit_counts({zn_on, zn_off, 1.0, 0.997});
  const CoverageResult cov = coverage_check(0.5 * (zn_on + zn_off), 100000, 0.997, 0x70f5);
  const bool in_envelope = limit_obs >= cov.q005_limit && limit_obs <= cov.q995_limit;

  g.ok = recovered && in_envelope;
  g.detail = strf("excess %.0f for 300 planted (band +-%.0f); null limit %.1f inside "
                  "[%.1f, %.1f] toy envelope: %s",
                  excess, band, limit_obs, cov.q005_limit, cov.q995_limit,
                  in_envelope ? "yes" : "NO");
  return g;
}

// --- gate 8: coverage of the quoted limit --------------------------------

Gate gate_coverage() {
  Gate g{"upper-limit coverage at 99.7% CL"};
  g.ok = true;
  std::string parts;
  for (const double b : {10.0, 100.0, 1000.0}) {
    const CoverageResult r = coverage_check(b, 100000, 0.997,
                                            0x8a7e + static_cast<std::uint64_t>(b));
    const bool ok = r.coverage >= 0.997 - 0.003;
    g.ok = g.ok && ok;
    parts += strf("%sb=%g: %.4f (unclamped %.4f)", parts.empty() ? "" : ", ", b, r.coverage,
                  r.coverage_unclamped);
  }
  g.detail = "coverage >= 0.994 required at 1e5 toys each; " + parts;
  return g;
}

// --- gate 9: low-background site scaling ---------------------------------

Gate gate_background_scaling() {
  Gate g{"underground preset: background rate and median-limit scaling"};
  PipelineConfig lnf = preset_config("lnf");
  PipelineConfig lngs = preset_config("lngs");
  for (PipelineConfig* c : {&lnf, &lngs}) {
    c->sim.frame_width = 96;
    c->sim.frame_height = 96;
  }
  lnf.sim.seed = 0x1f1a8;
  lngs.sim.seed = 0x9b5e0;
  const std::uint64_t n1 = 800, n2 = 8000;
  const RoiWindow roi{};

  const auto spec1 = energy_spectrum_from_events(
      reconstruct_arm(lnf.sim, lnf.recon, n1, false), nominal_calibration(100.0), kEnergyBinning,
      static_cast<double>(n1) * lnf.sim.exposure_s, SpectrumLabel::current_off);
  const auto spec2 = energy_spectrum_from_events(
      reconstruct_arm(lngs.sim, lngs.recon, n2, false), nominal_calibration(100.0), kEnergyBinning,
      static_cast<double>(n2) * lngs.sim.exposure_s, SpectrumLabel::current_off);
  const double rate1 = roi_counts(spec1, roi).counts / static_cast<double>(n1);
  const double rate2 = roi_counts(spec2, roi).counts / static_cast<double>(n2);
  const double ratio = rate2 / rate1;
  const bool rate_ok = ratio >= 0.08 && ratio <= 0.12;

  // Equal exposure (800 frames each), background set to the measured rates:
  // the median toy limit must shrink roughly like sqrt(background).
  const double b1 = rate1 * static_cast<double>(n1);
  const double b2 = rate2 * static_cast<double>(n1);
  const double m1 = coverage_check(b1, 20000, 0.997, 0x3ade1).median_limit;
  const double m2 = coverage_check(b2, 20000, 0.997, 0x3ade2).median_limit;
  const double mratio = m2 / m1;
  const bool limit_ok = m2 < m1 && mratio >= 0.25 && mratio <= 0.40;

  g.ok = rate_ok && limit_ok;
  g.detail = strf("ROI rate ratio %.4f (expect 0.10 +- 0.02, rates %.3f vs %.3f per frame); "
                  "median limit %.1f -> %.1f, ratio %.3f (expect ~sqrt(0.1) in [0.25, 0.40])",
                  ratio, rate1, rate2, m1, m2, mratio);
  return g;
}

// --- gate 10: clustering oracle + track leakage ---------------------------

Gate gate_reconstruction() {
  Gate g{"clustering matches brute-force oracle; track leakage below 1%"};
  ReconConfig recon;

  // Independent relabeling oracle on 1000 dense random frames.
  Rng rng(0x0c1e4);
  const std::uint32_t n = 64;
  std::uint64_t frames_checked = 0, mismatches = 0;
  std::vector<double> grid(n * n);
  for (int trial = 0; trial < 1000; ++trial) {
    PixelFrame f(n, n);
    for (auto& v : grid) v = rng.normal() * 3.0;
    for (int k = 0; k < 40; ++k)
      deposit_gaussian_cloud(grid, n, n, rng.uniform(0.0, n), rng.uniform(0.0, n),
                             rng.uniform(20.0, 1500.0), rng.uniform(0.08, 0.8));
    for (int k = 0; k < 5; ++k)
      deposit_track(grid, n, n, rng.uniform(0.0, n), rng.uniform(0.0, n),
                    rng.uniform(0.0, 2.0 * kPi), rng.uniform(5.0, 30.0),
                    rng.uniform(2000.0, 9000.0));
    for (std::size_t i = 0; i < grid.size(); ++i) f.adu[i] = static_cast<float>(grid[i]);

    const auto got = find_clusters(f, recon);
    const auto want = viptest::oracle_clusters(f, recon);
    bool same = got.size() == want.size();
    if (same) {
      std::set<std::vector<std::size_t>> got_sets, want_sets;
      for (const auto& c : got) {
        std::vector<std::size_t> idx;
        for (const auto& p : c.pixels) idx.push_back(static_cast<std::size_t>(p.y) * n + p.x);
        std::sort(idx.begin(), idx.end());
        got_sets.insert(std::move(idx));
      }
      for (const auto& c : want) want_sets.insert(c.pixel_indices);
      same = got_sets == want_sets;
    }
    if (same) {
      for (const auto& c : got) {
        bool matched = false;
        for (const auto& o : want)
          if (o.x_min == c.x_min && o.y_min == c.y_min && o.n_pixels == c.n_pixels &&
              o.x_max == c.x_max && o.y_max == c.y_max &&
              std::fabs(o.total_adu - c.total_adu) <= 1e-9 * std::fabs(o.total_adu)) {
            matched = true;
            break;
          }
        if (!matched) same = false;
      }
    }
    ++frames_checked;
    if (!same) ++mismatches;
  }

  // Cosmic-track leakage through the X-ray pattern cuts, full-size frames.
  SimConfig sim;  // default 600x600 geometry
  sim.rates = {0.0, 0.0, 0.0, 5.0};
  sim.seed = 0x7ac1e;
  std::uint64_t n_clusters = 0, n_accepted = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const PixelFrame f = simulate_frame(sim, i, false);
    const auto clusters = find_clusters(f, recon);
    n_clusters += clusters.size();
    n_accepted += accepted_events(clusters, recon).size();
  }
  const double leak = n_clusters ? static_cast<double>(n_accepted) / n_clusters : 0.0;
  const bool leak_ok = n_clusters >= 4000 && leak < 0.01;

  g.ok = mismatches == 0 && leak_ok;
  g.detail = strf("%llu/%llu frames match the oracle exactly; %llu of %llu track clusters "
                  "pass the X-ray cuts (%.2f%%, require < 1%%)",
                  static_cast<unsigned long long>(frames_checked - mismatches),
                  static_cast<unsigned long long>(frames_checked),
                  static_cast<unsigned long long>(n_accepted),
                  static_cast<unsigned long long>(n_clusters), 100.0 * leak);
  return g;
}

}  // namespace

int main() {
  Gate (*gates[])() = {gate_source_count,   gate_beta2_conversion, gate_improvement,
                       gate_resolution_loop, gate_calibration_loop, gate_null_subtraction,
                       gate_signal_recovery, gate_coverage,         gate_background_scaling,
                       gate_reconstruction};
  int failed = 0;
  int idx = 0;
  for (auto* fn : gates) {
    const auto t0 = std::chrono::steady_clock::now();
    Gate g;
    try {
      g = fn();
    } catch (const std::exception& e) {
      g.name = "gate threw";
      g.ok = false;
      g.detail = e.what();
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %02d %s: %s (%.1fs)\n", g.ok ? "PASS" : "FAIL", ++idx, g.name.c_str(),
                g.detail.c_str(), dt);
    std::fflush(stdout);
    if (!g.ok) ++failed;
  }
  std::printf("%d/10 gates passed\n", 10 - failed);
  return failed == 0 ? 0 : 1;
}
