#pragma once

// End-to-end orchestration: paired current-off / current-on runs, event
// reconstruction, auto-calibration, spectra, subtraction, ROI counting and
// the final limit, with a machine-readable manifest tying the outputs
// together. Frames are simulated, optionally persisted, and reconstructed
// one at a time so memory stays bounded at campaign-scale frame counts.
//
// Output files never appear half-written: everything is staged to a .tmp
// sibling and renamed into place. The manifest is written even when a
// stage fails (status "incomplete" plus the failed stage and reason).

#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vip/config.hpp"
#include "vip/fit.hpp"
#include "vip/frame.hpp"
#include "vip/limits.hpp"
#include "vip/recon.hpp"
#include "vip/sim.hpp"
#include "vip/spectrum.hpp"
#include "vip/version.hpp"

namespace vip {

inline void atomic_write_text(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + tmp.string());
    os << content;
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string iso_utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunSummary {
  std::string name;
  std::uint64_t run_index = 0;
  std::uint64_t seed = 0;
  std::uint64_t n_frames = 0;
  double exposure_s = 0.0;
  double live_time_s = 0.0;
  std::uint64_t n_clusters = 0;
  std::uint64_t n_accepted = 0;
  std::uint64_t n_rejected_tracks = 0;
  std::string frames_file;  // empty when frames are not persisted
  std::string events_file;
};

// Simulates and reconstructs one arm of the experiment. Frames stream
// through reconstruction in index order; worker threads only parallelize
// the simulation of a batch, so outputs are identical for any thread
// count. The run seed is the master seed XOR the run index (off=0, on=1).
inline RunSummary run_arm(const PipelineConfig& cfg, bool current_on,
                          const std::filesystem::path& out_dir,
                          std::vector<EventRecord>& events_out) {
  const std::uint64_t run_index = current_on ? 1 : 0;
  SimConfig sim = cfg.sim;
  sim.seed = cfg.sim.seed ^ run_index;

  RunSummary rs;
  rs.name = current_on ? "current_on" : "current_off";
  rs.run_index = run_index;
  rs.seed = sim.seed;
  rs.n_frames = cfg.n_frames;
  rs.exposure_s = sim.exposure_s;
  rs.live_time_s = static_cast<double>(cfg.n_frames) * sim.exposure_s;

  const std::string frames_name = current_on ? "frames_on.vipf" : "frames_off.vipf";
  const std::string events_name = current_on ? "events_on.csv" : "events_off.csv";
  std::ofstream frames_os;
  std::filesystem::path frames_tmp;
  if (cfg.write_frames) {
    frames_tmp = out_dir / (frames_name + ".tmp");
    frames_os.open(frames_tmp, std::ios::binary);
    if (!frames_os) throw IoError("cannot open for write: " + frames_tmp.string());
  }

  events_out.clear();
  const unsigned batch = cfg.threads > 1 ? cfg.threads : 1;
  std::vector<PixelFrame> frames;
  for (std::uint64_t base = 0; base < cfg.n_frames; base += batch) {
    const std::uint64_t n = std::min<std::uint64_t>(batch, cfg.n_frames - base);
    frames.assign(n, PixelFrame{});
    if (batch == 1) {
      frames[0] = simulate_frame(sim, base, current_on);
    } else {
      std::vector<std::thread> pool;
      for (std::uint64_t k = 0; k < n; ++k)
        pool.emplace_back([&, k] { frames[k] = simulate_frame(sim, base + k, current_on); });
      for (auto& t : pool) t.join();
    }
    for (std::uint64_t k = 0; k < n; ++k) {
      if (cfg.write_frames) write_vipf_frame(frames_os, frames[k]);
      const auto clusters = find_clusters(frames[k], cfg.recon);
      rs.n_clusters += clusters.size();
      for (const auto& c : clusters) {
        if (classify_cluster(c, cfg.recon) == ClusterClass::xray) {
          ++rs.n_accepted;
          events_out.push_back({c.frame_index, c.x_min, c.y_min, c.n_pixels, c.total_adu});
        } else {
          ++rs.n_rejected_tracks;
        }
      }
    }
  }

  if (cfg.write_frames) {
    frames_os.close();
    if (!frames_os) throw IoError("write failed: " + frames_tmp.string());
    std::filesystem::rename(frames_tmp, out_dir / frames_name);
    rs.frames_file = frames_name;
  }
  {
    std::ostringstream os;
    write_event_csv(os, events_out);
    atomic_write_text(out_dir / events_name, os.str());
    rs.events_file = events_name;
  }
  return rs;
}

// Auto-calibration from the pooled event ADU spectrum: seed the two
// highest maxima above the configured energy floor (at nominal gain),
// fit each as a Gaussian plus linear background, then map the lower
// centroid to K-alpha and the upper one to K-beta.
inline Calibration calibrate_from_events(const std::vector<EventRecord>& events,
                                         const PipelineConfig& cfg) {
  const Binning binning = cfg.adu_binning();
  Hist1D adu_hist = events_to_adu_spectrum(events, binning);

  const double gain_nom = cfg.sim.adu_gain_adu_per_kev;
  const double sigma_adu = cfg.sim.response.sigma_kev_at(cfg.sim.lines.kalpha_kev) * gain_nom;
  const std::size_t rebin = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(sigma_adu / binning.width())));
  const double min_pos = cfg.min_peak_energy_kev * gain_nom;
  const auto cands = find_peak_candidates(adu_hist, min_pos, 2, 4.0 * sigma_adu, rebin);

  std::vector<CalibrationLine> lines(2);
  const double energies[2] = {cfg.sim.lines.kalpha_kev, cfg.sim.lines.kbeta_kev};
  for (int p = 0; p < 2; ++p) {
    PeakModel init;
    init.peaks.push_back({cands[p].position,
                          cfg.sim.response.sigma_kev_at(energies[p]) * gain_nom,
                          std::max(cands[p].height, 1.0)});
    FitResult fr = fit_peaks(adu_hist, init, cfg.fit_opts);
    if (fr.status != FitStatus::converged)
      throw StageError("calibrate", "non_convergence",
                       "peak fit near " + std::to_string(cands[p].position) + " ADU did not converge");
    lines[p] = {energies[p], fr.model.peaks[0].centroid, fr.centroid_error(0)};
  }
  return calibrate(lines);
}

struct SubtractionDiagnostics {
  double chi2 = 0.0;
  int ndf = 0;
  double chi2_per_ndf = 0.0;
  double mean_pull = 0.0;
  double p_value = 0.0;
};

// Pull statistics of the difference spectrum. Bins with zero error (no
// counts in either arm) carry no information and are excluded from ndf.
inline SubtractionDiagnostics subtraction_diagnostics(const EnergySpectrum& diff) {
  diff.validate();
  SubtractionDiagnostics d;
  double sum_pull = 0.0;
  for (std::size_t i = 0; i < diff.counts.size(); ++i) {
    if (!(diff.errors[i] > 0.0)) continue;
    const double pull = diff.counts[i] / diff.errors[i];
    d.chi2 += pull * pull;
    sum_pull += pull;
    ++d.ndf;
  }
  if (d.ndf > 0) {
    d.chi2_per_ndf = d.chi2 / d.ndf;
    d.mean_pull = sum_pull / d.ndf;
    d.p_value = chi2_survival(d.chi2, d.ndf);
  }
  return d;
}

// Plot-ready slice: all bins overlapping [lo,hi).
inline EnergySpectrum slice_spectrum(const EnergySpectrum& spec, double lo_kev, double hi_kev) {
  spec.validate();
  if (!(hi_kev > lo_kev)) throw DomainError("slice_spectrum: empty range");
  const Binning& b = spec.binning;
  long first = b.index_of(lo_kev);
  long last = b.index_of(hi_kev);
  if (first < 0) first = 0;
  if (last >= static_cast<long>(b.n_bins)) last = static_cast<long>(b.n_bins) - 1;
  else if (b.edge(static_cast<std::size_t>(last)) == hi_kev) --last;  // half-open range
  if (last < first) throw DomainError("slice_spectrum: range misses the spectrum");
  Binning nb{b.edge(static_cast<std::size_t>(first)), b.edge(static_cast<std::size_t>(last) + 1),
             static_cast<std::size_t>(last - first + 1)};
  EnergySpectrum out(nb, spec.live_time_s, spec.label);
  for (long i = first; i <= last; ++i) {
    out.counts[static_cast<std::size_t>(i - first)] = spec.counts[static_cast<std::size_t>(i)];
    out.errors[static_cast<std::size_t>(i - first)] = spec.errors[static_cast<std::size_t>(i)];
  }
  return out;
}

// Full pipeline. Writes into out_dir: frames_{off,on}.vipf (optional),
// events_{off,on}.csv, calibration.json, spectrum_{off,on}.csv,
// difference.csv, limit.json, manifest.json. Returns the manifest.
inline nlohmann::ordered_json run_experiment(const PipelineConfig& cfg,
                                             const std::filesystem::path& out_dir) {
  try {
    cfg.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  std::filesystem::create_directories(out_dir);

  nlohmann::ordered_json m;
  m["tool_version"] = kToolVersion;
  m["config_hash"] = config_hash(cfg);
  m["timestamp_utc"] = iso_utc_now();
  m["status"] = "incomplete";
  m["runs"] = nlohmann::ordered_json::array();

  auto run_to_json = [](const RunSummary& r) {
    nlohmann::ordered_json j;
    j["name"] = r.name;
    j["run_index"] = r.run_index;
    j["seed"] = r.seed;
    j["n_frames"] = r.n_frames;
    j["exposure_s"] = r.exposure_s;
    j["live_time_s"] = r.live_time_s;
    j["n_clusters"] = r.n_clusters;
    j["n_accepted"] = r.n_accepted;
    j["n_rejected_tracks"] = r.n_rejected_tracks;
    if (!r.frames_file.empty()) j["frames_file"] = r.frames_file;
    j["events_file"] = r.events_file;
    return j;
  };

  std::string stage = "simulate_off";
  try {
    std::vector<EventRecord> events_off, events_on;
    RunSummary off = run_arm(cfg, false, out_dir, events_off);
    m["runs"].push_back(run_to_json(off));
    stage = "simulate_on";
    RunSummary on = run_arm(cfg, true, out_dir, events_on);
    m["runs"].push_back(run_to_json(on));

    stage = "calibrate";
    std::vector<EventRecord> pooled = events_off;
    pooled.insert(pooled.end(), events_on.begin(), events_on.end());
    Calibration cal = calibrate_from_events(pooled, cfg);
    atomic_write_text(out_dir / "calibration.json", calibration_to_json(cal).dump(2) + "\n");

    stage = "spectrum";
    const Binning eb = cfg.energy_binning();
    EnergySpectrum spec_off = energy_spectrum_from_events(events_off, cal, eb, off.live_time_s,
                                                          SpectrumLabel::current_off);
    EnergySpectrum spec_on =
        energy_spectrum_from_events(events_on, cal, eb, on.live_time_s, SpectrumLabel::current_on);
    {
      std::ostringstream os;
      write_spectrum_csv(os, spec_off);
      atomic_write_text(out_dir / "spectrum_off.csv", os.str());
    }
    {
      std::ostringstream os;
      write_spectrum_csv(os, spec_on);
      atomic_write_text(out_dir / "spectrum_on.csv", os.str());
    }

    stage = "subtract";
    EnergySpectrum diff = subtract(spec_on, spec_off);
    {
      std::ostringstream os;
      write_spectrum_csv(os, diff);
      atomic_write_text(out_dir / "difference.csv", os.str());
    }
    const SubtractionDiagnostics sd = subtraction_diagnostics(diff);
    m["subtraction"] = {{"chi2", sd.chi2},
                        {"ndf", sd.ndf},
                        {"chi2_per_ndf", sd.chi2_per_ndf},
                        {"mean_pull", sd.mean_pull},
                        {"p_value", sd.p_value}};

    stage = "limit";
    const RoiResult roi_on = roi_counts(spec_on, cfg.roi);
    const RoiResult roi_off = roi_counts(spec_off, cfg.roi);
    RoiCounts counts;
    counts.n_on = roi_on.counts;
    counts.n_off = roi_off.counts;
    counts.scale = on.live_time_s / off.live_time_s;
    counts.cl = cfg.cl;
    LimitResult limit = compute_limit(counts, cfg.rs);
    atomic_write_text(out_dir / "limit.json", limit_to_json(limit).dump(2) + "\n");
    m["roi"] = {{"e_low_kev", roi_on.snapped_low_kev},
                {"e_high_kev", roi_on.snapped_high_kev},
                {"n_bins", roi_on.n_bins},
                {"n_on", counts.n_on},
                {"n_off", counts.n_off},
                {"scale", counts.scale}};
    m["limit"] = {{"cl", cfg.cl},
                  {"delta_nx_upper", limit.delta_nx_upper},
                  {"beta2_over_2_upper", limit.beta2_over_2_upper}};

    stage = "manifest";
    m["outputs"] = {{"calibration", "calibration.json"},
                    {"spectrum_off", "spectrum_off.csv"},
                    {"spectrum_on", "spectrum_on.csv"},
                    {"difference", "difference.csv"},
                    {"limit", "limit.json"}};
    for (const auto& [key, value] : m["outputs"].items())
      if (!std::filesystem::exists(out_dir / value.get<std::string>()))
        throw IoError("manifest references missing file: " + value.get<std::string>());
    for (const auto& r : m["runs"]) {
      if (!std::filesystem::exists(out_dir / r["events_file"].get<std::string>()))
        throw IoError("manifest references missing file: " + r["events_file"].get<std::string>());
      if (r.contains("frames_file") &&
          !std::filesystem::exists(out_dir / r["frames_file"].get<std::string>()))
        throw IoError("manifest references missing file: " + r["frames_file"].get<std::string>());
    }
    m["status"] = "complete";
    atomic_write_text(out_dir / "manifest.json", m.dump(2) + "\n");
  } catch (const std::exception& e) {
    m["status"] = "incomplete";
    m["failed_stage"] = stage;
    m["error"] = e.what();
    atomic_write_text(out_dir / "manifest.json", m.dump(2) + "\n");
    if (const auto* se = dynamic_cast<const StageError*>(&e)) throw StageError(*se);
    std::string kind = "internal";
    if (dynamic_cast<const IoError*>(&e)) kind = "io";
    else if (dynamic_cast<const DomainError*>(&e)) kind = "invalid_input";
    else if (dynamic_cast<const ConfigError*>(&e)) kind = "invalid_input";
    throw StageError(stage, kind, e.what());
  }
  return m;
}

}  // namespace vip
