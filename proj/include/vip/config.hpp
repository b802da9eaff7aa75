#pragma once

// Pipeline configuration: INI file with exactly the sections
// [sim] [recon] [fit] [limit] [rs]. Unknown sections or keys are
// configuration errors — silent typo-tolerance has no place in an
// analysis whose output is a physics limit. dump_config emits a canonical
// form (fixed order, shortest round-trip numbers) which also feeds the
// FNV-1a config hash recorded in run manifests.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "vip/fit.hpp"
#include "vip/recon.hpp"
#include "vip/sim.hpp"
#include "vip/spectrum.hpp"

namespace vip {

struct PipelineConfig {
  SimConfig sim;
  ReconConfig recon;
  FitOptions fit_opts;
  double min_peak_energy_kev = 6.0;   // calibration peak search floor (nominal-gain ADU)
  double adu_bin_width = 1.0;
  double energy_bin_width_kev = 0.001;
  double cl = 0.997;
  RoiWindow roi;
  RSParameters rs;
  std::uint64_t n_frames = 300;
  unsigned threads = 1;
  bool write_frames = true;

  void validate() const {
    sim.validate();
    recon.validate();
    fit_opts.validate();
    rs.validate();
    roi.validate();
    if (!(min_peak_energy_kev > 0.0)) throw ConfigError("fit.min_peak_energy_kev must be > 0");
    if (!(adu_bin_width > 0.0)) throw ConfigError("fit.adu_bin_width must be > 0");
    if (!(energy_bin_width_kev > 0.0)) throw ConfigError("fit.energy_bin_width_kev must be > 0");
    if (!(cl > 0.0 && cl < 1.0)) throw ConfigError("limit.cl must be in (0,1)");
    if (n_frames == 0) throw ConfigError("sim.n_frames must be >= 1");
    if (threads == 0) throw ConfigError("sim.threads must be >= 1");
    energy_binning();  // checks divisibility
  }

  Binning energy_binning() const {
    const double span = sim.energy_max_kev - sim.energy_min_kev;
    const double n = span / energy_bin_width_kev;
    const long ni = std::lround(n);
    if (ni < 1 || std::fabs(n - static_cast<double>(ni)) > 1e-9 * n)
      throw ConfigError("fit.energy_bin_width_kev must divide the simulated energy range");
    return Binning{sim.energy_min_kev, sim.energy_max_kev, static_cast<std::size_t>(ni)};
  }

  // ADU histogram for the calibration fit: from 0 to 15% above the highest
  // smeared photon energy at nominal gain, whole bins.
  Binning adu_binning() const {
    const double hi = sim.energy_max_kev * sim.adu_gain_adu_per_kev * 1.15;
    const std::size_t n = static_cast<std::size_t>(std::ceil(hi / adu_bin_width));
    return Binning{0.0, static_cast<double>(n) * adu_bin_width, n};
  }
};

namespace detail {

inline std::string format_shortest(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& v, const std::string& where) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') throw ConfigError(where + ": not a number: '" + v + "'");
  return x;
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& where) {
  // strtoull would silently wrap a negative input.
  if (v.empty() || v[0] == '-' || v[0] == '+')
    throw ConfigError(where + ": not a non-negative integer: '" + v + "'");
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError(where + ": not a non-negative integer: '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(where + ": not a boolean (true/false/1/0): '" + v + "'");
}

}  // namespace detail

inline PipelineConfig parse_config(std::istream& is) {
  PipelineConfig cfg;
  std::string section;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section");
      section = t.substr(1, t.size() - 2);
      if (section != "sim" && section != "recon" && section != "fit" && section != "limit" &&
          section != "rs")
        throw ConfigError("line " + std::to_string(lineno) + ": unknown section [" + section + "]");
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string val = detail::trim(t.substr(eq + 1));
    const std::string where = "[" + section + "] " + key;
    if (section.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");

    if (section == "sim") {
      if (key == "frame_width") cfg.sim.frame_width = static_cast<std::uint32_t>(detail::parse_u64(val, where));
      else if (key == "frame_height") cfg.sim.frame_height = static_cast<std::uint32_t>(detail::parse_u64(val, where));
      else if (key == "exposure_s") cfg.sim.exposure_s = detail::parse_double(val, where);
      else if (key == "adu_gain_adu_per_kev") cfg.sim.adu_gain_adu_per_kev = detail::parse_double(val, where);
      else if (key == "readout_noise_adu") cfg.sim.readout_noise_adu = detail::parse_double(val, where);
      else if (key == "charge_cloud_sigma_px") cfg.sim.charge_cloud_sigma_px = detail::parse_double(val, where);
      else if (key == "continuum_rate_per_kev_frame") cfg.sim.rates.continuum_per_kev_frame = detail::parse_double(val, where);
      else if (key == "continuum_tau_kev") cfg.sim.continuum_tau_kev = detail::parse_double(val, where);
      else if (key == "kalpha_rate_per_frame") cfg.sim.rates.kalpha_per_frame = detail::parse_double(val, where);
      else if (key == "kbeta_rate_per_frame") cfg.sim.rates.kbeta_per_frame = detail::parse_double(val, where);
      else if (key == "track_rate_per_frame") cfg.sim.rates.tracks_per_frame = detail::parse_double(val, where);
      else if (key == "environment_scale") cfg.sim.environment_scale = detail::parse_double(val, where);
      else if (key == "injected_beta2_over_2") cfg.sim.injected_beta2_over_2 = detail::parse_double(val, where);
      else if (key == "energy_min_kev") cfg.sim.energy_min_kev = detail::parse_double(val, where);
      else if (key == "energy_max_kev") cfg.sim.energy_max_kev = detail::parse_double(val, where);
      else if (key == "seed") cfg.sim.seed = detail::parse_u64(val, where);
      else if (key == "n_frames") cfg.n_frames = detail::parse_u64(val, where);
      else if (key == "threads") cfg.threads = static_cast<unsigned>(detail::parse_u64(val, where));
      else if (key == "write_frames") cfg.write_frames = detail::parse_bool(val, where);
      else throw ConfigError(where + ": unknown key");
    } else if (section == "recon") {
      if (key == "seed_threshold_adu") cfg.recon.seed_threshold_adu = detail::parse_double(val, where);
      else if (key == "split_threshold_adu") cfg.recon.split_threshold_adu = detail::parse_double(val, where);
      else if (key == "max_xray_pixels") cfg.recon.max_xray_pixels = static_cast<std::uint32_t>(detail::parse_u64(val, where));
      else if (key == "max_bounding_box_px") cfg.recon.max_bounding_box_px = static_cast<std::uint32_t>(detail::parse_u64(val, where));
      else throw ConfigError(where + ": unknown key");
    } else if (section == "fit") {
      if (key == "window_half_width_sigmas") cfg.fit_opts.window_half_width_sigmas = detail::parse_double(val, where);
      else if (key == "rel_tol") cfg.fit_opts.rel_tol = detail::parse_double(val, where);
      else if (key == "max_iterations") cfg.fit_opts.max_iterations = static_cast<int>(detail::parse_u64(val, where));
      else if (key == "min_peak_energy_kev") cfg.min_peak_energy_kev = detail::parse_double(val, where);
      else if (key == "adu_bin_width") cfg.adu_bin_width = detail::parse_double(val, where);
      else if (key == "energy_bin_width_kev") cfg.energy_bin_width_kev = detail::parse_double(val, where);
      else throw ConfigError(where + ": unknown key");
    } else if (section == "limit") {
      if (key == "cl") cfg.cl = detail::parse_double(val, where);
      else if (key == "roi_low_kev") cfg.roi.e_low_kev = detail::parse_double(val, where);
      else if (key == "roi_high_kev") cfg.roi.e_high_kev = detail::parse_double(val, where);
      else throw ConfigError(where + ": unknown key");
    } else {  // rs
      if (key == "current_a") cfg.rs.current_a = detail::parse_double(val, where);
      else if (key == "duration_s") cfg.rs.duration_s = detail::parse_double(val, where);
      else if (key == "strip_length_d_m") cfg.rs.strip_length_d_m = detail::parse_double(val, where);
      else if (key == "scattering_length_mu_m") cfg.rs.scattering_length_mu_m = detail::parse_double(val, where);
      else if (key == "capture_radiative_fraction") cfg.rs.capture_radiative_fraction = detail::parse_double(val, where);
      else if (key == "detection_efficiency") cfg.rs.detection_efficiency = detail::parse_double(val, where);
      else throw ConfigError(where + ": unknown key");
    }
  }
  cfg.sim.rs = cfg.rs;  // injection bookkeeping uses the same budget parameters
  try {
    cfg.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path.string());
  return parse_config(is);
}

// Canonical form: fixed section and key order, shortest round-trip numbers.
inline std::string dump_config(const PipelineConfig& cfg) {
  using detail::format_shortest;
  std::ostringstream os;
  os << "[sim]\n";
  os << "frame_width=" << cfg.sim.frame_width << '\n';
  os << "frame_height=" << cfg.sim.frame_height << '\n';
  os << "exposure_s=" << format_shortest(cfg.sim.exposure_s) << '\n';
  os << "adu_gain_adu_per_kev=" << format_shortest(cfg.sim.adu_gain_adu_per_kev) << '\n';
  os << "readout_noise_adu=" << format_shortest(cfg.sim.readout_noise_adu) << '\n';
  os << "charge_cloud_sigma_px=" << format_shortest(cfg.sim.charge_cloud_sigma_px) << '\n';
  os << "continuum_rate_per_kev_frame=" << format_shortest(cfg.sim.rates.continuum_per_kev_frame) << '\n';
  os << "continuum_tau_kev=" << format_shortest(cfg.sim.continuum_tau_kev) << '\n';
  os << "kalpha_rate_per_frame=" << format_shortest(cfg.sim.rates.kalpha_per_frame) << '\n';
  os << "kbeta_rate_per_frame=" << format_shortest(cfg.sim.rates.kbeta_per_frame) << '\n';
  os << "track_rate_per_frame=" << format_shortest(cfg.sim.rates.tracks_per_frame) << '\n';
  os << "environment_scale=" << format_shortest(cfg.sim.environment_scale) << '\n';
  os << "injected_beta2_over_2=" << format_shortest(cfg.sim.injected_beta2_over_2) << '\n';
  os << "energy_min_kev=" << format_shortest(cfg.sim.energy_min_kev) << '\n';
  os << "energy_max_kev=" << format_shortest(cfg.sim.energy_max_kev) << '\n';
  os << "seed=" << cfg.sim.seed << '\n';
  os << "n_frames=" << cfg.n_frames << '\n';
  os << "threads=" << cfg.threads << '\n';
  os << "write_frames=" << (cfg.write_frames ? "true" : "false") << '\n';
  os << "[recon]\n";
  os << "seed_threshold_adu=" << format_shortest(cfg.recon.seed_threshold_adu) << '\n';
  os << "split_threshold_adu=" << format_shortest(cfg.recon.split_threshold_adu) << '\n';
  os << "max_xray_pixels=" << cfg.recon.max_xray_pixels << '\n';
  os << "max_bounding_box_px=" << cfg.recon.max_bounding_box_px << '\n';
  os << "[fit]\n";
  os << "window_half_width_sigmas=" << format_shortest(cfg.fit_opts.window_half_width_sigmas) << '\n';
  os << "rel_tol=" << format_shortest(cfg.fit_opts.rel_tol) << '\n';
  os << "max_iterations=" << cfg.fit_opts.max_iterations << '\n';
  os << "min_peak_energy_kev=" << format_shortest(cfg.min_peak_energy_kev) << '\n';
  os << "adu_bin_width=" << format_shortest(cfg.adu_bin_width) << '\n';
  os << "energy_bin_width_kev=" << format_shortest(cfg.energy_bin_width_kev) << '\n';
  os << "[limit]\n";
  os << "cl=" << format_shortest(cfg.cl) << '\n';
  os << "roi_low_kev=" << format_shortest(cfg.roi.e_low_kev) << '\n';
  os << "roi_high_kev=" << format_shortest(cfg.roi.e_high_kev) << '\n';
  os << "[rs]\n";
  os << "current_a=" << format_shortest(cfg.rs.current_a) << '\n';
  os << "duration_s=" << format_shortest(cfg.rs.duration_s) << '\n';
  os << "strip_length_d_m=" << format_shortest(cfg.rs.strip_length_d_m) << '\n';
  os << "scattering_length_mu_m=" << format_shortest(cfg.rs.scattering_length_mu_m) << '\n';
  os << "capture_radiative_fraction=" << format_shortest(cfg.rs.capture_radiative_fraction) << '\n';
  os << "detection_efficiency=" << format_shortest(cfg.rs.detection_efficiency) << '\n';
  return os.str();
}

// FNV-1a 64-bit over the canonical dump. Timestamps never enter the hash,
// so re-running an identical configuration reproduces it.
inline std::string config_hash(const PipelineConfig& cfg) {
  const std::string s = dump_config(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Named starting points: "default" (= "lnf", ground-level lab rates) and
// "lngs" (underground, ambient backgrounds scaled by 0.1).
inline PipelineConfig preset_config(const std::string& name) {
  PipelineConfig cfg;
  if (name == "default" || name == "lnf") return cfg;
  if (name == "lngs") {
    cfg.sim.environment_scale = 0.1;
    return cfg;
  }
  throw ConfigError("unknown preset '" + name + "' (available: default, lnf, lngs)");
}

}  // namespace vip
