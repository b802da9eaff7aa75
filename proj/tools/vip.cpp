// Command-line driver for the simulation and analysis pipeline.
//
// Exit codes: 0 success, 2 configuration / usage error, 3 stage failure,
// 4 fit non-convergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vip/vip.hpp"

namespace {

vip::PipelineConfig load_or_default(const std::string& config_path) {
  if (config_path.empty()) {
    vip::PipelineConfig cfg;
    cfg.sim.rs = cfg.rs;
    return cfg;
  }
  return vip::load_config(config_path);
}

void emit(const std::string& out, const std::string& content) {
  if (out.empty() || out == "-") {
    std::cout << content;
    return;
  }
  vip::atomic_write_text(out, content);
}

int run_simulate(const vip::PipelineConfig& cfg, bool current_on, std::uint64_t n_frames,
                 const std::string& out_path) {
  vip::SimConfig sim = cfg.sim;
  const std::uint64_t run_index = current_on ? 1 : 0;
  sim.seed = cfg.sim.seed ^ run_index;
  const std::filesystem::path tmp = out_path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw vip::IoError("cannot open for write: " + tmp.string());
    for (std::uint64_t i = 0; i < n_frames; ++i)
      vip::write_vipf_frame(os, vip::simulate_frame(sim, i, current_on));
    if (!os) throw vip::IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, out_path);
  nlohmann::ordered_json j;
  j["file"] = out_path;
  j["n_frames"] = n_frames;
  j["current_on"] = current_on;
  j["seed"] = sim.seed;
  j["live_time_s"] = static_cast<double>(n_frames) * sim.exposure_s;
  std::cout << j.dump() << '\n';
  return 0;
}

int run_reconstruct(const vip::PipelineConfig& cfg, const std::string& in_path,
                    const std::string& out_path) {
  std::ifstream is(in_path, std::ios::binary);
  if (!is) throw vip::IoError("cannot open: " + in_path);
  std::vector<vip::EventRecord> events;
  std::uint64_t n_frames = 0, n_clusters = 0, n_rejected = 0;
  double live_time = 0.0;
  vip::PixelFrame f;
  while (vip::read_vipf_frame(is, f)) {
    ++n_frames;
    live_time += f.meta.exposure_s;
    const auto clusters = vip::find_clusters(f, cfg.recon);
    n_clusters += clusters.size();
    for (const auto& c : clusters) {
      if (vip::classify_cluster(c, cfg.recon) == vip::ClusterClass::xray)
        events.push_back({c.frame_index, c.x_min, c.y_min, c.n_pixels, c.total_adu});
      else
        ++n_rejected;
    }
  }
  if (n_frames == 0) throw vip::IoError("no frames in " + in_path);
  std::ostringstream os;
  vip::write_event_csv(os, events);
  vip::atomic_write_text(out_path, os.str());
  nlohmann::ordered_json j;
  j["file"] = out_path;
  j["n_frames"] = n_frames;
  j["live_time_s"] = live_time;
  j["n_clusters"] = n_clusters;
  j["n_accepted"] = events.size();
  j["n_rejected_tracks"] = n_rejected;
  std::cout << j.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Forbidden-transition search pipeline: CCD frame simulation, "
               "event reconstruction, calibration, spectra and limits"};
  app.require_subcommand(1);

  std::string config_path, out_path, in_path, cal_path, on_path, off_path, label = "off";
  std::string current = "off", range = "full", preset_name, from_csv;
  std::vector<std::string> event_inputs;
  std::uint64_t frames_override = 0, toys = 100000, cov_seed = 1;
  double live_time = 0.0, background = -1.0;
  bool dump_defaults = false;

  auto* c_config = app.add_subcommand("config", "inspect configuration");
  c_config->add_flag("--dump-defaults", dump_defaults, "print the default configuration");
  c_config->add_option("-c,--config", config_path, "configuration file to resolve and echo");
  c_config->add_option("-o,--output", out_path, "write to file instead of stdout");

  auto* c_preset = app.add_subcommand("preset", "emit a named configuration preset");
  c_preset->add_option("name", preset_name, "default | lnf | lngs")->required();
  c_preset->add_option("-o,--output", out_path, "write to file instead of stdout");

  auto* c_sim = app.add_subcommand("simulate", "generate CCD frames");
  c_sim->add_option("-c,--config", config_path, "configuration file");
  c_sim->add_option("--current", current, "on | off (default off)");
  c_sim->add_option("--frames", frames_override, "override [sim] n_frames");
  c_sim->add_option("-o,--output", out_path, "output .vipf path")->required();

  auto* c_rec = app.add_subcommand("reconstruct", "cluster frames into X-ray events");
  c_rec->add_option("-c,--config", config_path, "configuration file");
  c_rec->add_option("-i,--input", in_path, "input .vipf path")->required();
  c_rec->add_option("-o,--output", out_path, "output events CSV")->required();

  auto* c_cal = app.add_subcommand("calibrate", "fit the K lines and derive the energy scale");
  c_cal->add_option("-c,--config", config_path, "configuration file");
  c_cal->add_option("-i,--input", event_inputs, "events CSV (repeatable, pooled)")->required();
  c_cal->add_option("-o,--output", out_path, "output calibration JSON")->required();

  auto* c_spec = app.add_subcommand("spectrum", "build a calibrated energy spectrum");
  c_spec->add_option("-c,--config", config_path, "configuration file");
  c_spec->add_option("-i,--input", in_path, "events CSV");
  c_spec->add_option("--cal", cal_path, "calibration JSON");
  c_spec->add_option("--live-time", live_time, "live time of the events file, seconds");
  c_spec->add_option("--label", label, "on | off");
  c_spec->add_option("--from-csv", from_csv, "slice an existing spectrum CSV instead");
  c_spec->add_option("--range", range, "full | roi | LO:HI (keV), with --from-csv");
  c_spec->add_option("-o,--output", out_path, "output spectrum CSV")->required();

  auto* c_sub = app.add_subcommand("subtract", "current-on minus scaled current-off");
  c_sub->add_option("--on", on_path, "current-on spectrum CSV")->required();
  c_sub->add_option("--off", off_path, "current-off spectrum CSV")->required();
  c_sub->add_option("-o,--output", out_path, "output difference CSV")->required();

  auto* c_lim = app.add_subcommand("limit", "ROI counts and the beta^2/2 upper bound");
  c_lim->add_option("-c,--config", config_path, "configuration file");
  c_lim->add_option("--on", on_path, "current-on spectrum CSV")->required();
  c_lim->add_option("--off", off_path, "current-off spectrum CSV")->required();
  c_lim->add_option("--coverage-toys", toys, "attach a toy coverage block (0 = off)");
  c_lim->add_option("-o,--output", out_path, "output limit JSON")->required();

  auto* c_cov = app.add_subcommand("coverage", "toy-experiment coverage of the limit recipe");
  c_cov->add_option("-c,--config", config_path, "configuration file");
  c_cov->add_option("--background", background, "mean ROI background counts per arm")->required();
  c_cov->add_option("--toys", toys, "number of toy experiments (>= 1e4)");
  c_cov->add_option("--seed", cov_seed, "toy RNG seed");
  c_cov->add_option("-o,--output", out_path, "write JSON to file instead of stdout");

  auto* c_run = app.add_subcommand("run", "full pipeline: simulate, reconstruct, calibrate, "
                                          "spectra, subtract, limit, manifest");
  c_run->add_option("-c,--config", config_path, "configuration file");
  c_run->add_option("-o,--output", out_path, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (c_config->parsed()) {
      vip::PipelineConfig cfg = dump_defaults ? vip::PipelineConfig{} : load_or_default(config_path);
      emit(out_path, vip::dump_config(cfg));
      return 0;
    }
    if (c_preset->parsed()) {
      emit(out_path, vip::dump_config(vip::preset_config(preset_name)));
      return 0;
    }

    vip::PipelineConfig cfg = load_or_default(config_path);

    if (c_sim->parsed()) {
      if (current != "on" && current != "off")
        throw vip::ConfigError("--current must be 'on' or 'off'");
      const std::uint64_t n = frames_override > 0 ? frames_override : cfg.n_frames;
      return run_simulate(cfg, current == "on", n, out_path);
    }
    if (c_rec->parsed()) return run_reconstruct(cfg, in_path, out_path);
    if (c_cal->parsed()) {
      std::vector<vip::EventRecord> pooled;
      for (const auto& p : event_inputs) {
        auto ev = vip::read_event_csv(p);
        pooled.insert(pooled.end(), ev.begin(), ev.end());
      }
      const vip::Calibration cal = vip::calibrate_from_events(pooled, cfg);
      vip::atomic_write_text(out_path, vip::calibration_to_json(cal).dump(2) + "\n");
      std::cout << "gain_kev_per_adu=" << cal.gain_kev_per_adu << " offset_kev=" << cal.offset_kev
                << '\n';
      return 0;
    }
    if (c_spec->parsed()) {
      if (!from_csv.empty()) {
        vip::EnergySpectrum s = vip::read_spectrum_csv(from_csv);
        if (range == "roi")
          s = vip::slice_spectrum(s, cfg.roi.e_low_kev, cfg.roi.e_high_kev);
        else if (range != "full") {
          const auto colon = range.find(':');
          if (colon == std::string::npos)
            throw vip::ConfigError("--range must be full, roi or LO:HI");
          s = vip::slice_spectrum(s, std::stod(range.substr(0, colon)),
                                  std::stod(range.substr(colon + 1)));
        }
        std::ostringstream os;
        vip::write_spectrum_csv(os, s);
        emit(out_path, os.str());
        return 0;
      }
      if (in_path.empty() || cal_path.empty())
        throw vip::ConfigError("spectrum needs -i and --cal (or --from-csv)");
      if (!(live_time > 0.0)) throw vip::ConfigError("spectrum needs --live-time > 0");
      if (label != "on" && label != "off") throw vip::ConfigError("--label must be 'on' or 'off'");
      const auto events = vip::read_event_csv(in_path);
      const auto cal = vip::read_calibration_json(cal_path);
      const auto spec = vip::energy_spectrum_from_events(
          events, cal, cfg.energy_binning(), live_time,
          label == "on" ? vip::SpectrumLabel::current_on : vip::SpectrumLabel::current_off);
      std::ostringstream os;
      vip::write_spectrum_csv(os, spec);
      emit(out_path, os.str());
      return 0;
    }
    if (c_sub->parsed()) {
      const auto diff = vip::subtract(vip::read_spectrum_csv(on_path), vip::read_spectrum_csv(off_path));
      std::ostringstream os;
      vip::write_spectrum_csv(os, diff);
      emit(out_path, os.str());
      return 0;
    }
    if (c_lim->parsed()) {
      const auto on = vip::read_spectrum_csv(on_path);
      const auto off = vip::read_spectrum_csv(off_path);
      const auto roi_on = vip::roi_counts(on, cfg.roi);
      const auto roi_off = vip::roi_counts(off, cfg.roi);
      vip::RoiCounts counts;
      counts.n_on = roi_on.counts;
      counts.n_off = roi_off.counts;
      counts.scale = on.live_time_s / off.live_time_s;
      counts.cl = cfg.cl;
      const auto limit = vip::compute_limit(counts, cfg.rs);
      if (c_lim->count("--coverage-toys") > 0 && toys > 0) {
        const auto cov = vip::coverage_check(counts.scale * counts.n_off, toys, cfg.cl, cov_seed);
        vip::atomic_write_text(out_path, vip::limit_to_json(limit, &cov).dump(2) + "\n");
      } else {
        vip::atomic_write_text(out_path, vip::limit_to_json(limit).dump(2) + "\n");
      }
      std::cout << "delta_nx_upper=" << limit.delta_nx_upper
                << " beta2_over_2_upper=" << limit.beta2_over_2_upper << '\n';
      return 0;
    }
    if (c_cov->parsed()) {
      const auto cov = vip::coverage_check(background, toys, cfg.cl, cov_seed);
      nlohmann::ordered_json j;
      j["background"] = cov.background;
      j["n_toys"] = cov.n_toys;
      j["cl"] = cov.cl;
      j["coverage"] = cov.coverage;
      j["coverage_unclamped"] = cov.coverage_unclamped;
      j["binomial_err"] = cov.binomial_err;
      j["median_limit"] = cov.median_limit;
      j["q005_limit"] = cov.q005_limit;
      j["q995_limit"] = cov.q995_limit;
      emit(out_path, j.dump(2) + "\n");
      return 0;
    }
    if (c_run->parsed()) {
      const auto manifest = vip::run_experiment(cfg, out_path);
      std::cout << "limit.beta2_over_2_upper="
                << manifest["limit"]["beta2_over_2_upper"].get<double>() << '\n';
      return 0;
    }
  } catch (const vip::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const vip::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind == "non_convergence" ? 4 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 2;  // no subcommand dispatched
}
