#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tvio/eval.hpp"
#include "tvio/kitti_io.hpp"
#include "tvio/sim.hpp"
#include "tvio/vio.hpp"

// Subcommand implementations behind the command-line tool. Each cmd_*
// returns a process exit code and reports problems on the given stream, so
// the argv shell stays a thin dispatch layer.
namespace tvio::cli {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;      // bad input path or config
constexpr int kExitNumerical = 3;  // filter diverged
constexpr int kExitPartialMc = 4;  // more than 20 percent of runs failed

// One JSON file configures everything: scenario synthesis, the filter, and
// the evaluation/Monte Carlo protocol. Omitted keys keep these defaults.
struct AppConfig {
  sim::ScenarioConfig scenario;
  vio::VioConfig vio;
  bool vio_noise_explicit = false;  // config supplied its own filter noise
  double vio_sigma_px = 0.0;        // 0 = derive from the input bundle
  double process_noise_floor = 1e-12;
  double segment_length_m = 100.0;
  int runs = 10;
  int max_workers = 4;
};

inline AppConfig default_config() {
  AppConfig a;
  a.scenario.sigma_px = 1.0;
  a.scenario.imu_noise.sigma_na = 0.25;
  a.scenario.imu_noise.sigma_ng = 0.26 * M_PI / 180.0;
  a.scenario.imu_noise.sigma_ba_walk = 0.001;
  a.scenario.imu_noise.sigma_bg_walk = 0.0001;
  a.vio.imu_noise = a.scenario.imu_noise;
  return a;
}

namespace detail {

inline void expect_keys(const nlohmann::json& j,
                        const std::set<std::string>& allowed,
                        const std::string& where) {
  if (!j.is_object()) {
    throw ParseError("config: " + where + " must be an object");
  }
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw ParseError("config: unknown key '" + item.key() + "' in " + where);
    }
  }
}

template <class T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

// Gyro densities are written in deg/s, the unit used for spec sheets.
inline imu::ImuNoiseSpec parse_noise(const nlohmann::json& j,
                                     imu::ImuNoiseSpec base,
                                     const std::string& where) {
  expect_keys(j, {"sigma_na", "sigma_ng_deg_per_s", "sigma_ba_walk",
                  "sigma_bg_walk"},
              where);
  maybe(j, "sigma_na", base.sigma_na);
  if (j.contains("sigma_ng_deg_per_s")) {
    double deg = 0.0;
    j.at("sigma_ng_deg_per_s").get_to(deg);
    base.sigma_ng = deg * M_PI / 180.0;
  }
  maybe(j, "sigma_ba_walk", base.sigma_ba_walk);
  maybe(j, "sigma_bg_walk", base.sigma_bg_walk);
  return base;
}

}  // namespace detail

inline AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("missing config: " + path.string());
  AppConfig a = default_config();
  try {
    const auto j =
        nlohmann::json::parse(is, nullptr, true, /*ignore_comments=*/true);
    detail::expect_keys(j, {"scenario", "vio", "eval", "mc"}, "the root");
    if (j.contains("scenario")) {
      const auto& s = j.at("scenario");
      detail::expect_keys(s,
                          {"trajectory", "duration_s", "speed_mps",
                           "camera_rate_hz", "imu_rate_hz", "sigma_px", "seed",
                           "corridor", "imu_noise"},
                          "scenario");
      if (s.contains("trajectory")) {
        a.scenario.trajectory =
            sim::trajectory_kind_from_string(s.at("trajectory").get<std::string>());
      }
      detail::maybe(s, "duration_s", a.scenario.duration_s);
      detail::maybe(s, "speed_mps", a.scenario.speed_mps);
      detail::maybe(s, "camera_rate_hz", a.scenario.camera_rate_hz);
      detail::maybe(s, "imu_rate_hz", a.scenario.imu_rate_hz);
      detail::maybe(s, "sigma_px", a.scenario.sigma_px);
      detail::maybe(s, "seed", a.scenario.seed);
      if (s.contains("corridor")) {
        const auto& c = s.at("corridor");
        detail::expect_keys(c,
                            {"width_m", "feature_density_per_m", "depth_min_m",
                             "depth_max_m", "distant_fraction"},
                            "scenario.corridor");
        detail::maybe(c, "width_m", a.scenario.corridor.width_m);
        detail::maybe(c, "feature_density_per_m",
                      a.scenario.corridor.feature_density_per_m);
        detail::maybe(c, "depth_min_m", a.scenario.corridor.depth_min_m);
        detail::maybe(c, "depth_max_m", a.scenario.corridor.depth_max_m);
        detail::maybe(c, "distant_fraction",
                      a.scenario.corridor.distant_fraction);
      }
      if (s.contains("imu_noise")) {
        a.scenario.imu_noise = detail::parse_noise(
            s.at("imu_noise"), a.scenario.imu_noise, "scenario.imu_noise");
      }
    }
    if (j.contains("vio")) {
      const auto& v = j.at("vio");
      detail::expect_keys(
          v, {"mode", "sigma_px", "ransac_threshold_px", "ransac_iterations",
              "ransac_min_inlier_ratio", "max_features", "bucket_cols",
              "bucket_rows", "confidence_floor", "confidence_cap",
              "p0_position", "p0_velocity", "p0_orientation", "p0_accel_bias",
              "p0_gyro_bias", "p0_old_pose", "process_noise_floor",
              "imu_noise"},
          "vio");
      if (v.contains("mode")) {
        a.vio.mode =
            vio::confidence_mode_from_string(v.at("mode").get<std::string>());
      }
      detail::maybe(v, "sigma_px", a.vio_sigma_px);
      detail::maybe(v, "ransac_threshold_px", a.vio.ransac_threshold_px);
      detail::maybe(v, "ransac_iterations", a.vio.ransac_iterations);
      detail::maybe(v, "ransac_min_inlier_ratio", a.vio.ransac_min_inlier_ratio);
      detail::maybe(v, "max_features", a.vio.max_features);
      detail::maybe(v, "bucket_cols", a.vio.bucket_cols);
      detail::maybe(v, "bucket_rows", a.vio.bucket_rows);
      detail::maybe(v, "confidence_floor", a.vio.confidence_floor);
      detail::maybe(v, "confidence_cap", a.vio.confidence_cap);
      detail::maybe(v, "p0_position", a.vio.p0_position);
      detail::maybe(v, "p0_velocity", a.vio.p0_velocity);
      detail::maybe(v, "p0_orientation", a.vio.p0_orientation);
      detail::maybe(v, "p0_accel_bias", a.vio.p0_accel_bias);
      detail::maybe(v, "p0_gyro_bias", a.vio.p0_gyro_bias);
      detail::maybe(v, "p0_old_pose", a.vio.p0_old_pose);
      detail::maybe(v, "process_noise_floor", a.process_noise_floor);
      if (v.contains("imu_noise")) {
        a.vio.imu_noise = detail::parse_noise(v.at("imu_noise"),
                                              a.vio.imu_noise, "vio.imu_noise");
        a.vio_noise_explicit = true;
      }
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      detail::expect_keys(e, {"segment_length_m"}, "eval");
      detail::maybe(e, "segment_length_m", a.segment_length_m);
    }
    if (j.contains("mc")) {
      const auto& m = j.at("mc");
      detail::expect_keys(m, {"runs", "max_workers"}, "mc");
      detail::maybe(m, "runs", a.runs);
      detail::maybe(m, "max_workers", a.max_workers);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  a.scenario.validate();
  if (!(a.segment_length_m > 0.0)) {
    throw ParseError("config: eval.segment_length_m must be > 0");
  }
  if (a.runs <= 0 || a.max_workers <= 0) {
    throw ParseError("config: mc.runs and mc.max_workers must be > 0");
  }
  return a;
}

// Input-derived base (camera model, mount, gravity, frame rate) overlaid
// with the config's filter tuning.
inline vio::VioConfig tuned_config(const AppConfig& app, vio::VioConfig base) {
  base.mode = app.vio.mode;
  base.ransac_threshold_px = app.vio.ransac_threshold_px;
  base.ransac_iterations = app.vio.ransac_iterations;
  base.ransac_min_inlier_ratio = app.vio.ransac_min_inlier_ratio;
  base.max_features = app.vio.max_features;
  base.bucket_cols = app.vio.bucket_cols;
  base.bucket_rows = app.vio.bucket_rows;
  base.confidence_floor = app.vio.confidence_floor;
  base.confidence_cap = app.vio.confidence_cap;
  base.p0_position = app.vio.p0_position;
  base.p0_velocity = app.vio.p0_velocity;
  base.p0_orientation = app.vio.p0_orientation;
  base.p0_accel_bias = app.vio.p0_accel_bias;
  base.p0_gyro_bias = app.vio.p0_gyro_bias;
  base.p0_old_pose = app.vio.p0_old_pose;
  if (app.vio_noise_explicit) base.imu_noise = app.vio.imu_noise;
  if (app.vio_sigma_px > 0.0) base.sigma_px = app.vio_sigma_px;
  base.process_noise = vio::default_process_noise(
      base.imu_noise, base.nominal_frame_dt, app.process_noise_floor);
  base.validate();
  return base;
}

struct RunManifest {
  std::filesystem::path input;   // scenario bundle dir or KITTI sequence dir
  std::filesystem::path config;  // empty = built-in defaults
  std::filesystem::path out;
  std::uint64_t seed = 1;
  std::string mode;  // empty = config value

  void validate() const {
    if (!std::filesystem::is_directory(input)) {
      throw InvalidInput("input directory does not exist: " + input.string());
    }
    if (!config.empty() && !std::filesystem::exists(config)) {
      throw InvalidInput("config does not exist: " + config.string());
    }
    if (out.empty()) throw InvalidInput("output directory required");
  }
};

enum class InputKind { scenario, kitti };

inline InputKind detect_input(const std::filesystem::path& input) {
  if (std::filesystem::exists(input / "meta.json")) return InputKind::scenario;
  if (std::filesystem::is_directory(input / "oxts")) return InputKind::kitti;
  throw InvalidInput("unrecognized input directory (expected meta.json or oxts/): " +
                     input.string());
}

namespace detail {

inline int fail(std::ostream& err, int code, const std::string& msg) {
  err << "error: " << msg << '\n';
  return code;
}

struct PipelineRun {
  eval::TrajectoryEstimate est;
  std::vector<geo::WorldFromImu> gt;
  std::vector<double> tau;
  std::vector<double> mean_confidence;
  std::vector<int> inliers;
  std::vector<int> features_in;
  int ransac_fallbacks = 0;
};

inline PipelineRun drive_pipeline(
    const vio::VioConfig& cfg, const geo::WorldFromImu& pose0,
    const Vec3& vel0, const std::vector<double>& timestamps,
    const std::vector<std::vector<vio::TrackObservation>>& tracks,
    const std::function<std::vector<imu::ImuSample>(int)>& window_for,
    std::uint64_t seed) {
  vio::VioPipeline pipe(cfg, pose0, vel0, seed);
  PipelineRun out;
  for (std::size_t k = 0; k < timestamps.size(); ++k) {
    vio::FrameResult r;
    try {
      r = pipe.process_frame(timestamps[k], tracks[k],
                             k == 0 ? std::vector<imu::ImuSample>{}
                                    : window_for(static_cast<int>(k)));
    } catch (const NumericalFailure& e) {
      throw NumericalFailure("frame " + std::to_string(k) + ": " + e.what());
    }
    out.est.timestamps.push_back(r.timestamp);
    out.est.poses.push_back(r.pose);
    out.tau.push_back(r.diag.tau);
    out.mean_confidence.push_back(r.diag.mean_confidence);
    out.inliers.push_back(r.diag.inliers);
    out.features_in.push_back(r.diag.features_in);
    out.ransac_fallbacks += r.diag.ransac_fallback ? 1 : 0;
  }
  return out;
}

inline vio::VioConfig kitti_base_config(const kitti::SequenceData& seq,
                                        const AppConfig& app) {
  vio::VioConfig c;
  c.intrinsics = seq.calib.K;
  c.imu_from_camera = seq.calib.imu_from_camera;
  c.gravity = seq.gravity;
  c.imu_noise = app.vio.imu_noise;
  const std::size_t n = seq.timestamps.size();
  c.nominal_frame_dt =
      n > 1 ? (seq.timestamps.back() - seq.timestamps.front()) /
                  static_cast<double>(n - 1)
            : 0.1;
  return c;
}

// OXTS arrives at camera rate: window k holds the samples in (t_{k-1}, t_k].
inline std::vector<std::vector<imu::ImuSample>> kitti_windows(
    const kitti::SequenceData& seq) {
  std::vector<std::vector<imu::ImuSample>> w(seq.timestamps.size());
  std::size_t i = 0;
  for (std::size_t k = 1; k < seq.timestamps.size(); ++k) {
    while (i < seq.imu.size() &&
           seq.imu[i].timestamp <= seq.timestamps[k - 1]) {
      ++i;
    }
    while (i < seq.imu.size() && seq.imu[i].timestamp <= seq.timestamps[k]) {
      w[k].push_back(seq.imu[i]);
      ++i;
    }
  }
  return w;
}

inline void write_run_outputs(const std::filesystem::path& out,
                              const PipelineRun& run, const AppConfig& app,
                              std::uint64_t seed,
                              const std::string& input_kind) {
  std::filesystem::create_directories(out);
  eval::write_trajectory_csv(out / "trajectory.csv", run.est);
  nlohmann::json d;
  d["mode"] = vio::to_string(app.vio.mode);
  d["seed"] = seed;
  d["frames"] = run.est.poses.size();
  d["input_kind"] = input_kind;
  d["tau"] = run.tau;
  d["mean_confidence"] = run.mean_confidence;
  d["inliers"] = run.inliers;
  d["features_in"] = run.features_in;
  d["ransac_fallbacks"] = run.ransac_fallbacks;
  std::ofstream os(out / "diagnostics.json");
  os << d.dump(2) << '\n';
  eval::write_plot_data(out / "plot_data", run.est, run.gt, run.tau,
                        run.mean_confidence);
}

inline nlohmann::json mc_json(const eval::MonteCarloResult& r) {
  nlohmann::json j;
  j["n_ok"] = r.aggregate.n_ok;
  j["n_failed"] = r.aggregate.n_failed;
  j["too_many_failures"] = r.too_many_failures;
  j["mean_rotation_e2_deg_per_m"] = r.aggregate.mean_rotation;
  j["median_rotation_e2_deg_per_m"] = r.aggregate.median_rotation;
  j["std_rotation_e2_deg_per_m"] = r.aggregate.std_rotation;
  j["mean_translation_percent"] = r.aggregate.mean_translation;
  j["median_translation_percent"] = r.aggregate.median_translation;
  j["std_translation_percent"] = r.aggregate.std_translation;
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs) {
    nlohmann::json row;
    row["seed"] = run.seed;
    row["ok"] = run.ok;
    if (run.ok) {
      row["rotation_e2_deg_per_m"] = run.rotation_e2_deg_per_m;
      row["translation_percent"] = run.translation_percent;
    } else {
      row["error"] = run.error;
    }
    runs.push_back(std::move(row));
  }
  j["runs"] = std::move(runs);
  return j;
}

inline nlohmann::json paired_json(const eval::PairedSummary& s) {
  return {{"pairs", s.n},
          {"improved", s.improved},
          {"median_baseline_translation", s.median_baseline_translation},
          {"median_mode_translation", s.median_mode_translation},
          {"median_baseline_rotation", s.median_baseline_rotation},
          {"median_mode_rotation", s.median_mode_rotation},
          {"rotation_relative_gap", s.rotation_relative_gap}};
}

}  // namespace detail

inline int cmd_simulate(const std::filesystem::path& config_path,
                        const std::filesystem::path& out_dir,
                        std::optional<std::uint64_t> seed,
                        std::ostream& err = std::cerr) {
  try {
    AppConfig app =
        config_path.empty() ? default_config() : load_config(config_path);
    if (seed) app.scenario.seed = *seed;
    const auto bundle = sim::generate_scenario(app.scenario);
    std::filesystem::create_directories(out_dir);
    sim::write_bundle(out_dir, bundle);
    return kExitOk;
  } catch (const std::exception& e) {
    return detail::fail(err, kExitInput, e.what());
  }
}

inline int cmd_run(const RunManifest& m, std::ostream& err = std::cerr) {
  try {
    m.validate();
    AppConfig app = m.config.empty() ? default_config() : load_config(m.config);
    if (!m.mode.empty()) {
      app.vio.mode = vio::confidence_mode_from_string(m.mode);
    }
    const InputKind kind = detect_input(m.input);
    detail::PipelineRun run;
    if (kind == InputKind::scenario) {
      const auto b = sim::read_bundle(m.input);
      const auto cfg = tuned_config(app, sim::vio_config_for(b));
      run = detail::drive_pipeline(
          cfg, b.truth.poses[0], b.truth.velocities[0], b.truth.timestamps,
          b.tracks, [&b](int k) { return sim::imu_window(b, k); }, m.seed);
      run.gt = b.truth.poses;
    } else {
      const auto seq = kitti::load_sequence(m.input);
      const auto tracks_path = m.input / "tracks.csv";
      if (!std::filesystem::exists(tracks_path)) {
        throw InvalidInput("missing tracks file: " + tracks_path.string());
      }
      const auto tracks = kitti::per_frame_observations(
          kitti::load_tracks(tracks_path),
          static_cast<int>(seq.timestamps.size()));
      const auto cfg = tuned_config(app, detail::kitti_base_config(seq, app));
      const auto windows = detail::kitti_windows(seq);
      run = detail::drive_pipeline(
          cfg, seq.ground_truth[0], seq.velocities[0], seq.timestamps, tracks,
          [&windows](int k) { return windows[static_cast<std::size_t>(k)]; },
          m.seed);
      run.gt = seq.ground_truth;
    }
    detail::write_run_outputs(
        m.out, run, app, m.seed,
        kind == InputKind::scenario ? "scenario" : "kitti");
    return kExitOk;
  } catch (const NumericalFailure& e) {
    return detail::fail(err, kExitNumerical,
                        std::string("numerical failure at ") + e.what());
  } catch (const std::exception& e) {
    return detail::fail(err, kExitInput, e.what());
  }
}

inline int cmd_eval(const RunManifest& m, double segment_length_m = 0.0,
                    std::ostream& err = std::cerr) {
  try {
    m.validate();
    const AppConfig app =
        m.config.empty() ? default_config() : load_config(m.config);
    const double seg =
        segment_length_m > 0.0 ? segment_length_m : app.segment_length_m;
    const auto est = eval::read_trajectory_csv(m.out / "trajectory.csv");
    std::vector<geo::WorldFromImu> gt;
    if (detect_input(m.input) == InputKind::scenario) {
      gt = sim::read_bundle(m.input).truth.poses;
    } else {
      gt = kitti::load_sequence(m.input).ground_truth;
    }
    const auto res = eval::kitti_errors(est, gt, seg);
    std::ofstream os(m.out / "errors.json");
    os << eval::errors_json(res).dump(2) << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    return detail::fail(err, kExitInput, e.what());
  }
}

inline int cmd_stats(const std::filesystem::path& input,
                     const std::filesystem::path& out,
                     std::ostream& err = std::cerr) {
  try {
    const auto b = sim::read_bundle(input);
    const auto samples = sim::bundle_angle_depth_samples(b);
    const auto stats = conf::street_statistics(samples);
    std::filesystem::create_directories(out);
    {
      std::ofstream os(out / "street_stats.csv");
      conf::write_street_stats_csv(os, stats);
    }
    nlohmann::json j;
    j["samples"] = stats.total;
    j["angle_bins"] = stats.angle_bins;
    j["depth_bins"] = stats.depth_bins;
    j["has_correlation"] = stats.has_correlation;
    j["spearman"] = stats.spearman;
    std::ofstream os(out / "stats.json");
    os << j.dump(2) << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    return detail::fail(err, kExitInput, e.what());
  }
}

// Paired sweep over shared seeds: the baseline (identity measurement
// weights) against both confidence modes on freshly synthesized scenarios.
inline int cmd_mc(const std::filesystem::path& config_path,
                  const std::filesystem::path& out_dir, int runs_override = 0,
                  std::uint64_t base_seed = 1, double segment_length_m = 0.0,
                  std::ostream& err = std::cerr) {
  try {
    const AppConfig app =
        config_path.empty() ? default_config() : load_config(config_path);
    const int runs = runs_override > 0 ? runs_override : app.runs;
    const double seg =
        segment_length_m > 0.0 ? segment_length_m : app.segment_length_m;
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < runs; ++i) {
      seeds.push_back(base_seed + static_cast<std::uint64_t>(i));
    }

    const auto sweep = [&app, seg, &seeds](vio::ConfidenceMode mode) {
      return eval::monte_carlo(
          [&app, seg, mode](std::uint64_t s) {
            sim::ScenarioConfig sc = app.scenario;
            sc.seed = s;
            const auto b = sim::generate_scenario(sc);
            auto cfg = tuned_config(app, sim::vio_config_for(b));
            cfg.mode = mode;
            const auto run = detail::drive_pipeline(
                cfg, b.truth.poses[0], b.truth.velocities[0],
                b.truth.timestamps, b.tracks,
                [&b](int k) { return sim::imu_window(b, k); }, s);
            const auto e = eval::kitti_errors(run.est, b.truth.poses, seg);
            if (e.segments.empty()) throw InvalidInput(e.diagnostic);
            return std::make_pair(e.rotation_e2_deg_per_m,
                                  e.translation_percent);
          },
          seeds, app.max_workers);
    };
    const auto baseline = sweep(vio::ConfidenceMode::off);
    const auto literal = sweep(vio::ConfidenceMode::literal);
    const auto inverted = sweep(vio::ConfidenceMode::inverted);

    std::filesystem::create_directories(out_dir);
    nlohmann::json j;
    j["runs"] = runs;
    j["segment_length_m"] = seg;
    j["seeds"] = seeds;
    j["baseline"] = detail::mc_json(baseline);
    j["literal"] = detail::mc_json(literal);
    j["inverted"] = detail::mc_json(inverted);
    j["paired"]["literal_vs_baseline"] =
        detail::paired_json(eval::paired_summary(baseline, literal));
    j["paired"]["inverted_vs_baseline"] =
        detail::paired_json(eval::paired_summary(baseline, inverted));
    {
      std::ofstream os(out_dir / "mc.json");
      os << j.dump(2) << '\n';
    }
    {
      std::ofstream os(out_dir / "mc_table.csv");
      os << "seed,baseline_rot,baseline_trans,literal_rot,literal_trans,"
            "inverted_rot,inverted_trans\n";
      for (std::size_t i = 0; i < seeds.size(); ++i) {
        os << seeds[i];
        for (const auto* sweep_res : {&baseline, &literal, &inverted}) {
          const auto& r = sweep_res->runs[i];
          if (r.ok) {
            os << ',' << sim::detail::format_double(r.rotation_e2_deg_per_m)
               << ',' << sim::detail::format_double(r.translation_percent);
          } else {
            os << ",,";
          }
        }
        os << '\n';
      }
    }
    const bool partial = baseline.too_many_failures ||
                         literal.too_many_failures ||
                         inverted.too_many_failures;
    if (partial) {
      err << "error: more than 20 percent of Monte Carlo runs failed\n";
    }
    return partial ? kExitPartialMc : kExitOk;
  } catch (const std::exception& e) {
    return detail::fail(err, kExitInput, e.what());
  }
}

}  // namespace tvio::cli
