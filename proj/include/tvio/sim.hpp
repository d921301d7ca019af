#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tvio/confidence.hpp"
#include "tvio/imu.hpp"
#include "tvio/vio.hpp"

// Synthetic street-scene generator: closed-form planar trajectories, a
// corridor feature layout with a configurable share of distant on-axis
// points, pixel-track synthesis with frustum-based track breaking, IMU
// synthesis, and a four-file scenario bundle on disk.
//
// IMU convention: samples are stamped at the midpoints of equal sub-slices
// of each inter-frame interval, matching how the filter transition treats a
// window (each sample stands for the midpoint value of its slice).
namespace tvio::sim {

constexpr double kRigHeight = 1.6;  // IMU origin above ground, m
constexpr double kMinDepth = 1.0;   // near plane for visibility, m

inline geo::CameraIntrinsics default_intrinsics() {
  return geo::CameraIntrinsics(721.5, 721.5, 609.6, 172.9);
}

constexpr double kImageWidth = 1242.0;
constexpr double kImageHeight = 375.0;

// Body frame: x forward, y left, z up. Camera: z optical, x right, y down,
// mounted ahead of and slightly above the IMU.
inline geo::ImuFromCamera default_camera_mount() {
  Mat3 R;
  R << 0, 0, 1,  //
      -1, 0, 0,  //
      0, -1, 0;
  return geo::ImuFromCamera{geo::dcm_to_quat(R), Vec3(1.0, 0.0, 0.2)};
}

enum class TrajectoryKind { straight, s_curve, turn, circuit };

inline std::string to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::straight:
      return "straight";
    case TrajectoryKind::s_curve:
      return "s_curve";
    case TrajectoryKind::turn:
      return "turn";
    case TrajectoryKind::circuit:
      return "circuit";
  }
  throw InvalidInput("to_string: unknown trajectory kind");
}

inline TrajectoryKind trajectory_kind_from_string(const std::string& s) {
  if (s == "straight") return TrajectoryKind::straight;
  if (s == "s_curve") return TrajectoryKind::s_curve;
  if (s == "turn") return TrajectoryKind::turn;
  if (s == "circuit") return TrajectoryKind::circuit;
  throw ParseError("unknown trajectory kind: " + s);
}

struct TrajectorySample {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Vec3 acceleration = Vec3::Zero();
  Quat attitude = Quat::Identity();  // world-from-body, yaw only
  Vec3 body_rate = Vec3::Zero();
};

// Constant-speed planar paths with closed-form kinematics; heading follows
// the tangent, so no numerical differentiation is ever needed.
//   straight: along +x.
//   s_curve:  sinusoidal lateral offset, one period over the run.
//   turn:     straight third, 90 degree left arc third, straight third.
//   circuit:  one full circle closing on the start.
inline TrajectorySample sample_trajectory(TrajectoryKind kind, double speed,
                                          double duration, double t) {
  if (!(speed > 0.0) || !(duration > 0.0)) {
    throw InvalidInput("sample_trajectory: speed and duration must be > 0");
  }
  if (t < -1e-9 || t > duration + 1e-9) {
    throw InvalidInput("sample_trajectory: t outside [0, duration]");
  }
  t = std::clamp(t, 0.0, duration);

  double x = 0.0, y = 0.0, vx = 0.0, vy = 0.0, ax = 0.0, ay = 0.0;
  double yaw = 0.0, yaw_rate = 0.0;
  switch (kind) {
    case TrajectoryKind::straight: {
      x = speed * t;
      vx = speed;
      break;
    }
    case TrajectoryKind::s_curve: {
      // Lateral amplitude capped so the heading swing stays ~0.2 rad.
      const double w = 2.0 * M_PI / duration;
      const double A = 0.2 * speed / w;
      x = speed * t;
      y = A * std::sin(w * t);
      vx = speed;
      vy = A * w * std::cos(w * t);
      ay = -A * w * w * std::sin(w * t);
      const double v2 = vx * vx + vy * vy;
      yaw = std::atan2(vy, vx);
      yaw_rate = (vx * ay - vy * ax) / v2;
      break;
    }
    case TrajectoryKind::turn: {
      const double t1 = duration / 3.0;
      const double rate = (M_PI / 2.0) / t1;  // 90 degrees over one third
      const double radius = speed / rate;
      if (t < t1) {
        x = speed * t;
        vx = speed;
      } else if (t < 2.0 * t1) {
        const double th = rate * (t - t1);
        const double cx = speed * t1;  // arc center (cx, radius)
        x = cx + radius * std::sin(th);
        y = radius * (1.0 - std::cos(th));
        vx = speed * std::cos(th);
        vy = speed * std::sin(th);
        ax = -speed * rate * std::sin(th);
        ay = speed * rate * std::cos(th);
        yaw = th;
        yaw_rate = rate;
      } else {
        x = speed * t1 + radius;
        y = radius + speed * (t - 2.0 * t1);
        vy = speed;
        yaw = M_PI / 2.0;
      }
      break;
    }
    case TrajectoryKind::circuit: {
      const double radius = speed * duration / (2.0 * M_PI);
      const double th = speed * t / radius;
      x = radius * std::sin(th);
      y = radius * (1.0 - std::cos(th));
      vx = speed * std::cos(th);
      vy = speed * std::sin(th);
      ax = -(speed * speed / radius) * std::sin(th);
      ay = (speed * speed / radius) * std::cos(th);
      yaw = th;
      yaw_rate = speed / radius;
      break;
    }
  }

  TrajectorySample s;
  s.position = Vec3(x, y, kRigHeight);
  s.velocity = Vec3(vx, vy, 0.0);
  s.acceleration = Vec3(ax, ay, 0.0);
  s.attitude = Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ()));
  s.body_rate = Vec3(0.0, 0.0, yaw_rate);
  return s;
}

struct CorridorSpec {
  double width_m = 12.0;                // wall to wall
  double feature_density_per_m = 2.0;   // stations per metre, each wall
  double depth_min_m = 20.0;            // distant feature depth range ahead
  double depth_max_m = 120.0;
  double distant_fraction = 0.3;        // share of the catalog that is
                                        // distant and on-axis
};

struct ScenarioConfig {
  TrajectoryKind trajectory = TrajectoryKind::straight;
  double duration_s = 30.0;
  double speed_mps = 10.0;
  CorridorSpec corridor;
  double camera_rate_hz = 10.0;
  double imu_rate_hz = 100.0;
  double sigma_px = 0.0;  // i.i.d. pixel noise on emitted tracks
  imu::ImuNoiseSpec imu_noise;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(duration_s > 0.0)) throw InvalidInput("ScenarioConfig: duration must be > 0");
    if (!(speed_mps > 0.0)) throw InvalidInput("ScenarioConfig: speed must be > 0");
    if (!(camera_rate_hz > 0.0) || !(imu_rate_hz > 0.0)) {
      throw InvalidInput("ScenarioConfig: rates must be > 0");
    }
    if (imu_rate_hz < camera_rate_hz) {
      throw InvalidInput("ScenarioConfig: IMU rate must be >= camera rate");
    }
    const double ratio = imu_rate_hz / camera_rate_hz;
    if (std::abs(ratio - std::round(ratio)) > 1e-9) {
      throw InvalidInput("ScenarioConfig: IMU rate must be an integer multiple of the camera rate");
    }
    if (!(corridor.width_m > 0.0)) throw InvalidInput("ScenarioConfig: corridor width must be > 0");
    if (!(corridor.feature_density_per_m > 0.0)) {
      throw InvalidInput("ScenarioConfig: feature density must be > 0");
    }
    if (!(corridor.depth_min_m > 0.0) || corridor.depth_max_m < corridor.depth_min_m) {
      throw InvalidInput("ScenarioConfig: depth range must satisfy 0 < min <= max");
    }
    if (corridor.distant_fraction < 0.0 || corridor.distant_fraction >= 1.0) {
      throw InvalidInput("ScenarioConfig: distant fraction must be in [0, 1)");
    }
    if (sigma_px < 0.0) throw InvalidInput("ScenarioConfig: pixel noise must be >= 0");
    imu_noise.validate();
  }
};

struct ScenePoint {
  Vec3 position = Vec3::Zero();
  bool distant = false;
};

struct GroundTruth {
  std::vector<double> timestamps;  // one per camera frame
  std::vector<geo::WorldFromImu> poses;
  std::vector<Vec3> velocities;  // world frame, IMU point
  std::vector<ScenePoint> features;
};

struct ScenarioBundle {
  ScenarioConfig config;
  geo::CameraIntrinsics intrinsics = default_intrinsics();
  double image_width = kImageWidth;
  double image_height = kImageHeight;
  geo::ImuFromCamera camera_mount = default_camera_mount();
  Vec3 gravity = imu::standard_gravity();
  GroundTruth truth;
  std::vector<imu::ImuSample> imu;
  std::vector<std::vector<vio::TrackObservation>> tracks;  // per frame, id-sorted
  std::map<std::int64_t, int> track_feature;  // track id -> feature index
};

namespace detail {

// Distinct engines per concern so, e.g., feature density does not reshuffle
// the IMU noise stream.
inline std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t tag) {
  return std::mt19937_64(seed ^ tag);
}

inline std::vector<ScenePoint> make_scene(const ScenarioConfig& cfg,
                                          std::mt19937_64& rng) {
  const double L = cfg.speed_mps * cfg.duration_s;
  const double spacing = 1.0 / cfg.corridor.feature_density_per_m;
  const int n_stations = static_cast<int>(std::floor(L / spacing));
  std::vector<ScenePoint> pts;
  std::uniform_real_distribution<double> jitter(-0.4 * spacing, 0.4 * spacing);
  std::uniform_real_distribution<double> wall_z(0.3, 4.5);
  for (int i = 0; i < n_stations; ++i) {
    const double s = (i + 0.5) * spacing;
    const TrajectorySample base = sample_trajectory(
        cfg.trajectory, cfg.speed_mps, cfg.duration_s, s / cfg.speed_mps);
    for (double side : {+1.0, -1.0}) {
      const double jx = jitter(rng);
      const double z = wall_z(rng);
      Vec3 p = base.position +
               base.attitude * Vec3(jx, side * cfg.corridor.width_m / 2.0, 0.0);
      p.z() = z;
      pts.push_back({p, false});
    }
  }

  // Distant on-axis points sit near the path axis far ahead of an anchor
  // station, at roughly camera height, so they project into the middle of
  // the image while the rig approaches them.
  const double f = cfg.corridor.distant_fraction;
  const auto n_near = static_cast<double>(pts.size());
  const auto n_distant =
      static_cast<int>(std::llround(f / (1.0 - f) * n_near));
  std::uniform_real_distribution<double> anchor(0.0, L);
  std::uniform_real_distribution<double> depth(cfg.corridor.depth_min_m,
                                               cfg.corridor.depth_max_m);
  std::uniform_real_distribution<double> lateral(-1.5, 1.5);
  std::uniform_real_distribution<double> axis_z(1.0, 2.4);
  for (int i = 0; i < n_distant; ++i) {
    const double s = anchor(rng);
    const double d = depth(rng);
    const double yo = lateral(rng);
    const double z = axis_z(rng);
    const TrajectorySample base = sample_trajectory(
        cfg.trajectory, cfg.speed_mps, cfg.duration_s, s / cfg.speed_mps);
    Vec3 p = base.position + base.attitude * Vec3(d, yo, 0.0);
    p.z() = z;
    pts.push_back({p, true});
  }
  return pts;
}

}  // namespace detail

inline ScenarioBundle generate_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  ScenarioBundle b;
  b.config = cfg;

  const int n_frames =
      static_cast<int>(std::llround(cfg.duration_s * cfg.camera_rate_hz)) + 1;
  b.truth.timestamps.resize(n_frames);
  b.truth.poses.resize(n_frames);
  b.truth.velocities.resize(n_frames);
  for (int k = 0; k < n_frames; ++k) {
    const double t = k / cfg.camera_rate_hz;
    const TrajectorySample s =
        sample_trajectory(cfg.trajectory, cfg.speed_mps, cfg.duration_s, t);
    b.truth.timestamps[k] = t;
    b.truth.poses[k] = geo::WorldFromImu{s.attitude, s.position};
    b.truth.velocities[k] = s.velocity;
  }

  std::mt19937_64 placement_rng =
      detail::seeded(cfg.seed, 0x9E3779B97F4A7C15ULL);
  b.truth.features = detail::make_scene(cfg, placement_rng);

  // Tracks: a feature keeps its id while continuously visible and gets a
  // fresh id when it re-enters the frustum.
  std::mt19937_64 pixel_rng = detail::seeded(cfg.seed, 0xC2B2AE3D27D4EB4FULL);
  std::normal_distribution<double> unit(0.0, 1.0);
  b.tracks.assign(n_frames, {});
  std::vector<std::int64_t> active(b.truth.features.size(), -1);
  std::int64_t next_id = 0;
  for (int k = 0; k < n_frames; ++k) {
    const geo::WorldFromCamera cam = b.truth.poses[k] * b.camera_mount;
    const geo::Projection P = geo::build_projection(cam, b.intrinsics);
    auto& rows = b.tracks[k];
    for (std::size_t j = 0; j < b.truth.features.size(); ++j) {
      bool visible = true;
      geo::PixelProjection pr{};
      try {
        pr = geo::project_point(P, b.truth.features[j].position);
      } catch (const DegenerateGeometry&) {
        visible = false;
      }
      if (visible) {
        visible = pr.depth >= kMinDepth && pr.pixel.x() >= 0.0 &&
                  pr.pixel.x() < b.image_width && pr.pixel.y() >= 0.0 &&
                  pr.pixel.y() < b.image_height;
      }
      if (!visible) {
        active[j] = -1;
        continue;
      }
      if (active[j] < 0) {
        active[j] = next_id++;
        b.track_feature[active[j]] = static_cast<int>(j);
      }
      // Fixed draw order (u then v) even at zero noise keeps streams stable.
      const double nu = unit(pixel_rng);
      const double nv = unit(pixel_rng);
      const Vec2 px = pr.pixel + cfg.sigma_px * Vec2(nu, nv);
      rows.push_back({active[j], px});
    }
    if (rows.empty()) {
      throw InvalidInput("generate_scenario: frame " + std::to_string(k) +
                         " has no visible features");
    }
    std::sort(rows.begin(), rows.end(),
              [](const vio::TrackObservation& a, const vio::TrackObservation& o) {
                return a.track_id < o.track_id;
              });
  }

  // IMU at sub-slice midpoints between consecutive frames.
  std::mt19937_64 imu_rng = detail::seeded(cfg.seed, 0x165667B19E3779F9ULL);
  const int m = static_cast<int>(std::llround(cfg.imu_rate_hz / cfg.camera_rate_hz));
  const double h = 1.0 / cfg.imu_rate_hz;
  const int n_samples = (n_frames - 1) * m;
  b.imu.reserve(n_samples);
  for (int j = 0; j < n_samples; ++j) {
    const double t = (j + 0.5) * h;
    const TrajectorySample s =
        sample_trajectory(cfg.trajectory, cfg.speed_mps, cfg.duration_s, t);
    b.imu.push_back(imu::synthesize(s.acceleration, s.body_rate, s.attitude,
                                    imu::ImuBias{}, b.gravity, cfg.imu_noise,
                                    imu_rng, t));
  }
  imu::require_monotonic(b.imu);
  return b;
}

// Pure: returns a copy with i.i.d. white noise added per sample.
inline std::vector<imu::ImuSample> degrade_imu(
    const std::vector<imu::ImuSample>& stream, const imu::ImuNoiseSpec& noise,
    std::uint64_t seed) {
  noise.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<imu::ImuSample> out = stream;
  for (auto& s : out) {
    for (int i = 0; i < 3; ++i) s.accel_m[i] += noise.sigma_na * unit(rng);
    for (int i = 0; i < 3; ++i) s.gyro_m[i] += noise.sigma_ng * unit(rng);
  }
  return out;
}

// IMU window for frame k (k >= 1): the m samples between frames k-1 and k.
// Index math, not timestamp comparisons; generation guarantees the layout.
inline std::vector<imu::ImuSample> imu_window(const ScenarioBundle& b, int frame) {
  const int n_frames = static_cast<int>(b.truth.timestamps.size());
  if (frame < 1 || frame >= n_frames) {
    throw InvalidInput("imu_window: frame must be in [1, n_frames)");
  }
  const int m = static_cast<int>(
      std::llround(b.config.imu_rate_hz / b.config.camera_rate_hz));
  const auto begin = static_cast<std::size_t>((frame - 1) * m);
  return {b.imu.begin() + begin, b.imu.begin() + begin + m};
}

// Filter configuration matching the bundle's rig. The measurement sigma
// mirrors the track noise with a 1 px floor so the innovation covariance
// stays well conditioned when tracks are synthetically exact.
inline vio::VioConfig vio_config_for(const ScenarioBundle& b) {
  vio::VioConfig c;
  c.intrinsics = b.intrinsics;
  c.image_width = b.image_width;
  c.image_height = b.image_height;
  c.imu_from_camera = b.camera_mount;
  c.gravity = b.gravity;
  c.imu_noise = b.config.imu_noise;
  c.nominal_frame_dt = 1.0 / b.config.camera_rate_hz;
  c.sigma_px = b.config.sigma_px > 0.0 ? b.config.sigma_px : 1.0;
  return c;
}

// Angle-versus-depth samples over every emitted observation, for the street
// statistics. Bearings come from the emitted (possibly noisy) pixels; depth
// and velocity come from ground truth.
inline std::vector<conf::AngleDepthSample> bundle_angle_depth_samples(
    const ScenarioBundle& b) {
  std::vector<conf::AngleDepthSample> out;
  for (std::size_t k = 0; k < b.tracks.size(); ++k) {
    const geo::CameraFromWorld cw = (b.truth.poses[k] * b.camera_mount).inverse();
    const Vec3 v_cam = conf::camera_frame_velocity(
        b.truth.velocities[k], b.truth.poses[k].rotation,
        b.camera_mount.rotation);
    if (v_cam.norm() < 1e-6) continue;
    for (const auto& obs : b.tracks[k]) {
      const int j = b.track_feature.at(obs.track_id);
      const double z = cw.apply(b.truth.features[j].position).z();
      const double angle =
          conf::angle_confidence(v_cam, b.intrinsics.bearing(obs.pixel));
      out.push_back({angle, std::max(z, 0.0)});
    }
  }
  return out;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p);
  if (!os) throw ParseError("cannot open for writing: " + p.string());
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw ParseError("missing file: " + p.string());
  return is;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline double parse_double(const std::string& tok,
                           const std::filesystem::path& file, int lineno) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') {
    throw ParseError(file.string() + ":" + std::to_string(lineno) +
                     ": bad number '" + tok + "'");
  }
  return v;
}

// Reads a CSV with an exact header; returns rows of doubles.
inline std::vector<std::vector<double>> read_csv(
    const std::filesystem::path& p, const std::string& header,
    std::size_t n_fields) {
  std::ifstream is = open_in(p);
  std::string line;
  if (!std::getline(is, line) || line != header) {
    throw ParseError(p.string() + ":1: expected header '" + header + "'");
  }
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> toks = split_csv(line);
    if (toks.size() != n_fields) {
      throw ParseError(p.string() + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(n_fields) + " fields, got " +
                       std::to_string(toks.size()));
    }
    std::vector<double> row(n_fields);
    for (std::size_t i = 0; i < n_fields; ++i) {
      row[i] = parse_double(toks[i], p, lineno);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

inline void write_bundle(const std::filesystem::path& dir,
                         const ScenarioBundle& b) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  {
    std::ofstream os = detail::open_out(dir / "ground_truth.csv");
    os << "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz\n";
    for (std::size_t k = 0; k < b.truth.timestamps.size(); ++k) {
      const auto& pose = b.truth.poses[k];
      const auto& v = b.truth.velocities[k];
      os << detail::format_double(b.truth.timestamps[k]) << ','
         << detail::format_double(pose.translation.x()) << ','
         << detail::format_double(pose.translation.y()) << ','
         << detail::format_double(pose.translation.z()) << ','
         << detail::format_double(pose.rotation.w()) << ','
         << detail::format_double(pose.rotation.x()) << ','
         << detail::format_double(pose.rotation.y()) << ','
         << detail::format_double(pose.rotation.z()) << ','
         << detail::format_double(v.x()) << ',' << detail::format_double(v.y())
         << ',' << detail::format_double(v.z()) << '\n';
    }
  }
  {
    std::ofstream os = detail::open_out(dir / "imu.csv");
    os << "t,ax,ay,az,gx,gy,gz\n";
    for (const auto& s : b.imu) {
      os << detail::format_double(s.timestamp) << ','
         << detail::format_double(s.accel_m.x()) << ','
         << detail::format_double(s.accel_m.y()) << ','
         << detail::format_double(s.accel_m.z()) << ','
         << detail::format_double(s.gyro_m.x()) << ','
         << detail::format_double(s.gyro_m.y()) << ','
         << detail::format_double(s.gyro_m.z()) << '\n';
    }
  }
  {
    std::ofstream os = detail::open_out(dir / "tracks.csv");
    os << "frame,track_id,u,v\n";
    for (std::size_t k = 0; k < b.tracks.size(); ++k) {
      for (const auto& obs : b.tracks[k]) {
        os << k << ',' << obs.track_id << ','
           << detail::format_double(obs.pixel.x()) << ','
           << detail::format_double(obs.pixel.y()) << '\n';
      }
    }
  }
  {
    nlohmann::json meta;
    meta["format"] = "tvio-scenario-1";
    meta["frames"] = static_cast<int>(b.truth.timestamps.size());
    meta["camera"] = {{"fx", b.intrinsics.fx}, {"fy", b.intrinsics.fy},
                      {"cx", b.intrinsics.cx}, {"cy", b.intrinsics.cy},
                      {"width", b.image_width}, {"height", b.image_height}};
    meta["camera_mount"] = {
        {"q_wxyz",
         {b.camera_mount.rotation.w(), b.camera_mount.rotation.x(),
          b.camera_mount.rotation.y(), b.camera_mount.rotation.z()}},
        {"t",
         {b.camera_mount.translation.x(), b.camera_mount.translation.y(),
          b.camera_mount.translation.z()}}};
    meta["gravity"] = {b.gravity.x(), b.gravity.y(), b.gravity.z()};
    meta["scenario"] = {
        {"trajectory", to_string(b.config.trajectory)},
        {"duration_s", b.config.duration_s},
        {"speed_mps", b.config.speed_mps},
        {"camera_rate_hz", b.config.camera_rate_hz},
        {"imu_rate_hz", b.config.imu_rate_hz},
        {"sigma_px", b.config.sigma_px},
        {"seed", b.config.seed},
        {"imu_noise",
         {{"sigma_na", b.config.imu_noise.sigma_na},
          {"sigma_ng", b.config.imu_noise.sigma_ng},
          {"sigma_ba_walk", b.config.imu_noise.sigma_ba_walk},
          {"sigma_bg_walk", b.config.imu_noise.sigma_bg_walk}}},
        {"corridor",
         {{"width_m", b.config.corridor.width_m},
          {"feature_density_per_m", b.config.corridor.feature_density_per_m},
          {"depth_min_m", b.config.corridor.depth_min_m},
          {"depth_max_m", b.config.corridor.depth_max_m},
          {"distant_fraction", b.config.corridor.distant_fraction}}}};
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& f : b.truth.features) {
      feats.push_back({f.position.x(), f.position.y(), f.position.z(),
                       f.distant ? 1 : 0});
    }
    meta["features"] = std::move(feats);
    nlohmann::json tf = nlohmann::json::array();
    for (const auto& [id, idx] : b.track_feature) tf.push_back({id, idx});
    meta["track_feature"] = std::move(tf);

    std::ofstream os = detail::open_out(dir / "meta.json");
    os << meta.dump(2) << '\n';
  }
}

inline ScenarioBundle read_bundle(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  ScenarioBundle b;

  nlohmann::json meta;
  {
    std::ifstream is = detail::open_in(dir / "meta.json");
    try {
      is >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError((dir / "meta.json").string() + ": " + e.what());
    }
  }
  try {
    const auto& cam = meta.at("camera");
    b.intrinsics = geo::CameraIntrinsics(cam.at("fx"), cam.at("fy"),
                                         cam.at("cx"), cam.at("cy"));
    b.image_width = cam.at("width");
    b.image_height = cam.at("height");
    const auto& mount = meta.at("camera_mount");
    const auto& qw = mount.at("q_wxyz");
    b.camera_mount.rotation = Quat(qw.at(0), qw.at(1), qw.at(2), qw.at(3));
    const auto& mt = mount.at("t");
    b.camera_mount.translation = Vec3(mt.at(0), mt.at(1), mt.at(2));
    const auto& g = meta.at("gravity");
    b.gravity = Vec3(g.at(0), g.at(1), g.at(2));
    const auto& sc = meta.at("scenario");
    b.config.trajectory = trajectory_kind_from_string(sc.at("trajectory"));
    b.config.duration_s = sc.at("duration_s");
    b.config.speed_mps = sc.at("speed_mps");
    b.config.camera_rate_hz = sc.at("camera_rate_hz");
    b.config.imu_rate_hz = sc.at("imu_rate_hz");
    b.config.sigma_px = sc.at("sigma_px");
    b.config.seed = sc.at("seed");
    const auto& nj = sc.at("imu_noise");
    b.config.imu_noise.sigma_na = nj.at("sigma_na");
    b.config.imu_noise.sigma_ng = nj.at("sigma_ng");
    b.config.imu_noise.sigma_ba_walk = nj.at("sigma_ba_walk");
    b.config.imu_noise.sigma_bg_walk = nj.at("sigma_bg_walk");
    const auto& cj = sc.at("corridor");
    b.config.corridor.width_m = cj.at("width_m");
    b.config.corridor.feature_density_per_m = cj.at("feature_density_per_m");
    b.config.corridor.depth_min_m = cj.at("depth_min_m");
    b.config.corridor.depth_max_m = cj.at("depth_max_m");
    b.config.corridor.distant_fraction = cj.at("distant_fraction");
    for (const auto& f : meta.at("features")) {
      b.truth.features.push_back(
          {Vec3(f.at(0), f.at(1), f.at(2)), f.at(3).get<int>() != 0});
    }
    for (const auto& e : meta.at("track_feature")) {
      b.track_feature[e.at(0).get<std::int64_t>()] = e.at(1).get<int>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError((dir / "meta.json").string() + ": " + e.what());
  }
  const int n_frames = meta.at("frames").get<int>();

  const auto gt = detail::read_csv(dir / "ground_truth.csv",
                                   "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz", 11);
  if (static_cast<int>(gt.size()) != n_frames) {
    throw ParseError((dir / "ground_truth.csv").string() +
                     ": row count does not match meta frame count");
  }
  for (const auto& r : gt) {
    b.truth.timestamps.push_back(r[0]);
    b.truth.poses.push_back(
        geo::WorldFromImu{Quat(r[4], r[5], r[6], r[7]), Vec3(r[1], r[2], r[3])});
    b.truth.velocities.push_back(Vec3(r[8], r[9], r[10]));
  }

  const auto ij = detail::read_csv(dir / "imu.csv", "t,ax,ay,az,gx,gy,gz", 7);
  for (const auto& r : ij) {
    imu::ImuSample s;
    s.timestamp = r[0];
    s.accel_m = Vec3(r[1], r[2], r[3]);
    s.gyro_m = Vec3(r[4], r[5], r[6]);
    b.imu.push_back(s);
  }

  const auto tr = detail::read_csv(dir / "tracks.csv", "frame,track_id,u,v", 4);
  b.tracks.assign(n_frames, {});
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const auto frame = static_cast<int>(std::llround(tr[i][0]));
    if (frame < 0 || frame >= n_frames) {
      throw ParseError((dir / "tracks.csv").string() + ":" +
                       std::to_string(i + 2) + ": frame index out of range");
    }
    b.tracks[frame].push_back(
        {static_cast<std::int64_t>(std::llround(tr[i][1])),
         Vec2(tr[i][2], tr[i][3])});
  }
  return b;
}

}  // namespace tvio::sim
