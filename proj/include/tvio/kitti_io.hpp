#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tvio/imu.hpp"
#include "tvio/vio.hpp"

// KITTI raw-format ingest: OXTS inertial/GPS records, per-day timestamps,
// rectified calibration, and external feature-track CSVs. Ground truth comes
// from the OXTS solution through a Mercator local plane anchored at the
// first frame, the conventional way KITTI trajectories are derived.
namespace tvio::kitti {

constexpr double kEarthRadiusM = 6378137.0;
constexpr int kOxtsFieldCount = 30;

// The subset of the 30-field OXTS line the pipeline consumes. Units are
// native OXTS units, which are already SI (rad, m/s, m/s^2).
struct OxtsRecord {
  double lat_deg = 0.0;
  double lon_deg = 0.0;
  double alt_m = 0.0;
  double roll = 0.0;   // rad
  double pitch = 0.0;  // rad
  double yaw = 0.0;    // rad, 0 = east, counterclockwise
  double vn = 0.0;     // m/s, north
  double ve = 0.0;     // m/s, east
  double vf = 0.0;     // m/s, forward
  double vl = 0.0;     // m/s, left
  double vu = 0.0;     // m/s, up
  Vec3 accel = Vec3::Zero();  // body frame, fields 11..13
  Vec3 gyro = Vec3::Zero();   // body frame, fields 17..19
};

struct CalibrationSet {
  geo::CameraIntrinsics K;  // rectified camera 0
  geo::ImuFromCamera imu_from_camera;
};

struct SequenceData {
  std::vector<double> timestamps;  // seconds within the recording day
  std::vector<imu::ImuSample> imu;
  std::vector<geo::WorldFromImu> ground_truth;  // anchored: first = identity
  std::vector<Vec3> velocities;  // anchored world frame
  Vec3 gravity = Vec3::Zero();   // anchored world frame
  CalibrationSet calib;
  std::vector<OxtsRecord> oxts;
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline double parse_double(const std::string& tok, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') {
    throw ParseError(where + ": bad number '" + tok + "'");
  }
  return v;
}

// "key: v v v ..." lines; values stay unparsed until a key is requested, so
// non-numeric entries (calib_time) never trip the parser.
inline std::map<std::string, std::string> read_kv_file(
    const std::filesystem::path& p, const std::string& component) {
  std::ifstream is(p);
  if (!is) throw ParseError("missing " + component + ": " + p.string());
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    const std::size_t pos = line.find(':');
    if (pos == std::string::npos) continue;
    out[line.substr(0, pos)] = line.substr(pos + 1);
  }
  return out;
}

inline std::vector<double> parse_values(
    const std::map<std::string, std::string>& kv, const std::string& key,
    std::size_t expected, const std::filesystem::path& p) {
  const auto it = kv.find(key);
  if (it == kv.end()) {
    throw ParseError(p.string() + ": missing key " + key);
  }
  const auto toks = split_ws(it->second);
  if (toks.size() != expected) {
    throw ParseError(p.string() + ": key " + key + " expects " +
                     std::to_string(expected) + " values, got " +
                     std::to_string(toks.size()));
  }
  std::vector<double> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    out[i] = parse_double(toks[i], p.string() + ": " + key);
  }
  return out;
}

inline Mat3 mat3_of(const std::vector<double>& v) {
  Mat3 R;
  R << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  return R;
}

// Resolves a calib file in the sequence directory or its parent (KITTI
// stores calibration beside the drive directories, under the date).
inline std::filesystem::path find_calib(const std::filesystem::path& seq_dir,
                                        const std::string& name) {
  if (std::filesystem::exists(seq_dir / name)) return seq_dir / name;
  const auto up = seq_dir.parent_path() / name;
  if (std::filesystem::exists(up)) return up;
  throw ParseError("missing calibration file " + name + " near " +
                   seq_dir.string());
}

}  // namespace detail

// One OXTS line; `where` names the source for errors.
inline OxtsRecord parse_oxts_line(const std::string& line,
                                  const std::string& where) {
  const auto toks = detail::split_ws(line);
  if (toks.size() != kOxtsFieldCount) {
    throw ParseError(where + ": expected 30 OXTS fields, got " +
                     std::to_string(toks.size()));
  }
  std::array<double, kOxtsFieldCount> v{};
  for (int i = 0; i < kOxtsFieldCount; ++i) {
    v[i] = detail::parse_double(toks[i], where);
  }
  OxtsRecord r;
  r.lat_deg = v[0];
  r.lon_deg = v[1];
  r.alt_m = v[2];
  r.roll = v[3];
  r.pitch = v[4];
  r.yaw = v[5];
  r.vn = v[6];
  r.ve = v[7];
  r.vf = v[8];
  r.vl = v[9];
  r.vu = v[10];
  r.accel = Vec3(v[11], v[12], v[13]);
  r.gyro = Vec3(v[17], v[18], v[19]);
  return r;
}

// "YYYY-MM-DD HH:MM:SS.fraction" -> seconds within the day.
inline double parse_day_time(const std::string& line, const std::string& where) {
  int year = 0, month = 0, day = 0, hh = 0, mm = 0;
  double ss = 0.0;
  if (std::sscanf(line.c_str(), "%d-%d-%d %d:%d:%lf", &year, &month, &day, &hh,
                  &mm, &ss) != 6) {
    throw ParseError(where + ": bad timestamp '" + line + "'");
  }
  return hh * 3600.0 + mm * 60.0 + ss;
}

// Mercator local plane, KITTI devkit convention: x east, y north, z = alt,
// with the metre scale fixed by the anchor latitude.
inline Vec3 mercator(double lat_deg, double lon_deg, double alt_m,
                     double scale) {
  const double x = scale * kEarthRadiusM * lon_deg * M_PI / 180.0;
  const double y = scale * kEarthRadiusM *
                   std::log(std::tan(M_PI / 4.0 + lat_deg * M_PI / 360.0));
  return Vec3(x, y, alt_m);
}

// Unanchored pose of the IMU in the Mercator plane.
inline geo::WorldFromImu oxts_pose(const OxtsRecord& r, double scale) {
  const Quat q = Quat(Eigen::AngleAxisd(r.yaw, Vec3::UnitZ())) *
                 Quat(Eigen::AngleAxisd(r.pitch, Vec3::UnitY())) *
                 Quat(Eigen::AngleAxisd(r.roll, Vec3::UnitX()));
  return geo::WorldFromImu{q, mercator(r.lat_deg, r.lon_deg, r.alt_m, scale)};
}

inline CalibrationSet load_calibration(const std::filesystem::path& seq_dir) {
  namespace fs = std::filesystem;
  const fs::path cam = detail::find_calib(seq_dir, "calib_cam_to_cam.txt");
  const fs::path velo = detail::find_calib(seq_dir, "calib_velo_to_cam.txt");
  const fs::path imu = detail::find_calib(seq_dir, "calib_imu_to_velo.txt");

  const auto cam_kv = detail::read_kv_file(cam, "camera calibration");
  const auto P = detail::parse_values(cam_kv, "P_rect_00", 12, cam);
  const Mat3 R_rect = detail::mat3_of(detail::parse_values(cam_kv, "R_rect_00", 9, cam));

  const auto velo_kv = detail::read_kv_file(velo, "velodyne-to-camera calibration");
  const Mat3 R_vc = detail::mat3_of(detail::parse_values(velo_kv, "R", 9, velo));
  const Vec3 T_vc(detail::parse_values(velo_kv, "T", 3, velo).data());

  const auto imu_kv = detail::read_kv_file(imu, "imu-to-velodyne calibration");
  const Mat3 R_iv = detail::mat3_of(detail::parse_values(imu_kv, "R", 9, imu));
  const Vec3 T_iv(detail::parse_values(imu_kv, "T", 3, imu).data());

  // cam0_rect <- velo <- imu
  const Mat3 R_ci = R_rect * R_vc * R_iv;
  const Vec3 t_ci = R_rect * (R_vc * T_iv + T_vc);
  if ((R_ci * R_ci.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
    throw ParseError("calibration rotation is not orthonormal within 1e-6");
  }

  CalibrationSet out;
  out.K = geo::CameraIntrinsics(P[0], P[5], P[2], P[6]);
  const geo::CameraFromImu cam_from_imu{geo::dcm_to_quat(R_ci), t_ci};
  out.imu_from_camera = cam_from_imu.inverse();
  return out;
}

inline SequenceData load_sequence(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  SequenceData seq;
  seq.calib = load_calibration(dir);

  const fs::path ts_path = dir / "oxts" / "timestamps.txt";
  {
    std::ifstream is(ts_path);
    if (!is) throw ParseError("missing oxts timestamps: " + ts_path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      const double t = parse_day_time(
          line, ts_path.string() + ":" + std::to_string(lineno));
      if (!seq.timestamps.empty() && t <= seq.timestamps.back()) {
        throw ParseError(ts_path.string() + ":" + std::to_string(lineno) +
                         ": timestamps must be strictly increasing");
      }
      seq.timestamps.push_back(t);
    }
  }

  const fs::path data_dir = dir / "oxts" / "data";
  if (!fs::is_directory(data_dir)) {
    throw ParseError("missing oxts data directory: " + data_dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(data_dir)) {
    if (e.path().extension() == ".txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.size() != seq.timestamps.size()) {
    throw ParseError("oxts frame count mismatch: " +
                     std::to_string(files.size()) + " data files, " +
                     std::to_string(seq.timestamps.size()) + " timestamps");
  }
  if (files.empty()) throw ParseError("empty oxts sequence: " + dir.string());

  for (std::size_t k = 0; k < files.size(); ++k) {
    std::ifstream is(files[k]);
    if (!is) throw ParseError("missing oxts record: " + files[k].string());
    std::string line;
    std::getline(is, line);
    seq.oxts.push_back(parse_oxts_line(line, files[k].string() + ":1"));

    imu::ImuSample s;
    s.timestamp = seq.timestamps[k];
    s.accel_m = seq.oxts.back().accel;
    s.gyro_m = seq.oxts.back().gyro;
    seq.imu.push_back(s);
  }

  // Anchor the Mercator trajectory at the first frame so the filter's world
  // frame is the initial IMU frame; gravity and velocities follow it.
  const double scale = std::cos(seq.oxts.front().lat_deg * M_PI / 180.0);
  const geo::WorldFromImu T0 = oxts_pose(seq.oxts.front(), scale);
  const auto anchor = T0.inverse();
  for (const auto& r : seq.oxts) {
    const geo::WorldFromImu Tk = oxts_pose(r, scale);
    const auto a = anchor * Tk;
    seq.ground_truth.push_back(geo::WorldFromImu{a.rotation, a.translation});
    seq.velocities.push_back(anchor.rotation * Vec3(r.ve, r.vn, r.vu));
  }
  seq.gravity = anchor.rotation * imu::standard_gravity();
  return seq;
}

struct TrackPoint {
  int frame = 0;
  Vec2 pixel = Vec2::Zero();
};

struct FeatureTrack {
  std::int64_t track_id = 0;
  std::vector<TrackPoint> points;  // ordered by frame
};

// CSV with header frame,track_id,u,v. Rows may arrive in any order; output
// is grouped by id with observations sorted by frame.
inline std::vector<FeatureTrack> load_tracks(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw ParseError("missing tracks file: " + file.string());
  std::string line;
  if (!std::getline(is, line)) return {};  // empty file -> empty set
  if (line != "frame,track_id,u,v") {
    throw ParseError(file.string() + ":1: expected header frame,track_id,u,v");
  }
  std::map<std::int64_t, std::vector<TrackPoint>> grouped;
  std::set<std::pair<int, std::int64_t>> seen;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> toks;
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = line.find(',', start);
      if (pos == std::string::npos) {
        toks.push_back(line.substr(start));
        break;
      }
      toks.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    const std::string where = file.string() + ":" + std::to_string(lineno);
    if (toks.size() != 4) {
      throw ParseError(where + ": expected 4 fields, got " +
                       std::to_string(toks.size()));
    }
    const auto frame = static_cast<int>(detail::parse_double(toks[0], where));
    const auto id =
        static_cast<std::int64_t>(detail::parse_double(toks[1], where));
    const Vec2 px(detail::parse_double(toks[2], where),
                  detail::parse_double(toks[3], where));
    if (!seen.insert({frame, id}).second) {
      throw ParseError(where + ": duplicate observation of track " +
                       std::to_string(id) + " at frame " +
                       std::to_string(frame));
    }
    grouped[id].push_back({frame, px});
  }
  std::vector<FeatureTrack> out;
  for (auto& [id, pts] : grouped) {
    std::sort(pts.begin(), pts.end(),
              [](const TrackPoint& a, const TrackPoint& b) {
                return a.frame < b.frame;
              });
    out.push_back({id, std::move(pts)});
  }
  return out;
}

// Per-frame observation lists for the pipeline, id-sorted within each frame.
inline std::vector<std::vector<vio::TrackObservation>> per_frame_observations(
    const std::vector<FeatureTrack>& tracks, int n_frames) {
  std::vector<std::vector<vio::TrackObservation>> out(n_frames);
  for (const auto& tr : tracks) {
    for (const auto& p : tr.points) {
      if (p.frame < 0 || p.frame >= n_frames) continue;
      out[p.frame].push_back({tr.track_id, p.pixel});
    }
  }
  for (auto& rows : out) {
    std::sort(rows.begin(), rows.end(),
              [](const vio::TrackObservation& a, const vio::TrackObservation& b) {
                return a.track_id < b.track_id;
              });
  }
  return out;
}

// Triples (newest first) for tracks observed at frame, frame-1, frame-2.
inline std::vector<vio::FeatureTriple> triple_candidates(
    const std::vector<FeatureTrack>& tracks, int frame) {
  std::vector<vio::FeatureTriple> out;
  for (const auto& tr : tracks) {
    const Vec2* px[3] = {nullptr, nullptr, nullptr};
    for (const auto& p : tr.points) {
      if (p.frame == frame) px[0] = &p.pixel;
      if (p.frame == frame - 1) px[1] = &p.pixel;
      if (p.frame == frame - 2) px[2] = &p.pixel;
    }
    if (px[0] && px[1] && px[2]) {
      out.push_back({tr.track_id, *px[0], *px[1], *px[2]});
    }
  }
  return out;
}

}  // namespace tvio::kitti
