#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tvio/geometry.hpp"
#include "tvio/sim.hpp"

// KITTI-style segment error metrics, Monte Carlo aggregation over seeded
// runs, and the trajectory/plot file formats.
namespace tvio::eval {

struct TrajectoryEstimate {
  std::vector<double> timestamps;
  std::vector<geo::WorldFromImu> poses;  // one per camera frame
};

struct SegmentError {
  int start_frame = 0;
  double length_m = 0.0;
  double rotation_deg_per_m = 0.0;
  double translation_percent = 0.0;
};

struct ErrorSummary {
  // Means over all segments; rotation reported in 10^-2 deg/m, the unit
  // convention of the benchmark tables.
  double rotation_e2_deg_per_m = 0.0;
  double translation_percent = 0.0;
  std::vector<SegmentError> segments;
  std::string diagnostic;  // set when no segment fits the trajectory
};

inline std::vector<double> cumulative_path(
    const std::vector<geo::WorldFromImu>& poses) {
  std::vector<double> dist(poses.size(), 0.0);
  for (std::size_t k = 1; k < poses.size(); ++k) {
    dist[k] = dist[k - 1] +
              (poses[k].translation - poses[k - 1].translation).norm();
  }
  return dist;
}

// Segment endpoint error, devkit convention: from every start frame whose
// forward ground-truth path reaches the segment length, compare the relative
// pose over the segment and normalize by the nominal length.
inline ErrorSummary kitti_errors(const TrajectoryEstimate& est,
                                 const std::vector<geo::WorldFromImu>& gt,
                                 double segment_length_m = 100.0) {
  if (!(segment_length_m > 0.0)) {
    throw InvalidInput("kitti_errors: segment length must be > 0");
  }
  if (est.poses.size() != gt.size()) {
    throw InvalidInput("kitti_errors: estimate and ground truth must be frame-aligned");
  }
  ErrorSummary out;
  const std::vector<double> dist = cumulative_path(gt);

  std::size_t end = 0;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    if (end < f) end = f;
    while (end < gt.size() && dist[end] - dist[f] < segment_length_m) ++end;
    if (end >= gt.size()) break;

    const auto rel_gt = gt[f].inverse() * gt[end];
    const auto rel_est = est.poses[f].inverse() * est.poses[end];
    const Quat dq = rel_gt.rotation.conjugate() * rel_est.rotation;
    const double angle_rad =
        2.0 * std::atan2(dq.vec().norm(), std::abs(dq.w()));
    const double t_res = (rel_est.translation - rel_gt.translation).norm();

    SegmentError seg;
    seg.start_frame = static_cast<int>(f);
    seg.length_m = segment_length_m;
    seg.rotation_deg_per_m = angle_rad * 180.0 / M_PI / segment_length_m;
    seg.translation_percent = t_res / segment_length_m * 100.0;
    out.segments.push_back(seg);
  }

  if (out.segments.empty()) {
    out.diagnostic = "trajectory path length " +
                     std::to_string(dist.empty() ? 0.0 : dist.back()) +
                     " m never spans a " + std::to_string(segment_length_m) +
                     " m segment";
    return out;
  }
  double rot = 0.0, trans = 0.0;
  for (const auto& s : out.segments) {
    rot += s.rotation_deg_per_m;
    trans += s.translation_percent;
  }
  const auto n = static_cast<double>(out.segments.size());
  out.rotation_e2_deg_per_m = rot / n * 100.0;
  out.translation_percent = trans / n;
  return out;
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Sample standard deviation; zero for fewer than two values.
inline double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

struct RunOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double rotation_e2_deg_per_m = 0.0;
  double translation_percent = 0.0;
};

struct Aggregate {
  int n_ok = 0;
  int n_failed = 0;
  double mean_rotation = 0.0;
  double median_rotation = 0.0;
  double std_rotation = 0.0;
  double mean_translation = 0.0;
  double median_translation = 0.0;
  double std_translation = 0.0;
};

struct MonteCarloResult {
  std::vector<RunOutcome> runs;  // seed order, not completion order
  Aggregate aggregate;           // over successful runs only
  bool too_many_failures = false;  // failures exceed 20 percent
};

// One seeded run: returns (rotation 10^-2 deg/m, translation %). A throwing
// run is recorded as failed and excluded from the aggregate.
using RunFn = std::function<std::pair<double, double>(std::uint64_t seed)>;

inline MonteCarloResult monte_carlo(const RunFn& run,
                                    const std::vector<std::uint64_t>& seeds,
                                    int max_workers = 0) {
  if (seeds.empty()) throw InvalidInput("monte_carlo: need at least one seed");
  MonteCarloResult result;
  result.runs.resize(seeds.size());

  std::size_t hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  std::size_t n_workers = max_workers > 0 ? static_cast<std::size_t>(max_workers) : hw;
  n_workers = std::min(n_workers, seeds.size());

  // Results land in their seed's slot, so aggregation never depends on
  // completion order.
  std::atomic<std::size_t> next{0};
  const auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= seeds.size()) return;
      RunOutcome& out = result.runs[i];
      out.seed = seeds[i];
      try {
        const auto [rot, trans] = run(seeds[i]);
        out.rotation_e2_deg_per_m = rot;
        out.translation_percent = trans;
        out.ok = true;
      } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
      }
    }
  };
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::vector<double> rots, transs;
  for (const auto& r : result.runs) {
    if (r.ok) {
      rots.push_back(r.rotation_e2_deg_per_m);
      transs.push_back(r.translation_percent);
      ++result.aggregate.n_ok;
    } else {
      ++result.aggregate.n_failed;
    }
  }
  result.aggregate.mean_rotation = mean(rots);
  result.aggregate.median_rotation = median(rots);
  result.aggregate.std_rotation = stddev(rots);
  result.aggregate.mean_translation = mean(transs);
  result.aggregate.median_translation = median(transs);
  result.aggregate.std_translation = stddev(transs);
  result.too_many_failures =
      result.aggregate.n_failed * 5 > static_cast<int>(seeds.size());
  return result;
}

// Pairwise comparison of two Monte Carlo sweeps that shared seeds; only
// pairs where both runs succeeded count.
struct PairedSummary {
  int n = 0;         // valid pairs
  int improved = 0;  // strict translation improvement of mode over baseline
  double median_baseline_translation = 0.0;
  double median_mode_translation = 0.0;
  double median_baseline_rotation = 0.0;
  double median_mode_rotation = 0.0;
  double rotation_relative_gap = 0.0;  // |median ratio - 1|
};

inline PairedSummary paired_summary(const MonteCarloResult& baseline,
                                    const MonteCarloResult& mode) {
  if (baseline.runs.size() != mode.runs.size()) {
    throw InvalidInput("paired_summary: run counts differ");
  }
  PairedSummary out;
  std::vector<double> bt, mt, br, mr;
  for (std::size_t i = 0; i < baseline.runs.size(); ++i) {
    const auto& b = baseline.runs[i];
    const auto& m = mode.runs[i];
    if (b.seed != m.seed) {
      throw InvalidInput("paired_summary: seed mismatch between sweeps");
    }
    if (!b.ok || !m.ok) continue;
    ++out.n;
    out.improved += m.translation_percent < b.translation_percent ? 1 : 0;
    bt.push_back(b.translation_percent);
    mt.push_back(m.translation_percent);
    br.push_back(b.rotation_e2_deg_per_m);
    mr.push_back(m.rotation_e2_deg_per_m);
  }
  out.median_baseline_translation = median(bt);
  out.median_mode_translation = median(mt);
  out.median_baseline_rotation = median(br);
  out.median_mode_rotation = median(mr);
  if (out.median_baseline_rotation > 0.0) {
    out.rotation_relative_gap =
        std::abs(out.median_mode_rotation / out.median_baseline_rotation - 1.0);
  }
  return out;
}

inline void write_trajectory_csv(const std::filesystem::path& p,
                                 const TrajectoryEstimate& est) {
  std::ofstream os(p);
  if (!os) throw ParseError("cannot open for writing: " + p.string());
  os << "frame,t,px,py,pz,qw,qx,qy,qz\n";
  for (std::size_t k = 0; k < est.poses.size(); ++k) {
    const auto& pose = est.poses[k];
    os << k << ',' << sim::detail::format_double(est.timestamps[k]) << ','
       << sim::detail::format_double(pose.translation.x()) << ','
       << sim::detail::format_double(pose.translation.y()) << ','
       << sim::detail::format_double(pose.translation.z()) << ','
       << sim::detail::format_double(pose.rotation.w()) << ','
       << sim::detail::format_double(pose.rotation.x()) << ','
       << sim::detail::format_double(pose.rotation.y()) << ','
       << sim::detail::format_double(pose.rotation.z()) << '\n';
  }
}

inline TrajectoryEstimate read_trajectory_csv(const std::filesystem::path& p) {
  const auto rows =
      sim::detail::read_csv(p, "frame,t,px,py,pz,qw,qx,qy,qz", 9);
  TrajectoryEstimate est;
  for (const auto& r : rows) {
    est.timestamps.push_back(r[1]);
    est.poses.push_back(
        geo::WorldFromImu{Quat(r[5], r[6], r[7], r[8]), Vec3(r[2], r[3], r[4])});
  }
  return est;
}

inline nlohmann::json errors_json(const ErrorSummary& s) {
  nlohmann::json j;
  j["rotation_e2_deg_per_m"] = s.rotation_e2_deg_per_m;
  j["translation_percent"] = s.translation_percent;
  j["segment_count"] = s.segments.size();
  if (!s.diagnostic.empty()) j["diagnostic"] = s.diagnostic;
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& seg : s.segments) {
    segs.push_back({{"start_frame", seg.start_frame},
                    {"length_m", seg.length_m},
                    {"rotation_deg_per_m", seg.rotation_deg_per_m},
                    {"translation_percent", seg.translation_percent}});
  }
  j["segments"] = std::move(segs);
  return j;
}

// Plot series behind top-down path and confidence figures. Ground truth and
// the diagnostics series are optional; files are only written when data is
// present.
inline void write_plot_data(const std::filesystem::path& dir,
                            const TrajectoryEstimate& est,
                            const std::vector<geo::WorldFromImu>& gt,
                            const std::vector<double>& tau,
                            const std::vector<double>& mean_confidence) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "path_xy.csv");
    os << "frame,est_x,est_y,gt_x,gt_y\n";
    for (std::size_t k = 0; k < est.poses.size(); ++k) {
      os << k << ',' << sim::detail::format_double(est.poses[k].translation.x())
         << ',' << sim::detail::format_double(est.poses[k].translation.y());
      if (k < gt.size()) {
        os << ',' << sim::detail::format_double(gt[k].translation.x()) << ','
           << sim::detail::format_double(gt[k].translation.y());
      } else {
        os << ",,";
      }
      os << '\n';
    }
  }
  if (!tau.empty()) {
    std::ofstream os(dir / "tau.csv");
    os << "frame,tau\n";
    for (std::size_t k = 0; k < tau.size(); ++k) {
      os << k << ',' << sim::detail::format_double(tau[k]) << '\n';
    }
  }
  if (!mean_confidence.empty()) {
    std::ofstream os(dir / "confidence.csv");
    os << "frame,mean_confidence\n";
    for (std::size_t k = 0; k < mean_confidence.size(); ++k) {
      os << k << ',' << sim::detail::format_double(mean_confidence[k]) << '\n';
    }
  }
}

}  // namespace tvio::eval
