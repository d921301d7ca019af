#pragma once

// Per-feature confidence from motion geometry. A feature seen close to the
// camera's direction of travel gets a small angle c_t,m = acos(v_hat . f_hat);
// the forward-motion ratio tau = |v| / (|w| + |v|) gates the whole frame, and
// the final scalar per feature is c_m = tau * c_t,m. The angle only needs the
// bearing, not the 3D point: every point on the ray gives the same angle.
//
// build_confidence_matrix clamps each c_m into [floor, cap] before it scales
// R, so a zero-confidence frame never zeroes the noise model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <vector>

#include "tvio/error.hpp"
#include "tvio/filter.hpp"
#include "tvio/geometry.hpp"
#include "tvio/types.hpp"

namespace tvio {
namespace conf {

constexpr double kVelocityEpsilon = 1e-6;   // m/s, below this motion direction is undefined
constexpr double kNeutralConfidence = 1.0;  // used when velocity is degenerate
constexpr double kDefaultFloor = 0.05;
constexpr double kDefaultCap = 20.0;

// Angle between the camera velocity and a feature bearing, in [0, pi].
// Scale-invariant in both arguments. Near-zero velocity has no direction, so
// the neutral value is returned instead.
inline double angle_confidence(const Vec3& camera_velocity,
                               const Vec3& bearing_f1) {
  const double nv = camera_velocity.norm();
  const double nf = bearing_f1.norm();
  if (nv < kVelocityEpsilon) return kNeutralConfidence;
  if (nf < 1e-12) throw InvalidInput("angle_confidence: zero bearing");
  const double c =
      std::clamp(camera_velocity.dot(bearing_f1) / (nv * nf), -1.0, 1.0);
  return std::acos(c);
}

// tau = |v| / (|g_m| + |v|), with the 0/0 limit defined as 0. The two norms
// have different units; kept verbatim from the weighting scheme this models.
inline double forward_motion_ratio(const Vec3& v_world, const Vec3& gyro_m) {
  const double nv = v_world.norm();
  const double ng = gyro_m.norm();
  const double denom = ng + nv;
  if (denom == 0.0) return 0.0;
  return nv / denom;
}

// Velocity expressed in the camera frame: undo world-from-imu, then
// imu-from-camera.
inline Vec3 camera_frame_velocity(const Vec3& v_world,
                                  const Quat& world_from_imu_q,
                                  const Quat& imu_from_camera_q) {
  const Mat3 R_wi = geo::quat_to_dcm(world_from_imu_q);
  const Mat3 R_ic = geo::quat_to_dcm(imu_from_camera_q);
  return R_ic.transpose() * (R_wi.transpose() * v_world);
}

inline std::vector<double> combine(const std::vector<double>& c_t,
                                   double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) {
    throw InvalidInput("combine: tau must lie in [0, 1]");
  }
  std::vector<double> out(c_t.size());
  for (std::size_t i = 0; i < c_t.size(); ++i) out[i] = tau * c_t[i];
  return out;
}

// One clamped scale per feature, spread over that feature's (u, v) rows.
inline ukf::ConfidenceMatrix build_confidence_matrix(
    const std::vector<double>& c, double floor = kDefaultFloor,
    double cap = kDefaultCap) {
  if (!(floor >= 0.0) || !(cap >= floor)) {
    throw InvalidInput("build_confidence_matrix: need 0 <= floor <= cap");
  }
  std::vector<double> clamped(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!std::isfinite(c[i])) {
      throw InvalidInput("build_confidence_matrix: non-finite confidence");
    }
    clamped[i] = std::clamp(c[i], floor, cap);
  }
  return ukf::ConfidenceMatrix::from_block_scales(clamped, 2);
}

struct AngleDepthSample {
  double angle = 0.0;  // rad, angle between bearing and motion axis
  double depth = 0.0;  // m
};

struct StreetStats {
  int angle_bins = 0;
  int depth_bins = 0;
  double angle_max = 0.0;  // histogram range [0, angle_max]
  double depth_max = 0.0;  // histogram range [0, depth_max]
  std::vector<std::int64_t> counts;  // row-major [angle_bin][depth_bin]
  std::int64_t total = 0;
  bool has_correlation = false;
  double spearman = 0.0;

  std::int64_t at(int ai, int di) const {
    return counts[static_cast<std::size_t>(ai) * depth_bins + di];
  }
};

namespace detail {

// Average ranks for ties, 1-based.
inline std::vector<double> ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& a,
                      const std::vector<double>& b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace detail

// Spearman rank correlation: Pearson correlation of the tie-averaged ranks.
inline double spearman_correlation(const std::vector<double>& a,
                                   const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw InvalidInput("spearman_correlation: size mismatch");
  }
  if (a.size() < 2) throw InvalidInput("spearman_correlation: need >= 2 samples");
  return detail::pearson(detail::ranks(a), detail::ranks(b));
}

// 2D histogram of (angle to motion axis, depth), plus the Spearman rank
// correlation when at least 100 samples are available.
inline StreetStats street_statistics(const std::vector<AngleDepthSample>& samples,
                                     int angle_bins = 18, int depth_bins = 20) {
  if (angle_bins <= 0 || depth_bins <= 0) {
    throw InvalidInput("street_statistics: bin counts must be positive");
  }
  StreetStats s;
  s.angle_bins = angle_bins;
  s.depth_bins = depth_bins;
  s.angle_max = M_PI;
  double dmax = 0.0;
  for (const auto& x : samples) {
    if (!(x.depth >= 0.0) || !(x.angle >= 0.0) || x.angle > M_PI + 1e-12) {
      throw InvalidInput("street_statistics: angle must be in [0, pi], depth >= 0");
    }
    dmax = std::max(dmax, x.depth);
  }
  s.depth_max = dmax > 0.0 ? dmax : 1.0;
  s.counts.assign(static_cast<std::size_t>(angle_bins) * depth_bins, 0);
  for (const auto& x : samples) {
    int ai = static_cast<int>(x.angle / s.angle_max * angle_bins);
    int di = static_cast<int>(x.depth / s.depth_max * depth_bins);
    ai = std::min(ai, angle_bins - 1);
    di = std::min(di, depth_bins - 1);
    s.counts[static_cast<std::size_t>(ai) * depth_bins + di] += 1;
  }
  s.total = static_cast<std::int64_t>(samples.size());
  if (samples.size() >= 100) {
    std::vector<double> angles, depths;
    angles.reserve(samples.size());
    depths.reserve(samples.size());
    for (const auto& x : samples) {
      angles.push_back(x.angle);
      depths.push_back(x.depth);
    }
    s.spearman = spearman_correlation(angles, depths);
    s.has_correlation = true;
  }
  return s;
}

// CSV rows: angle_bin, depth_bin, count. Zero-count cells are skipped.
inline void write_street_stats_csv(std::ostream& os, const StreetStats& s) {
  os << "angle_bin,depth_bin,count\n";
  for (int ai = 0; ai < s.angle_bins; ++ai) {
    for (int di = 0; di < s.depth_bins; ++di) {
      const auto c = s.at(ai, di);
      if (c != 0) os << ai << "," << di << "," << c << "\n";
    }
  }
}

}  // namespace conf
}  // namespace tvio
