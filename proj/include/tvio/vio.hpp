#pragma once

// Sliding-window visual-inertial estimator over three camera poses.
//
// State (30 entries): [p1 v q1 b_a b_g p2 q2 p3 q3], quaternions packed
// scalar-first at offsets 6, 19, 26. Pose 1 is the newest frame; a transition
// propagates pose 1 with the IMU window and shifts (p1,q1)->(p2,q2)->(p3,q3).
// The measurement model transfers each feature's view-3 observation through
// the trifocal tensor of the current window into a predicted view-1 pixel;
// no landmarks are estimated.
//
// IMU windows: each sample is treated as the midpoint (average) value of an
// equal sub-slice of the frame interval, integrated sequentially with a
// midpoint attitude. An empty window coasts: constant velocity, constant
// attitude.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <vector>

#include "tvio/confidence.hpp"
#include "tvio/error.hpp"
#include "tvio/filter.hpp"
#include "tvio/geometry.hpp"
#include "tvio/imu.hpp"
#include "tvio/log.hpp"
#include "tvio/types.hpp"

namespace tvio {
namespace vio {

struct VioState {
  Vec3 p1 = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Quat q1 = Quat::Identity();
  Vec3 b_a = Vec3::Zero();
  Vec3 b_g = Vec3::Zero();
  Vec3 p2 = Vec3::Zero();
  Quat q2 = Quat::Identity();
  Vec3 p3 = Vec3::Zero();
  Quat q3 = Quat::Identity();

  static constexpr int kDim = 30;

  VecX pack() const {
    VecX x(kDim);
    x.segment<3>(0) = p1;
    x.segment<3>(3) = v;
    x[6] = q1.w(); x[7] = q1.x(); x[8] = q1.y(); x[9] = q1.z();
    x.segment<3>(10) = b_a;
    x.segment<3>(13) = b_g;
    x.segment<3>(16) = p2;
    x[19] = q2.w(); x[20] = q2.x(); x[21] = q2.y(); x[22] = q2.z();
    x.segment<3>(23) = p3;
    x[26] = q3.w(); x[27] = q3.x(); x[28] = q3.y(); x[29] = q3.z();
    return x;
  }

  static VioState unpack(const VecX& x) {
    if (x.size() != kDim) throw InvalidInput("VioState: expected 30 entries");
    VioState s;
    s.p1 = x.segment<3>(0);
    s.v = x.segment<3>(3);
    s.q1 = Quat(x[6], x[7], x[8], x[9]);
    s.b_a = x.segment<3>(10);
    s.b_g = x.segment<3>(13);
    s.p2 = x.segment<3>(16);
    s.q2 = Quat(x[19], x[20], x[21], x[22]);
    s.p3 = x.segment<3>(23);
    s.q3 = Quat(x[26], x[27], x[28], x[29]);
    return s;
  }
};

inline std::vector<int> quaternion_blocks() { return {6, 19, 26}; }

struct FeatureTriple {
  std::int64_t track_id = 0;
  Vec2 px1 = Vec2::Zero();  // newest frame
  Vec2 px2 = Vec2::Zero();
  Vec2 px3 = Vec2::Zero();  // oldest frame
};

enum class ConfidenceMode { off, literal, inverted };

inline const char* to_string(ConfidenceMode m) {
  switch (m) {
    case ConfidenceMode::off: return "off";
    case ConfidenceMode::literal: return "literal";
    case ConfidenceMode::inverted: return "inverted";
  }
  throw InvalidInput("unknown confidence mode");
}

inline ConfidenceMode confidence_mode_from_string(const std::string& s) {
  if (s == "off") return ConfidenceMode::off;
  if (s == "literal") return ConfidenceMode::literal;
  if (s == "inverted") return ConfidenceMode::inverted;
  throw InvalidInput("confidence mode must be off, literal, or inverted");
}

struct VioConfig {
  geo::ImuFromCamera imu_from_camera{};
  geo::CameraIntrinsics intrinsics{};
  double image_width = 1242.0;
  double image_height = 375.0;
  Vec3 gravity = imu::standard_gravity();
  imu::ImuNoiseSpec imu_noise{};
  double nominal_frame_dt = 0.1;  // used to build Q when none is supplied
  MatX process_noise;             // 30x30; empty = derive from imu_noise
  double sigma_px = 1.0;
  double ransac_threshold_px = 6.0;
  int ransac_iterations = 50;
  double ransac_min_inlier_ratio = 0.3;
  int max_features = 100;
  int bucket_cols = 8;
  int bucket_rows = 4;
  ukf::SigmaParams sigma{};
  ConfidenceMode mode = ConfidenceMode::literal;
  double confidence_floor = conf::kDefaultFloor;
  double confidence_cap = conf::kDefaultCap;
  // Initial covariance diagonal, by block.
  double p0_position = 1e-2;
  double p0_velocity = 1e-1;
  double p0_orientation = 1e-3;
  double p0_accel_bias = 1e-2;
  double p0_gyro_bias = 1e-3;
  double p0_old_pose = 1e-2;

  void validate() const {
    if (!(ransac_threshold_px > 0.0)) {
      throw InvalidInput("VioConfig: ransac threshold must be > 0");
    }
    if (max_features < 3) throw InvalidInput("VioConfig: max_features >= 3");
    if (!(sigma_px > 0.0)) throw InvalidInput("VioConfig: sigma_px must be > 0");
    if (ransac_iterations <= 0) {
      throw InvalidInput("VioConfig: ransac_iterations must be > 0");
    }
    if (!(ransac_min_inlier_ratio > 0.0 && ransac_min_inlier_ratio <= 1.0)) {
      throw InvalidInput("VioConfig: min inlier ratio in (0, 1]");
    }
    if (bucket_cols <= 0 || bucket_rows <= 0) {
      throw InvalidInput("VioConfig: bucket grid must be positive");
    }
    if (!(image_width > 0.0 && image_height > 0.0)) {
      throw InvalidInput("VioConfig: image size must be positive");
    }
    if (!(nominal_frame_dt > 0.0)) {
      throw InvalidInput("VioConfig: nominal_frame_dt must be > 0");
    }
    if (process_noise.size() != 0 &&
        (process_noise.rows() != VioState::kDim ||
         process_noise.cols() != VioState::kDim)) {
      throw InvalidInput("VioConfig: process noise must be 30x30");
    }
    imu_noise.validate();
  }
};

// Per-frame process covariance from the IMU white-noise and walk densities.
// Old-pose blocks get only the floor: they are copies, not freshly excited.
// The floor on every diagonal entry keeps the sigma factorization well posed
// despite the quaternion radial direction carrying no real information.
inline MatX default_process_noise(const imu::ImuNoiseSpec& n, double dt,
                                  double floor = 1e-12) {
  if (!(dt > 0.0)) throw InvalidInput("default_process_noise: dt must be > 0");
  n.validate();
  VecX d = VecX::Constant(VioState::kDim, floor);
  const double pos = std::pow(0.5 * n.sigma_na * dt * dt, 2);
  const double vel = std::pow(n.sigma_na * dt, 2);
  const double att = std::pow(0.5 * n.sigma_ng * dt, 2);
  const double ba = n.sigma_ba_walk * n.sigma_ba_walk * dt;
  const double bg = n.sigma_bg_walk * n.sigma_bg_walk * dt;
  d.segment<3>(0).array() += pos;
  d.segment<3>(3).array() += vel;
  d.segment<4>(6).array() += att;
  d.segment<3>(10).array() += ba;
  d.segment<3>(13).array() += bg;
  return d.asDiagonal();
}

inline ukf::GaussianState initial_state(const geo::WorldFromImu& pose,
                                        const Vec3& velocity,
                                        const VioConfig& cfg) {
  VioState s;
  s.p1 = s.p2 = s.p3 = pose.translation;
  s.q1 = s.q2 = s.q3 = pose.rotation.normalized();
  s.v = velocity;
  VecX d(VioState::kDim);
  d.segment<3>(0).setConstant(cfg.p0_position);
  d.segment<3>(3).setConstant(cfg.p0_velocity);
  d.segment<4>(6).setConstant(cfg.p0_orientation);
  d.segment<3>(10).setConstant(cfg.p0_accel_bias);
  d.segment<3>(13).setConstant(cfg.p0_gyro_bias);
  d.segment<14>(16).setConstant(cfg.p0_old_pose);
  return ukf::GaussianState{s.pack(), MatX(d.asDiagonal())};
}

// Propagate pose 1 through the IMU window and shift the pose window. The
// quaternion norm is preserved exactly (integration acts on the direction,
// the radial scale is carried through), so off-sphere sigma points keep
// their radial spread.
inline VioState transition(const VioState& x,
                           const std::vector<imu::ImuSample>& window,
                           double dt, const VioConfig& cfg) {
  if (!(dt > 0.0)) throw InvalidInput("transition: dt must be > 0");
  Vec3 p = x.p1;
  Vec3 v = x.v;
  Quat q = x.q1;
  if (window.empty()) {
    p += v * dt;  // coast
  } else {
    const double qn = q.norm();
    if (!(qn > 1e-12)) {
      throw NumericalFailure("transition: quaternion norm collapsed");
    }
    Quat qu = q;
    qu.normalize();
    const double h = dt / static_cast<double>(window.size());
    for (const auto& s : window) {
      const Vec3 w = s.gyro_m - x.b_g;
      const Quat q_mid = geo::quat_integrate(qu, w, 0.5 * h);
      const Vec3 a =
          geo::quat_to_dcm(q_mid) * (s.accel_m - x.b_a) + cfg.gravity;
      p += v * h + 0.5 * h * h * a;
      v += a * h;
      qu = geo::quat_integrate(qu, w, h);
    }
    q = qu;
    q.coeffs() *= qn;
  }
  VioState out = x;
  out.p3 = x.p2;
  out.q3 = x.q2;
  out.p2 = x.p1;
  out.q2 = x.q1;
  out.p1 = p;
  out.v = v;
  out.q1 = q;
  return out;
}

namespace detail {

inline geo::Projection window_projection(const Vec3& p, const Quat& q_raw,
                                         const geo::ImuFromCamera& ext) {
  Quat q = q_raw;
  const double n = q.norm();
  if (!(n > 1e-12)) {
    throw NumericalFailure("window pose quaternion norm collapsed");
  }
  q.coeffs() /= n;
  const geo::WorldFromImu world_from_imu{q, p};
  return geo::build_projection_normalized(world_from_imu * ext);
}

// Everything per-state (not per-feature) the transfer chain needs: the
// tensor plus the view-2 projection re-expressed over the view-3 canonical
// frame, so epipolar lines are one matrix-vector product per feature.
struct TransferContext {
  geo::TrifocalTensor tensor;
  Mat34 b2;  // P2 * H(P3)
};

inline TransferContext make_transfer_context(const VioState& s,
                                             const VioConfig& cfg) {
  const geo::Projection P1 = window_projection(s.p1, s.q1, cfg.imu_from_camera);
  const geo::Projection P2 = window_projection(s.p2, s.q2, cfg.imu_from_camera);
  const geo::Projection P3 = window_projection(s.p3, s.q3, cfg.imu_from_camera);
  TransferContext ctx;
  ctx.tensor = geo::trifocal_from_projections(P1, P2, P3);
  ctx.b2 = P2 * geo::detail::canonicalizing_homography(P3);
  return ctx;
}

inline Vec2 transfer_feature(const TransferContext& ctx, const FeatureTriple& f,
                             const geo::CameraIntrinsics& K) {
  const Vec3 x3 = K.inverse_matrix() * f.px3.homogeneous();
  const Vec3 epi_n = ctx.b2.col(3).cross(ctx.b2.leftCols<3>() * x3);
  const geo::ImageLine epi_px = K.inverse_matrix().transpose() * epi_n;
  if (epi_px.head<2>().norm() <= 1e-12) {
    throw DegenerateGeometry("transfer_feature: view-2 match at the epipole");
  }
  const Vec2 dir = geo::line_direction(epi_px);
  const geo::ImageLine l2 = geo::choose_line(f.px2, dir);
  return geo::transfer_point(ctx.tensor, f.px3.homogeneous(), l2, K);
}

}  // namespace detail

struct StackedMeasurement {
  VecX predicted;  // 2M predicted view-1 pixels at the queried state
  VecX measured;   // 2M measured view-1 pixels
  std::vector<FeatureTriple> used;
  int dropped = 0;
  ukf::MeasurementFn h;
};

// Builds the stacked trifocal prediction at state x and a measurement functor
// over the surviving features. Features whose transfer is degenerate at x are
// dropped (counted); inside the functor a sigma point that lands on a
// degeneracy contributes that feature's measured pixel instead, keeping the
// output dimension fixed over all sigma points.
inline StackedMeasurement stack_measurement_model(
    const VioState& x, const std::vector<FeatureTriple>& features,
    const VioConfig& cfg) {
  if (features.empty()) {
    throw InvalidInput("stack_measurement_model: no features");
  }
  const detail::TransferContext ctx = detail::make_transfer_context(x, cfg);
  StackedMeasurement out;
  std::vector<Vec2> preds;
  preds.reserve(features.size());
  for (const auto& f : features) {
    try {
      preds.push_back(detail::transfer_feature(ctx, f, cfg.intrinsics));
      out.used.push_back(f);
    } catch (const DegenerateGeometry&) {
      ++out.dropped;
    }
  }
  if (out.used.empty()) {
    throw DegenerateGeometry("stack_measurement_model: every feature degenerate");
  }
  const Eigen::Index m = static_cast<Eigen::Index>(out.used.size());
  out.predicted.resize(2 * m);
  out.measured.resize(2 * m);
  for (Eigen::Index i = 0; i < m; ++i) {
    out.predicted.segment<2>(2 * i) = preds[static_cast<std::size_t>(i)];
    out.measured.segment<2>(2 * i) = out.used[static_cast<std::size_t>(i)].px1;
  }
  out.h = [used = out.used, measured = out.measured,
           cfg](const VecX& xv) -> VecX {
    VecX z(measured.size());
    const VioState s = VioState::unpack(xv);
    bool have_ctx = true;
    detail::TransferContext c;
    try {
      c = detail::make_transfer_context(s, cfg);
    } catch (const DegenerateGeometry&) {
      have_ctx = false;
    }
    for (std::size_t i = 0; i < used.size(); ++i) {
      const Eigen::Index r = static_cast<Eigen::Index>(2 * i);
      if (have_ctx) {
        try {
          z.segment<2>(r) = detail::transfer_feature(c, used[i], cfg.intrinsics);
          continue;
        } catch (const DegenerateGeometry&) {
        }
      }
      z.segment<2>(r) = measured.segment<2>(r);
    }
    return z;
  };
  return out;
}

// Transfer error in pixels per feature at state s; +inf marks a degenerate
// transfer.
inline std::vector<double> transfer_errors(
    const VioState& s, const std::vector<FeatureTriple>& features,
    const VioConfig& cfg) {
  std::vector<double> err(features.size(),
                          std::numeric_limits<double>::infinity());
  detail::TransferContext ctx;
  try {
    ctx = detail::make_transfer_context(s, cfg);
  } catch (const DegenerateGeometry&) {
    return err;
  }
  for (std::size_t i = 0; i < features.size(); ++i) {
    try {
      const Vec2 pred = detail::transfer_feature(ctx, features[i], cfg.intrinsics);
      err[i] = (pred - features[i].px1).norm();
    } catch (const DegenerateGeometry&) {
    }
  }
  return err;
}

struct RansacResult {
  std::vector<FeatureTriple> inliers;
  bool fallback = false;   // consensus too small, thresholded at the prior
  bool degenerate = false; // fewer than 3 features, passed through
};

// 3-point gating: rotation held at the predicted state, translation of the
// newest pose refit from each sampled triple by a few Gauss-Newton steps on
// the transfer error, consensus scored at theta. Deterministic given seed.
inline RansacResult ransac_gate(const std::vector<FeatureTriple>& features,
                                const VioState& predicted_state,
                                double theta_px, int iterations,
                                std::uint64_t rng_seed, const VioConfig& cfg) {
  RansacResult out;
  if (!(theta_px > 0.0)) throw InvalidInput("ransac_gate: theta must be > 0");
  if (iterations <= 0) throw InvalidInput("ransac_gate: iterations must be > 0");
  const std::size_t n = features.size();
  if (n < 3) {
    log::warn("ransac_gate: fewer than 3 features, passing all through");
    out.inliers = features;
    out.degenerate = true;
    return out;
  }

  const auto count_inliers = [&](const std::vector<double>& e) {
    std::size_t c = 0;
    for (double v : e)
      if (v < theta_px) ++c;
    return c;
  };

  std::mt19937_64 rng(rng_seed);
  std::vector<double> best_errors;
  std::size_t best_count = 0;

  for (int it = 0; it < iterations; ++it) {
    std::size_t idx[3];
    idx[0] = static_cast<std::size_t>(rng() % n);
    do {
      idx[1] = static_cast<std::size_t>(rng() % n);
    } while (idx[1] == idx[0]);
    do {
      idx[2] = static_cast<std::size_t>(rng() % n);
    } while (idx[2] == idx[0] || idx[2] == idx[1]);
    const std::vector<FeatureTriple> sample = {features[idx[0]],
                                               features[idx[1]],
                                               features[idx[2]]};

    // Gauss-Newton on p1 alone, numeric Jacobian.
    VioState cand = predicted_state;
    bool bad = false;
    for (int gn = 0; gn < 5 && !bad; ++gn) {
      VecX r(6);
      try {
        const auto ctx = detail::make_transfer_context(cand, cfg);
        for (int k = 0; k < 3; ++k) {
          r.segment<2>(2 * k) =
              detail::transfer_feature(ctx, sample[k], cfg.intrinsics) -
              sample[k].px1;
        }
      } catch (const DegenerateGeometry&) {
        bad = true;
        break;
      }
      MatX J(6, 3);
      const double step = 1e-5;
      for (int c = 0; c < 3 && !bad; ++c) {
        VioState plus = cand, minus = cand;
        plus.p1[c] += step;
        minus.p1[c] -= step;
        try {
          const auto cp = detail::make_transfer_context(plus, cfg);
          const auto cm = detail::make_transfer_context(minus, cfg);
          for (int k = 0; k < 3; ++k) {
            const Vec2 fp = detail::transfer_feature(cp, sample[k], cfg.intrinsics);
            const Vec2 fm = detail::transfer_feature(cm, sample[k], cfg.intrinsics);
            J.block<2, 1>(2 * k, c) = (fp - fm) / (2.0 * step);
          }
        } catch (const DegenerateGeometry&) {
          bad = true;
        }
      }
      if (bad) break;
      const Mat3 JtJ = J.transpose() * J + 1e-9 * Mat3::Identity();
      const Vec3 delta = JtJ.ldlt().solve(-J.transpose() * r);
      if (!delta.allFinite()) {
        bad = true;
        break;
      }
      cand.p1 += delta;
      if (delta.norm() < 1e-10) break;
    }
    if (bad) continue;

    const auto errors = transfer_errors(cand, features, cfg);
    const std::size_t c = count_inliers(errors);
    if (c > best_count) {
      best_count = c;
      best_errors = errors;
    }
  }

  const double min_count = cfg.ransac_min_inlier_ratio * static_cast<double>(n);
  if (best_count == 0 || static_cast<double>(best_count) < min_count) {
    // No usable consensus: gate against the prediction itself.
    out.fallback = true;
    best_errors = transfer_errors(predicted_state, features, cfg);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (best_errors[i] < theta_px) out.inliers.push_back(features[i]);
  }
  return out;
}

struct StepDiagnostics {
  int features_in = 0;
  int inliers = 0;
  int dropped = 0;
  double tau = 0.0;
  double mean_confidence = 0.0;
  bool updated = false;
  bool ransac_fallback = false;
};

// One Algorithm-1 step: UKF predict through the IMU window, 3-point gating,
// confidence inference, confidence-weighted UKF update.
inline ukf::GaussianState vio_step(const ukf::GaussianState& x,
                                   const std::vector<imu::ImuSample>& window,
                                   double dt,
                                   const std::vector<FeatureTriple>& features,
                                   const VioConfig& cfg, std::uint64_t seed,
                                   StepDiagnostics* diag_out = nullptr) {
  StepDiagnostics diag;
  diag.features_in = static_cast<int>(features.size());

  ukf::UkfOptions opt;
  opt.sigma = cfg.sigma;
  opt.quat_blocks = quaternion_blocks();

  const MatX& Q = cfg.process_noise;
  if (Q.rows() != VioState::kDim || Q.cols() != VioState::kDim) {
    throw InvalidInput("vio_step: config process noise must be 30x30");
  }
  const ukf::TransitionFn f = [&](const VecX& xv, const VecX&) -> VecX {
    return transition(VioState::unpack(xv), window, dt, cfg).pack();
  };
  ukf::GaussianState pred = ukf_predict(x, f, Q, VecX(), opt);

  // The forward-dominance ratio is purely kinematic, so the diagnostics
  // carry it on every frame, updated or not.
  {
    const VioState pm0 = VioState::unpack(pred.mean);
    const Vec3 gyro = window.empty() ? Vec3::Zero() : window.back().gyro_m;
    diag.tau = conf::forward_motion_ratio(pm0.v, gyro);
  }

  if (features.empty()) {
    if (diag_out) *diag_out = diag;
    return pred;
  }

  const VioState pm = VioState::unpack(pred.mean);
  const RansacResult gate =
      ransac_gate(features, pm, cfg.ransac_threshold_px, cfg.ransac_iterations,
                  seed, cfg);
  diag.ransac_fallback = gate.fallback;
  if (gate.inliers.empty()) {
    if (diag_out) *diag_out = diag;
    return pred;
  }

  StackedMeasurement stacked;
  try {
    stacked = stack_measurement_model(pm, gate.inliers, cfg);
  } catch (const DegenerateGeometry&) {
    if (diag_out) *diag_out = diag;
    return pred;
  }
  diag.inliers = static_cast<int>(stacked.used.size());
  diag.dropped = stacked.dropped;

  const Eigen::Index m2 = stacked.measured.size();
  ukf::ConfidenceMatrix c_f = ukf::ConfidenceMatrix::identity(m2);
  if (cfg.mode != ConfidenceMode::off) {
    const Vec3 cam_v = conf::camera_frame_velocity(
        pm.v, pm.q1.normalized(), cfg.imu_from_camera.rotation);
    const Vec3 gyro = window.empty() ? Vec3::Zero() : window.back().gyro_m;
    const double tau = conf::forward_motion_ratio(pm.v, gyro);
    std::vector<double> c_t(stacked.used.size());
    for (std::size_t i = 0; i < stacked.used.size(); ++i) {
      c_t[i] = conf::angle_confidence(
          cam_v, cfg.intrinsics.bearing(stacked.used[i].px1));
    }
    std::vector<double> c = conf::combine(c_t, tau);
    diag.tau = tau;
    double acc = 0.0;
    for (double v : c) acc += v;
    diag.mean_confidence = c.empty() ? 0.0 : acc / static_cast<double>(c.size());
    if (cfg.mode == ConfidenceMode::inverted) {
      const double c_max = *std::max_element(c.begin(), c.end());
      for (double& v : c) v = c_max - v;
    }
    c_f = conf::build_confidence_matrix(c, cfg.confidence_floor,
                                        cfg.confidence_cap);
  }

  const MatX R =
      cfg.sigma_px * cfg.sigma_px * MatX::Identity(m2, m2);
  ukf::GaussianState post =
      ukf_update(pred, stacked.h, stacked.measured, R, c_f, opt);
  diag.updated = true;
  if (diag_out) *diag_out = diag;
  return post;
}

// Bucketed feature selection: the image is split into a grid keyed on the
// newest pixel; tracks in each cell are ranked (longer track first, then
// lower id) and cells are drained round-robin until max_features. Output
// order is the round-robin order, so selection is deterministic.
inline std::vector<FeatureTriple> select_features(
    const std::vector<FeatureTriple>& features,
    const std::map<std::int64_t, int>& track_lengths, const VioConfig& cfg) {
  std::vector<std::vector<const FeatureTriple*>> cells(
      static_cast<std::size_t>(cfg.bucket_cols) * cfg.bucket_rows);
  for (const auto& f : features) {
    int col = static_cast<int>(f.px1.x() / cfg.image_width * cfg.bucket_cols);
    int row = static_cast<int>(f.px1.y() / cfg.image_height * cfg.bucket_rows);
    col = std::clamp(col, 0, cfg.bucket_cols - 1);
    row = std::clamp(row, 0, cfg.bucket_rows - 1);
    cells[static_cast<std::size_t>(row) * cfg.bucket_cols + col].push_back(&f);
  }
  const auto length_of = [&](const FeatureTriple* f) {
    const auto it = track_lengths.find(f->track_id);
    return it == track_lengths.end() ? 0 : it->second;
  };
  for (auto& cell : cells) {
    std::sort(cell.begin(), cell.end(),
              [&](const FeatureTriple* a, const FeatureTriple* b) {
                const int la = length_of(a), lb = length_of(b);
                if (la != lb) return la > lb;
                return a->track_id < b->track_id;
              });
  }
  std::vector<FeatureTriple> out;
  out.reserve(std::min<std::size_t>(features.size(),
                                    static_cast<std::size_t>(cfg.max_features)));
  for (std::size_t rank = 0;
       out.size() < static_cast<std::size_t>(cfg.max_features); ++rank) {
    bool any = false;
    for (const auto& cell : cells) {
      if (rank < cell.size()) {
        any = true;
        out.push_back(*cell[rank]);
        if (out.size() >= static_cast<std::size_t>(cfg.max_features)) break;
      }
    }
    if (!any) break;
  }
  return out;
}

struct TrackObservation {
  std::int64_t track_id = 0;
  Vec2 pixel = Vec2::Zero();
};

struct FrameResult {
  int frame_index = 0;
  double timestamp = 0.0;
  geo::WorldFromImu pose;  // newest window pose
  Vec3 velocity = Vec3::Zero();
  StepDiagnostics diag{};
};

// Frame-by-frame driver: owns the filter state, the two-frame observation
// history that forms triples, and consecutive track lengths for bucketing.
// The first frame only initializes; updates begin once a full triple exists
// (third frame at the earliest).
class VioPipeline {
 public:
  VioPipeline(VioConfig cfg, const geo::WorldFromImu& initial_pose,
              const Vec3& initial_velocity, std::uint64_t seed)
      : cfg_(std::move(cfg)), seed_(seed) {
    if (cfg_.process_noise.size() == 0) {
      cfg_.process_noise =
          default_process_noise(cfg_.imu_noise, cfg_.nominal_frame_dt);
    }
    cfg_.validate();
    state_ = initial_state(initial_pose, initial_velocity, cfg_);
  }

  const VioConfig& config() const { return cfg_; }
  const ukf::GaussianState& state() const { return state_; }
  VioState current() const { return VioState::unpack(state_.mean); }

  FrameResult process_frame(double timestamp,
                            const std::vector<TrackObservation>& obs,
                            const std::vector<imu::ImuSample>& imu_window) {
    FrameResult res;
    res.frame_index = frame_;
    res.timestamp = timestamp;

    if (frame_ > 0) {
      if (!(timestamp > last_time_)) {
        throw InvalidInput("process_frame: timestamps must increase");
      }
      const double dt = timestamp - last_time_;
      const std::vector<FeatureTriple> triples = make_triples(obs);
      const std::vector<FeatureTriple> selected =
          select_features(triples, lengths_, cfg_);
      state_ = vio_step(state_, imu_window, dt, selected, cfg_,
                        seed_ + static_cast<std::uint64_t>(frame_), &res.diag);
    }

    advance_history(obs);
    last_time_ = timestamp;
    ++frame_;

    const VioState s = VioState::unpack(state_.mean);
    res.pose = geo::WorldFromImu{s.q1.normalized(), s.p1};
    res.velocity = s.v;
    return res;
  }

 private:
  std::vector<FeatureTriple> make_triples(
      const std::vector<TrackObservation>& obs) const {
    std::map<std::int64_t, FeatureTriple> by_id;
    for (const auto& o : obs) {
      const auto i2 = prev_.find(o.track_id);
      if (i2 == prev_.end()) continue;
      const auto i3 = prev2_.find(o.track_id);
      if (i3 == prev2_.end()) continue;
      FeatureTriple t;
      t.track_id = o.track_id;
      t.px1 = o.pixel;
      t.px2 = i2->second;
      t.px3 = i3->second;
      by_id.emplace(o.track_id, t);
    }
    std::vector<FeatureTriple> out;
    out.reserve(by_id.size());
    for (const auto& [id, t] : by_id) out.push_back(t);
    return out;
  }

  void advance_history(const std::vector<TrackObservation>& obs) {
    std::map<std::int64_t, Vec2> current;
    std::map<std::int64_t, int> lengths;
    for (const auto& o : obs) {
      current[o.track_id] = o.pixel;
      const auto it = lengths_.find(o.track_id);
      const bool continued = prev_.count(o.track_id) > 0;
      lengths[o.track_id] =
          continued && it != lengths_.end() ? it->second + 1 : 1;
    }
    prev2_ = std::move(prev_);
    prev_ = std::move(current);
    lengths_ = std::move(lengths);
  }

  VioConfig cfg_;
  ukf::GaussianState state_;
  std::uint64_t seed_ = 0;
  int frame_ = 0;
  double last_time_ = 0.0;
  std::map<std::int64_t, Vec2> prev_;   // frame k-1 observations
  std::map<std::int64_t, Vec2> prev2_;  // frame k-2 observations
  std::map<std::int64_t, int> lengths_;
};

}  // namespace vio
}  // namespace tvio
