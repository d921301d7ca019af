#pragma once

// Strapdown IMU mechanization and its inverse (measurement synthesis),
// plus the Brownian bias model. All quantities SI: m/s^2, rad/s, seconds.
//
// Mechanization recovers world-frame kinematics from body-frame readings:
//   world_accel = R(q) (a_m - b_a) + g_W,   body_rate = g_m - b_g.
// Synthesis is the exact inverse, optionally with additive i.i.d. Gaussian
// noise per axis. Noise always goes through an explicit caller-owned RNG so
// streams are reproducible from a seed.

#include <cmath>
#include <random>
#include <vector>

#include "tvio/error.hpp"
#include "tvio/geometry.hpp"
#include "tvio/types.hpp"

namespace tvio {
namespace imu {

struct ImuSample {
  double timestamp = 0.0;  // seconds
  Vec3 accel_m = Vec3::Zero();  // specific force reading a_m, body frame
  Vec3 gyro_m = Vec3::Zero();   // angular rate reading g_m, body frame
};

struct ImuBias {
  Vec3 accel_bias = Vec3::Zero();  // b_a
  Vec3 gyro_bias = Vec3::Zero();   // b_g
};

struct ImuNoiseSpec {
  double sigma_na = 0.0;       // accel white noise, m/s^2
  double sigma_ng = 0.0;       // gyro white noise, rad/s
  double sigma_ba_walk = 0.0;  // accel bias random walk density, m/s^2/sqrt(s)
  double sigma_bg_walk = 0.0;  // gyro bias random walk density, rad/s/sqrt(s)

  void validate() const {
    if (sigma_na < 0.0 || sigma_ng < 0.0 || sigma_ba_walk < 0.0 ||
        sigma_bg_walk < 0.0) {
      throw InvalidInput("ImuNoiseSpec: noise densities must be >= 0");
    }
  }
};

// Default world gravity; z-up world frame.
inline Vec3 standard_gravity() { return Vec3(0.0, 0.0, -9.80665); }

struct MechanizedRates {
  Vec3 world_accel = Vec3::Zero();
  Vec3 body_rate = Vec3::Zero();
};

// Bias-corrected readings rotated into the world frame. q maps body -> world.
// Noise is not handled here; in the filter it enters through the process
// covariance.
inline MechanizedRates mechanize(const Quat& q, const ImuSample& sample,
                                 const ImuBias& bias, const Vec3& gravity) {
  const Mat3 R = geo::quat_to_dcm(q);
  MechanizedRates out;
  out.world_accel = R * (sample.accel_m - bias.accel_bias) + gravity;
  out.body_rate = sample.gyro_m - bias.gyro_bias;
  return out;
}

// Exact inverse of mechanize for zero noise:
//   a_m = R(q)^T (a_true - g_W) + b_a + n_a,   g_m = w_true + b_g + n_g.
// Same spec with all-zero sigmas gives a noiseless sample.
inline ImuSample synthesize(const Vec3& true_world_accel,
                            const Vec3& true_body_rate, const Quat& q,
                            const ImuBias& bias, const Vec3& gravity,
                            const ImuNoiseSpec& noise, std::mt19937_64& rng,
                            double timestamp = 0.0) {
  noise.validate();
  const Mat3 R = geo::quat_to_dcm(q);
  ImuSample s;
  s.timestamp = timestamp;
  s.accel_m = R.transpose() * (true_world_accel - gravity) + bias.accel_bias;
  s.gyro_m = true_body_rate + bias.gyro_bias;
  std::normal_distribution<double> unit(0.0, 1.0);
  // Draw in a fixed axis order even when a sigma is zero, so toggling one
  // channel's noise does not reshuffle another's stream.
  for (int i = 0; i < 3; ++i) s.accel_m[i] += noise.sigma_na * unit(rng);
  for (int i = 0; i < 3; ++i) s.gyro_m[i] += noise.sigma_ng * unit(rng);
  return s;
}

// Brownian bias transition. The mean is the identity; variance grows as
// dt * sigma^2. Pass rng = nullptr for the deterministic (filter-mean) form.
inline ImuBias propagate_bias(const ImuBias& bias, double dt,
                              const ImuNoiseSpec& walk,
                              std::mt19937_64* rng = nullptr) {
  if (dt < 0.0) throw InvalidInput("propagate_bias: dt must be >= 0");
  walk.validate();
  ImuBias out = bias;
  if (rng == nullptr || dt == 0.0) return out;
  const double sa = walk.sigma_ba_walk * std::sqrt(dt);
  const double sg = walk.sigma_bg_walk * std::sqrt(dt);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 3; ++i) out.accel_bias[i] += sa * unit(rng[0]);
  for (int i = 0; i < 3; ++i) out.gyro_bias[i] += sg * unit(rng[0]);
  return out;
}

// Strictly increasing timestamps; throws otherwise. Used by readers before
// handing a stream to the pipeline.
inline void require_monotonic(const std::vector<ImuSample>& stream) {
  for (std::size_t i = 1; i < stream.size(); ++i) {
    if (!(stream[i].timestamp > stream[i - 1].timestamp)) {
      throw InvalidInput("imu stream: timestamps must be strictly increasing");
    }
  }
}

}  // namespace imu
}  // namespace tvio
