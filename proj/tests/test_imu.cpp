#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "support/test_rigs.hpp"
#include "tvio/imu.hpp"

using namespace tvio;
using imu::ImuBias;
using imu::ImuNoiseSpec;
using imu::ImuSample;

TEST_CASE("mechanize cancels gravity for a stationary level IMU", "[imu]") {
  const Vec3 g = imu::standard_gravity();
  ImuSample s;
  s.accel_m = -g;  // body frame == world frame, accelerometer reads -g
  const auto rates = imu::mechanize(Quat::Identity(), s, ImuBias{}, g);
  REQUIRE(rates.world_accel.norm() < 1e-15);
  REQUIRE(rates.body_rate.norm() < 1e-15);
}

TEST_CASE("mechanize cancels a bias equal to the reading", "[imu]") {
  ImuSample s;
  s.accel_m = Vec3(1.2, -0.4, 9.1);
  s.gyro_m = Vec3(0.1, 0.2, -0.3);
  ImuBias b;
  b.accel_bias = s.accel_m;
  b.gyro_bias = s.gyro_m;
  const auto rates = imu::mechanize(Quat::Identity(), s, b, Vec3::Zero());
  REQUIRE(rates.world_accel.norm() < 1e-15);
  REQUIRE(rates.body_rate.norm() < 1e-15);
}

TEST_CASE("synthesize of a hover reads minus gravity in the body frame",
          "[imu]") {
  std::mt19937_64 rng(7);
  const Vec3 g = imu::standard_gravity();
  const Quat q = testsupport::random_unit_quat(rng);
  const auto s = imu::synthesize(Vec3::Zero(), Vec3::Zero(), q, ImuBias{}, g,
                                 ImuNoiseSpec{}, rng);
  const Vec3 expected = geo::quat_to_dcm(q).transpose() * (-g);
  REQUIRE((s.accel_m - expected).norm() < 1e-14);
  REQUIRE(s.gyro_m.norm() == 0.0);
}

TEST_CASE("synthesize then mechanize round-trips true kinematics", "[imu]") {
  std::mt19937_64 rng(42);
  double worst_a = 0.0, worst_w = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const Quat q = testsupport::random_unit_quat(rng);
    const Vec3 a_true = testsupport::random_vec3(rng, 20.0);
    const Vec3 w_true = testsupport::random_vec3(rng, 5.0);
    ImuBias bias;
    bias.accel_bias = testsupport::random_vec3(rng, 0.5);
    bias.gyro_bias = testsupport::random_vec3(rng, 0.05);
    const Vec3 g = imu::standard_gravity();
    const auto s =
        imu::synthesize(a_true, w_true, q, bias, g, ImuNoiseSpec{}, rng);
    const auto rates = imu::mechanize(q, s, bias, g);
    worst_a = std::max(worst_a, (rates.world_accel - a_true).norm());
    worst_w = std::max(worst_w, (rates.body_rate - w_true).norm());
  }
  REQUIRE(worst_a < 1e-10);
  REQUIRE(worst_w < 1e-10);
}

TEST_CASE("noise std matches the requested sigma within 5%", "[imu]") {
  std::mt19937_64 rng(123);
  ImuNoiseSpec spec;
  spec.sigma_na = 0.25;
  spec.sigma_ng = 0.26 * M_PI / 180.0;
  const int n = 100000;
  double sa = 0.0, saa = 0.0, sg = 0.0, sgg = 0.0;
  for (int k = 0; k < n; ++k) {
    const auto s = imu::synthesize(Vec3::Zero(), Vec3::Zero(),
                                   Quat::Identity(), ImuBias{}, Vec3::Zero(),
                                   spec, rng);
    sa += s.accel_m.x();
    saa += s.accel_m.x() * s.accel_m.x();
    sg += s.gyro_m.z();
    sgg += s.gyro_m.z() * s.gyro_m.z();
  }
  const double std_a = std::sqrt(saa / n - (sa / n) * (sa / n));
  const double std_g = std::sqrt(sgg / n - (sg / n) * (sg / n));
  REQUIRE(std_a > 0.95 * spec.sigma_na);
  REQUIRE(std_a < 1.05 * spec.sigma_na);
  REQUIRE(std_g > 0.95 * spec.sigma_ng);
  REQUIRE(std_g < 1.05 * spec.sigma_ng);
  // Mean preserved: |mean| < 4 sigma / sqrt(N).
  REQUIRE(std::abs(sa / n) < 4.0 * spec.sigma_na / std::sqrt(double(n)));
  REQUIRE(std::abs(sg / n) < 4.0 * spec.sigma_ng / std::sqrt(double(n)));
}

TEST_CASE("same seed gives bit-identical streams", "[imu]") {
  ImuNoiseSpec spec;
  spec.sigma_na = 0.25;
  spec.sigma_ng = 0.01;
  auto make = [&] {
    std::mt19937_64 rng(999);
    std::vector<ImuSample> out;
    for (int k = 0; k < 200; ++k) {
      out.push_back(imu::synthesize(Vec3(0, 0, 1), Vec3(0.1, 0, 0),
                                    Quat::Identity(), ImuBias{},
                                    imu::standard_gravity(), spec, rng,
                                    0.01 * k));
    }
    return out;
  };
  const auto a = make();
  const auto b = make();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].accel_m == b[i].accel_m);
    REQUIRE(a[i].gyro_m == b[i].gyro_m);
    REQUIRE(a[i].timestamp == b[i].timestamp);
  }
}

TEST_CASE("propagate_bias is the identity without an rng", "[imu]") {
  ImuBias b;
  b.accel_bias = Vec3(0.1, -0.2, 0.3);
  b.gyro_bias = Vec3(0.01, 0.02, -0.03);
  ImuNoiseSpec walk;
  walk.sigma_ba_walk = 1e-3;
  walk.sigma_bg_walk = 1e-4;
  const auto out = imu::propagate_bias(b, 0.5, walk, nullptr);
  REQUIRE(out.accel_bias == b.accel_bias);
  REQUIRE(out.gyro_bias == b.gyro_bias);
}

TEST_CASE("propagate_bias with zero densities ignores the rng", "[imu]") {
  std::mt19937_64 rng(5);
  ImuBias b;
  b.accel_bias = Vec3(1, 2, 3);
  const auto out = imu::propagate_bias(b, 1.0, ImuNoiseSpec{}, &rng);
  REQUIRE(out.accel_bias == b.accel_bias);
  REQUIRE(out.gyro_bias == b.gyro_bias);
}

TEST_CASE("sampled bias walk variance follows N*dt*sigma^2", "[imu]") {
  // Brownian motion: after N independent steps of length dt the
  // per-axis variance is N*dt*sigma^2.
  std::mt19937_64 rng(31);
  ImuNoiseSpec walk;
  walk.sigma_ba_walk = 1e-2;
  const double dt = 0.1;
  const int steps = 50;
  const int trials = 10000;
  double sum = 0.0, sumsq = 0.0;
  for (int t = 0; t < trials; ++t) {
    ImuBias b;
    for (int k = 0; k < steps; ++k) b = imu::propagate_bias(b, dt, walk, &rng);
    sum += b.accel_bias.x();
    sumsq += b.accel_bias.x() * b.accel_bias.x();
  }
  const double var = sumsq / trials - (sum / trials) * (sum / trials);
  const double expected = steps * dt * walk.sigma_ba_walk * walk.sigma_ba_walk;
  REQUIRE(var > 0.9 * expected);
  REQUIRE(var < 1.1 * expected);
}

TEST_CASE("propagate_bias rejects negative dt", "[imu]") {
  REQUIRE_THROWS_AS(imu::propagate_bias(ImuBias{}, -0.1, ImuNoiseSpec{}),
                    InvalidInput);
}

TEST_CASE("negative noise densities are rejected", "[imu]") {
  ImuNoiseSpec bad;
  bad.sigma_na = -1.0;
  std::mt19937_64 rng(1);
  REQUIRE_THROWS_AS(imu::synthesize(Vec3::Zero(), Vec3::Zero(),
                                    Quat::Identity(), ImuBias{}, Vec3::Zero(),
                                    bad, rng),
                    InvalidInput);
}

TEST_CASE("require_monotonic flags non-increasing timestamps", "[imu]") {
  std::vector<ImuSample> s(3);
  s[0].timestamp = 0.0;
  s[1].timestamp = 0.1;
  s[2].timestamp = 0.1;
  REQUIRE_THROWS_AS(imu::require_monotonic(s), InvalidInput);
  s[2].timestamp = 0.2;
  REQUIRE_NOTHROW(imu::require_monotonic(s));
}
