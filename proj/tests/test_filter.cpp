#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "support/linear_kf.hpp"
#include "support/test_rigs.hpp"
#include "tvio/filter.hpp"

using namespace tvio;
using ukf::ConfidenceMatrix;
using ukf::GaussianState;
using ukf::SigmaParams;
using ukf::UkfOptions;

namespace {

MatX random_psd(std::mt19937_64& rng, int n, double floor) {
  std::normal_distribution<double> g(0.0, 1.0);
  MatX A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = g(rng);
  return A * A.transpose() + floor * MatX::Identity(n, n);
}

VecX random_vec(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> g(0.0, 1.0);
  VecX v(n);
  for (int i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

double min_eigenvalue(const MatX& P) {
  Eigen::SelfAdjointEigenSolver<MatX> es(P);
  return es.eigenvalues().minCoeff();
}

}  // namespace

TEST_CASE("sigma weights: mean weights sum to one", "[filter]") {
  for (double alpha : {1e-3, 1e-2, 0.5, 1.0}) {
    for (double kappa : {0.0, 3.0}) {
      for (int n : {1, 4, 30}) {
        SigmaParams p;
        p.alpha = alpha;
        p.kappa = kappa;
        const auto w = ukf::sigma_weights(n, p);
        const double sum = w.wm0 + 2.0 * n * w.wi;
        REQUIRE(std::abs(sum - 1.0) < 1e-12);
        REQUIRE(w.gamma > 0.0);
      }
    }
  }
  SigmaParams degenerate;
  degenerate.alpha = 0.0;
  REQUIRE_THROWS_AS(ukf::sigma_weights(4, degenerate), InvalidInput);
}

TEST_CASE("identity transition with zero process noise is a no-op",
          "[filter]") {
  std::mt19937_64 rng(11);
  GaussianState s;
  s.mean = random_vec(rng, 3);
  s.covariance = random_psd(rng, 3, 0.1);
  const auto f = [](const VecX& x, const VecX&) { return x; };
  const auto out =
      ukf::ukf_predict(s, f, MatX::Zero(3, 3), VecX(), UkfOptions{});
  REQUIRE((out.mean - s.mean).norm() < 1e-10);
  REQUIRE((out.covariance - s.covariance).norm() < 1e-10);
}

TEST_CASE("linear system tracks the closed-form Kalman filter for 100 steps",
          "[filter]") {
  std::mt19937_64 rng(2024);
  const int n = 4, m = 2;

  testsupport::LinearKf kf;
  kf.A = MatX(n, n);
  kf.A << 1.0, 0.1, 0.0, 0.0,  //
      0.0, 0.95, 0.0, 0.0,     //
      0.0, 0.0, 1.0, 0.1,      //
      0.0, 0.0, 0.0, 0.95;
  kf.Q = 0.01 * MatX::Identity(n, n);
  kf.H = MatX(m, n);
  kf.H << 1.0, 0.0, 0.5, 0.0,  //
      0.0, 0.0, 1.0, 0.2;
  kf.R = 0.1 * MatX::Identity(m, m);

  VecX kx = random_vec(rng, n);
  MatX kP = random_psd(rng, n, 0.5);
  GaussianState us{kx, kP};

  const auto f = [&](const VecX& x, const VecX&) -> VecX { return kf.A * x; };
  const auto h = [&](const VecX& x) -> VecX { return kf.H * x; };
  const auto cf = ConfidenceMatrix::identity(m);

  double worst_mean = 0.0, worst_cov = 0.0;
  for (int step = 0; step < 100; ++step) {
    kf.predict(kx, kP);
    us = ukf::ukf_predict(us, f, kf.Q, VecX(), UkfOptions{});
    const VecX z = kf.H * kx + random_vec(rng, m);
    kf.update(kx, kP, z);
    us = ukf::ukf_update(us, h, z, kf.R, cf, UkfOptions{});
    worst_mean = std::max(worst_mean, (us.mean - kx).norm());
    worst_cov = std::max(worst_cov, (us.covariance - kP).norm());
  }
  REQUIRE(worst_mean < 1e-8);
  REQUIRE(worst_cov < 1e-8);
}

TEST_CASE("quaternion block stays unit through a rotating transition",
          "[filter]") {
  GaussianState s;
  s.mean = VecX(4);
  s.mean << 1.0, 0.0, 0.0, 0.0;
  s.covariance = 1e-6 * MatX::Identity(4, 4);
  const Quat dq(Eigen::AngleAxisd(0.05, Vec3::UnitZ()));
  const auto f = [&](const VecX& x, const VecX&) -> VecX {
    Quat q(x[0], x[1], x[2], x[3]);
    q.normalize();
    const Quat out = (q * dq).normalized();
    VecX y(4);
    y << out.w(), out.x(), out.y(), out.z();
    return y;
  };
  UkfOptions opt;
  opt.quat_blocks = {0};
  GaussianState out = s;
  for (int k = 0; k < 20; ++k) {
    out = ukf::ukf_predict(out, f, 1e-9 * MatX::Identity(4, 4), VecX(), opt);
    REQUIRE(std::abs(out.mean.segment<4>(0).norm() - 1.0) < 1e-9);
  }
  // 20 steps of 0.05 rad about z.
  const Quat q(out.mean[0], out.mean[1], out.mean[2], out.mean[3]);
  const double angle = 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
  REQUIRE(std::abs(angle - 1.0) < 1e-3);
}

TEST_CASE("scalar update matches hand KF algebra", "[filter]") {
  GaussianState s;
  s.mean = VecX::Constant(1, 1.0);
  s.covariance = MatX::Constant(1, 1, 4.0);
  const auto h = [](const VecX& x) { return x; };
  const VecX z = VecX::Constant(1, 3.0);
  const MatX R = MatX::Constant(1, 1, 2.0);
  const auto out =
      ukf::ukf_update(s, h, z, R, ConfidenceMatrix::identity(1), UkfOptions{});
  // K = 4/6, mean = 1 + K*2 = 7/3, P = 4 - K*6*K = 4/3.
  REQUIRE(std::abs(out.mean[0] - 7.0 / 3.0) < 1e-9);
  REQUIRE(std::abs(out.covariance(0, 0) - 4.0 / 3.0) < 1e-9);
}

TEST_CASE("unit block scales reproduce the identity confidence exactly",
          "[filter]") {
  std::mt19937_64 rng(3);
  GaussianState s;
  s.mean = random_vec(rng, 4);
  s.covariance = random_psd(rng, 4, 0.2);
  const MatX H = MatX::Random(2, 4);
  const auto h = [&](const VecX& x) -> VecX { return H * x; };
  const VecX z = random_vec(rng, 2);
  const MatX R = random_psd(rng, 2, 0.05);
  const auto a =
      ukf::ukf_update(s, h, z, R, ConfidenceMatrix::identity(2), UkfOptions{});
  const auto b = ukf::ukf_update(
      s, h, z, R, ConfidenceMatrix::from_block_scales({1.0}), UkfOptions{});
  REQUIRE(a.mean == b.mean);
  REQUIRE(a.covariance == b.covariance);
}

TEST_CASE("saturated confidence leaves the prior untouched", "[filter]") {
  std::mt19937_64 rng(5);
  GaussianState s;
  s.mean = random_vec(rng, 4);
  s.covariance = random_psd(rng, 4, 0.2);
  const MatX H = MatX::Random(2, 4);
  const auto h = [&](const VecX& x) -> VecX { return H * x; };
  const VecX z = random_vec(rng, 2) * 10.0;
  const MatX R = 0.1 * MatX::Identity(2, 2);
  const auto out = ukf::ukf_update(
      s, h, z, R, ConfidenceMatrix::from_block_scales({1e12}), UkfOptions{});
  REQUIRE((out.mean - s.mean).norm() / s.mean.norm() < 1e-6);
  REQUIRE((out.covariance - s.covariance).norm() / s.covariance.norm() < 1e-6);
}

TEST_CASE("block scales are capped at 1e12", "[filter]") {
  const auto c = ConfidenceMatrix::from_block_scales({1e15, 2.0});
  REQUIRE(c.diag.size() == 4);
  REQUIRE(c.diag[0] == 1e12);
  REQUIRE(c.diag[1] == 1e12);
  REQUIRE(c.diag[2] == 2.0);
}

TEST_CASE("update never increases the covariance trace with unit confidence",
          "[filter]") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 4, m = 3;
    GaussianState s;
    s.mean = random_vec(rng, n);
    s.covariance = random_psd(rng, n, 0.2);
    const MatX H = MatX::NullaryExpr(
        m, n, [&](Eigen::Index, Eigen::Index) { return random_vec(rng, 1)[0]; });
    const auto h = [&](const VecX& x) -> VecX { return H * x; };
    const VecX z = random_vec(rng, m);
    const MatX R = random_psd(rng, m, 0.1);
    const auto out = ukf::ukf_update(s, h, z, R, ConfidenceMatrix::identity(m),
                                     UkfOptions{});
    REQUIRE(out.covariance.trace() <= s.covariance.trace() + 1e-9);
    // Output symmetric PSD.
    REQUIRE((out.covariance - out.covariance.transpose()).norm() < 1e-10);
    REQUIRE(min_eigenvalue(out.covariance) >= -1e-9);
  }
}

TEST_CASE("inflating confidence pulls the posterior toward the prior",
          "[filter]") {
  GaussianState s;
  s.mean = VecX::Zero(1);
  s.covariance = MatX::Identity(1, 1);
  const auto h = [](const VecX& x) { return x; };
  const VecX z = VecX::Constant(1, 2.0);
  const MatX R = MatX::Identity(1, 1);
  double prev = std::numeric_limits<double>::infinity();
  for (double c : {0.1, 1.0, 5.0, 50.0, 1000.0}) {
    const auto out = ukf::ukf_update(
        s, h, z, R, ConfidenceMatrix::from_block_scales({c}, 1), UkfOptions{});
    const double pull = std::abs(out.mean[0] - s.mean[0]);
    REQUIRE(pull < prev);
    prev = pull;
  }
}

TEST_CASE("rank-deficient covariance goes through the jitter retry",
          "[filter]") {
  const Vec3 v(1.0, 2.0, -1.0);
  GaussianState s;
  s.mean = VecX::Zero(3);
  s.covariance = v * v.transpose();
  const auto f = [](const VecX& x, const VecX&) { return x; };
  GaussianState out;
  REQUIRE_NOTHROW(out = ukf::ukf_predict(s, f, MatX::Zero(3, 3), VecX(),
                                         UkfOptions{}));
  REQUIRE((out.covariance - s.covariance).norm() < 1e-9);
}

TEST_CASE("indefinite covariance raises a numerical failure", "[filter]") {
  GaussianState s;
  s.mean = VecX::Zero(2);
  s.covariance = MatX::Zero(2, 2);
  s.covariance(0, 0) = 1.0;
  s.covariance(1, 1) = -0.5;
  const auto f = [](const VecX& x, const VecX&) { return x; };
  REQUIRE_THROWS_AS(
      ukf::ukf_predict(s, f, MatX::Zero(2, 2), VecX(), UkfOptions{}),
      NumericalFailure);
}

TEST_CASE("non-finite measurement noise raises a numerical failure",
          "[filter]") {
  GaussianState s;
  s.mean = VecX::Zero(1);
  s.covariance = MatX::Identity(1, 1);
  const auto h = [](const VecX& x) { return x; };
  MatX R = MatX::Identity(1, 1);
  R(0, 0) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(ukf::ukf_update(s, h, VecX::Zero(1), R,
                                    ConfidenceMatrix::identity(1),
                                    UkfOptions{}),
                    NumericalFailure);
}

TEST_CASE("confidence matrix validation", "[filter]") {
  REQUIRE_THROWS_AS(ConfidenceMatrix::from_block_scales({-1.0}), InvalidInput);
  GaussianState s;
  s.mean = VecX::Zero(2);
  s.covariance = MatX::Identity(2, 2);
  const auto h = [](const VecX& x) { return x; };
  REQUIRE_THROWS_AS(
      ukf::ukf_update(s, h, VecX::Zero(2), MatX::Identity(2, 2),
                      ConfidenceMatrix::identity(3), UkfOptions{}),
      InvalidInput);
}

TEST_CASE("dimension mismatches are rejected", "[filter]") {
  GaussianState s;
  s.mean = VecX::Zero(2);
  s.covariance = MatX::Identity(2, 2);
  const auto f = [](const VecX& x, const VecX&) { return x; };
  REQUIRE_THROWS_AS(
      ukf::ukf_predict(s, f, MatX::Identity(3, 3), VecX(), UkfOptions{}),
      InvalidInput);
  const auto h = [](const VecX& x) { return x; };
  REQUIRE_THROWS_AS(
      ukf::ukf_update(s, h, VecX::Zero(2), MatX::Identity(3, 3),
                      ConfidenceMatrix::identity(2), UkfOptions{}),
      InvalidInput);
}
