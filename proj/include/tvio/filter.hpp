#pragma once

// Additive-noise unscented Kalman filter over flat real vectors, with two
// extras the pose estimator needs:
//   - designated quaternion blocks (4-wide, scalar first) that are pulled
//     back onto the unit sphere after every mean computation, and
//   - a per-row confidence scaling of R inside the gain,
//       K = P_xy (P_yy + C_f R)^-1,   P+ = P- - K (P_yy + C_f R) K^T,
//     so individual measurement rows can be soft-weighted without rebuilding
//     the noise model.
// Cholesky failures get one jitter-and-retry (default 1e-12 I) before raising
// NumericalFailure.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Cholesky>

#include "tvio/error.hpp"
#include "tvio/types.hpp"

namespace tvio {
namespace ukf {

struct GaussianState {
  VecX mean;
  MatX covariance;
};

struct SigmaParams {
  double alpha = 1e-3;
  double beta = 2.0;
  double kappa = 0.0;
};

struct UkfOptions {
  SigmaParams sigma;
  // Offsets of quaternion blocks inside the state vector; each spans four
  // entries packed [w x y z].
  std::vector<int> quat_blocks;
  double jitter = 1e-12;
};

// Diagonal scale on R, one entry per measurement row. The pipeline builds it
// from one confidence value per feature repeated over that feature's (u, v)
// rows; entries are capped at 1e12 so an "ignore this row" request stays
// finite.
struct ConfidenceMatrix {
  VecX diag;

  static ConfidenceMatrix identity(int dim) {
    if (dim < 0) throw InvalidInput("ConfidenceMatrix: dim must be >= 0");
    ConfidenceMatrix c;
    c.diag = VecX::Ones(dim);
    return c;
  }

  static ConfidenceMatrix from_block_scales(const std::vector<double>& scales,
                                            int block = 2) {
    if (block <= 0) throw InvalidInput("ConfidenceMatrix: block must be > 0");
    ConfidenceMatrix c;
    c.diag.resize(static_cast<Eigen::Index>(scales.size()) * block);
    Eigen::Index row = 0;
    for (double s : scales) {
      if (!(s >= 0.0)) {
        throw InvalidInput("ConfidenceMatrix: scales must be >= 0");
      }
      const double capped = std::min(s, 1e12);
      for (int k = 0; k < block; ++k) c.diag[row++] = capped;
    }
    return c;
  }

  void require_dim(Eigen::Index dim) const {
    if (diag.size() != dim) {
      throw InvalidInput("ConfidenceMatrix: dimension mismatch");
    }
    for (Eigen::Index i = 0; i < diag.size(); ++i) {
      if (!(diag[i] >= 0.0)) {
        throw InvalidInput("ConfidenceMatrix: entries must be >= 0");
      }
    }
  }
};

using TransitionFn = std::function<VecX(const VecX&, const VecX&)>;
using MeasurementFn = std::function<VecX(const VecX&)>;

struct SigmaWeights {
  double wm0 = 0.0;  // mean weight, center point
  double wc0 = 0.0;  // covariance weight, center point
  double wi = 0.0;   // shared weight, spread points
  double gamma = 0.0;  // sqrt(n + lambda) column scale
};

inline SigmaWeights sigma_weights(int n, const SigmaParams& p) {
  if (n <= 0) throw InvalidInput("sigma_weights: state dimension must be > 0");
  const double a2 = p.alpha * p.alpha;
  const double lambda = a2 * (n + p.kappa) - n;
  const double denom = n + lambda;  // = alpha^2 (n + kappa)
  if (!(denom > 0.0)) {
    throw InvalidInput("sigma_weights: alpha^2 (n + kappa) must be positive");
  }
  SigmaWeights w;
  w.gamma = std::sqrt(denom);
  w.wm0 = lambda / denom;
  w.wc0 = w.wm0 + (1.0 - a2 + p.beta);
  w.wi = 0.5 / denom;
  return w;
}

namespace detail {

inline MatX sigma_point_sqrt(const MatX& P, double jitter) {
  Eigen::LLT<MatX> llt(P);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  const MatX jittered = P + jitter * MatX::Identity(P.rows(), P.cols());
  Eigen::LLT<MatX> retry(jittered);
  if (retry.info() == Eigen::Success) return retry.matrixL();
  throw NumericalFailure("covariance Cholesky failed after jitter retry");
}

// Columns: [mean, mean + gamma L_i, mean - gamma L_i].
inline MatX sigma_points(const GaussianState& s, const SigmaWeights& w,
                         double jitter) {
  const Eigen::Index n = s.mean.size();
  const MatX L = sigma_point_sqrt(s.covariance, jitter);
  MatX X(n, 2 * n + 1);
  X.col(0) = s.mean;
  for (Eigen::Index i = 0; i < n; ++i) {
    X.col(1 + i) = s.mean + w.gamma * L.col(i);
    X.col(1 + n + i) = s.mean - w.gamma * L.col(i);
  }
  return X;
}

inline void renormalize_quat_blocks(VecX& x, const std::vector<int>& blocks) {
  for (int off : blocks) {
    if (off < 0 || off + 4 > x.size()) {
      throw InvalidInput("quaternion block offset out of range");
    }
    const double n = x.segment<4>(off).norm();
    if (n < 1e-12) {
      throw NumericalFailure("quaternion block collapsed to zero norm");
    }
    x.segment<4>(off) /= n;
  }
}

// Weighted sigma mean in the form Y0 + sum wi (Yi - Y0), pairing the +/-
// columns. Equivalent to sum wm_i Yi (weights sum to 1) but avoids the
// 1/alpha^2 cancellation of the direct sum when alpha is small.
inline VecX weighted_sigma_mean(const MatX& Y, const SigmaWeights& w) {
  const Eigen::Index half = (Y.cols() - 1) / 2;
  VecX acc = VecX::Zero(Y.rows());
  for (Eigen::Index i = 1; i <= half; ++i) {
    acc += (Y.col(i) - Y.col(0)) + (Y.col(half + i) - Y.col(0));
  }
  return Y.col(0) + w.wi * acc;
}

}  // namespace detail

inline GaussianState ukf_predict(const GaussianState& state,
                                 const TransitionFn& f, const MatX& Q,
                                 const VecX& u, const UkfOptions& opt = {}) {
  const Eigen::Index n = state.mean.size();
  if (state.covariance.rows() != n || state.covariance.cols() != n) {
    throw InvalidInput("ukf_predict: covariance dimension mismatch");
  }
  if (Q.rows() != n || Q.cols() != n) {
    throw InvalidInput("ukf_predict: process covariance dimension mismatch");
  }
  const SigmaWeights w = sigma_weights(static_cast<int>(n), opt.sigma);
  const MatX X = detail::sigma_points(state, w, opt.jitter);

  MatX Y(n, X.cols());
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    Y.col(i) = f(X.col(i), u);
    if (Y.col(i).size() != n) {
      throw InvalidInput("ukf_predict: transition changed state dimension");
    }
  }
  if (!Y.allFinite()) {
    throw NumericalFailure("ukf_predict: transition produced non-finite state");
  }

  VecX mean = detail::weighted_sigma_mean(Y, w);

  MatX P = Q;
  const VecX d0 = Y.col(0) - mean;
  P += w.wc0 * (d0 * d0.transpose());
  for (Eigen::Index i = 1; i < Y.cols(); ++i) {
    const VecX d = Y.col(i) - mean;
    P += w.wi * (d * d.transpose());
  }
  P = 0.5 * (P + P.transpose());

  detail::renormalize_quat_blocks(mean, opt.quat_blocks);
  return GaussianState{std::move(mean), std::move(P)};
}

inline GaussianState ukf_update(const GaussianState& state,
                                const MeasurementFn& h, const VecX& z,
                                const MatX& R, const ConfidenceMatrix& c_f,
                                const UkfOptions& opt = {}) {
  const Eigen::Index n = state.mean.size();
  const Eigen::Index m = z.size();
  if (state.covariance.rows() != n || state.covariance.cols() != n) {
    throw InvalidInput("ukf_update: covariance dimension mismatch");
  }
  if (R.rows() != m || R.cols() != m) {
    throw InvalidInput("ukf_update: measurement covariance dimension mismatch");
  }
  c_f.require_dim(m);

  const SigmaWeights w = sigma_weights(static_cast<int>(n), opt.sigma);
  const MatX X = detail::sigma_points(state, w, opt.jitter);

  MatX Z(m, X.cols());
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    Z.col(i) = h(X.col(i));
    if (Z.col(i).size() != m) {
      throw InvalidInput("ukf_update: measurement dimension mismatch");
    }
  }
  if (!Z.allFinite()) {
    throw NumericalFailure("ukf_update: measurement model produced non-finite values");
  }

  const VecX zhat = detail::weighted_sigma_mean(Z, w);

  MatX P_yy = MatX::Zero(m, m);
  MatX P_xy = MatX::Zero(n, m);
  {
    const VecX dz0 = Z.col(0) - zhat;
    const VecX dx0 = X.col(0) - state.mean;
    P_yy += w.wc0 * (dz0 * dz0.transpose());
    P_xy += w.wc0 * (dx0 * dz0.transpose());
  }
  for (Eigen::Index i = 1; i < Z.cols(); ++i) {
    const VecX dz = Z.col(i) - zhat;
    const VecX dx = X.col(i) - state.mean;
    P_yy += w.wi * (dz * dz.transpose());
    P_xy += w.wi * (dx * dz.transpose());
  }

  // With the diagonal R used throughout, C_f R is symmetric already; the
  // symmetrization only guards odd caller input.
  MatX S = P_yy + c_f.diag.asDiagonal() * R;
  S = 0.5 * (S + S.transpose());

  MatX K;
  bool solved = false;
  for (int attempt = 0; attempt < 2 && !solved; ++attempt) {
    if (attempt == 1) S += opt.jitter * MatX::Identity(m, m);
    Eigen::LDLT<MatX> ldlt(S);
    if (ldlt.info() != Eigen::Success) continue;
    K = ldlt.solve(P_xy.transpose()).transpose();
    solved = K.allFinite();
  }
  if (!solved) {
    throw NumericalFailure("ukf_update: innovation matrix not invertible");
  }

  VecX mean = state.mean + K * (z - zhat);
  MatX P = state.covariance - K * S * K.transpose();
  P = 0.5 * (P + P.transpose());
  if (!mean.allFinite() || !P.allFinite()) {
    throw NumericalFailure("ukf_update: non-finite posterior");
  }
  detail::renormalize_quat_blocks(mean, opt.quat_blocks);
  return GaussianState{std::move(mean), std::move(P)};
}

}  // namespace ukf
}  // namespace tvio
