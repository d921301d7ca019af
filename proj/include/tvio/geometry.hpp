#pragma once

#include <array>
#include <cmath>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "tvio/error.hpp"
#include "tvio/types.hpp"

// Quaternion algebra, frame-tagged rigid transforms, pinhole projection,
// trifocal tensor construction and point-line-point transfer.
//
// Conventions, fixed project-wide:
//  * Quaternions are Hamilton, right-handed, and map the tagged source frame
//    into the destination frame: for q = world-from-imu, R(q) v_imu = v_world.
//  * Attitude propagation is q' = q ⊗ exp(ω dt / 2) with ω the body rate,
//    equivalent to R' = R exp([ω dt]x).
//  * Camera frame: +z optical axis, +x right, +y down; pixels (u, v).
//  * Point-line-point transfer predicts the view-1 pixel from the view-3
//    point and a view-2 line. Slices are built after re-expressing the three
//    projections so view 3 (the transfer source) becomes [I | 0].
namespace tvio::geo {

struct WorldFrame {};
struct ImuFrame {};
struct CameraFrame {};

/// Rigid transform taking Src-frame quantities into Dst frame.
template <class Dst, class Src>
struct Pose {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Pose<Src, Dst> inverse() const {
    const Quat qi = rotation.conjugate();
    return {qi, qi * (-translation)};
  }

  template <class Src2>
  Pose<Dst, Src2> operator*(const Pose<Src, Src2>& rhs) const {
    return {(rotation * rhs.rotation).normalized(),
            rotation * rhs.translation + translation};
  }
};

using WorldFromImu = Pose<WorldFrame, ImuFrame>;
using ImuFromWorld = Pose<ImuFrame, WorldFrame>;
using ImuFromCamera = Pose<ImuFrame, CameraFrame>;
using CameraFromImu = Pose<CameraFrame, ImuFrame>;
using WorldFromCamera = Pose<WorldFrame, CameraFrame>;
using CameraFromWorld = Pose<CameraFrame, WorldFrame>;

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  CameraIntrinsics() = default;
  CameraIntrinsics(double fx_, double fy_, double cx_, double cy_)
      : fx(fx_), fy(fy_), cx(cx_), cy(cy_) {
    if (!(fx > 0.0) || !(fy > 0.0)) {
      throw InvalidInput("CameraIntrinsics: focal lengths must be positive");
    }
  }

  Mat3 matrix() const {
    Mat3 K;
    K << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return K;
  }

  Mat3 inverse_matrix() const {
    Mat3 Ki;
    Ki << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
    return Ki;
  }

  /// Unit bearing in the camera frame for a pixel.
  Vec3 bearing(const Vec2& px) const {
    return Vec3((px.x() - cx) / fx, (px.y() - cy) / fy, 1.0).normalized();
  }
};

/// 3x4 camera projection; columns accessible via Eigen's .col(j).
using Projection = Mat34;

/// Homogeneous image line (a, b, c): a*u + b*v + c = 0 in pixels.
using ImageLine = Vec3;

/// Rotation matrix of a unit quaternion. Rejects norms off unit by > 1e-6.
inline Mat3 quat_to_dcm(const Quat& q) {
  if (std::abs(q.norm() - 1.0) > 1e-6) {
    throw InvalidInput("quat_to_dcm: quaternion norm deviates from 1 by more than 1e-6");
  }
  return q.normalized().toRotationMatrix();
}

inline Quat dcm_to_quat(const Mat3& R) {
  Quat q(R);
  q.normalize();
  return q;
}

/// Propagate attitude by a constant body rate over dt: q' = q ⊗ exp(ω dt / 2).
inline Quat quat_integrate(const Quat& q, const Vec3& omega, double dt) {
  if (dt < 0.0) throw InvalidInput("quat_integrate: dt must be non-negative");
  const double angle = omega.norm() * dt;
  if (angle == 0.0) return q;
  const Quat dq(Eigen::AngleAxisd(angle, omega.normalized()));
  Quat out = q * dq;
  out.normalize();
  return out;
}

/// Full pixel projection P = K [R | t] with (R, t) = camera-from-world.
inline Projection build_projection(const WorldFromCamera& world_from_camera,
                                   const CameraIntrinsics& K) {
  const CameraFromWorld cw = world_from_camera.inverse();
  Mat34 rt;
  rt.leftCols<3>() = cw.rotation.toRotationMatrix();
  rt.col(3) = cw.translation;
  return K.matrix() * rt;
}

/// Extrinsic-only projection [R | t]; pixels require applying K afterwards.
inline Projection build_projection_normalized(const WorldFromCamera& world_from_camera) {
  const CameraFromWorld cw = world_from_camera.inverse();
  Mat34 rt;
  rt.leftCols<3>() = cw.rotation.toRotationMatrix();
  rt.col(3) = cw.translation;
  return rt;
}

struct PixelProjection {
  Vec2 pixel;
  double depth;  // projective depth; negative means behind the camera
};

inline PixelProjection project_point(const Projection& P, const Vec3& world_point) {
  const Vec3 h = P * world_point.homogeneous();
  if (h.z() == 0.0) {
    throw DegenerateGeometry("project_point: point on the principal plane");
  }
  return {Vec2(h.x() / h.z(), h.y() / h.z()), h.z()};
}

/// 3x3x3 trifocal tensor as three 3x3 slices.
struct TrifocalTensor {
  std::array<Mat3, 3> slice;

  double frobenius() const {
    return std::sqrt(slice[0].squaredNorm() + slice[1].squaredNorm() +
                     slice[2].squaredNorm());
  }
};

namespace detail {

// Homography H with P3 * H = [I | 0]; requires rank-3 left block.
inline Mat4 canonicalizing_homography(const Projection& P3) {
  const Mat3 M = P3.leftCols<3>();
  Eigen::FullPivLU<Mat3> lu(M);
  if (!lu.isInvertible()) {
    throw DegenerateGeometry("trifocal: view-3 projection has a rank-deficient 3x3 block");
  }
  const Mat3 Minv = lu.inverse();
  Mat4 H = Mat4::Identity();
  H.topLeftCorner<3, 3>() = Minv;
  H.topRightCorner<3, 1>() = -Minv * P3.col(3);
  return H;
}

inline void require_full_rank(const Projection& P, const char* which) {
  Eigen::FullPivLU<Mat3> lu(Mat3(P.leftCols<3>()));
  if (!lu.isInvertible()) {
    throw DegenerateGeometry(std::string("trifocal: ") + which +
                             " projection has a rank-deficient 3x3 block");
  }
}

}  // namespace detail

/// Tensor for transferring a view-3 point through a view-2 line into view 1.
///
/// The three projections are first re-expressed so view 3 becomes [I | 0];
/// with A = P1 H and B = P2 H the slices are
///   T_j = B_j A_4ᵀ − B_4 A_jᵀ.
/// Inputs already in that canonical form pass through unchanged. All three
/// projections may be either full pixel projections (tensor then consumes and
/// produces pixel coordinates directly) or extrinsic-only ones (pair with the
/// intrinsics handling in transfer_point).
inline TrifocalTensor trifocal_from_projections(const Projection& P1,
                                                const Projection& P2,
                                                const Projection& P3) {
  detail::require_full_rank(P1, "view-1");
  detail::require_full_rank(P2, "view-2");
  const Mat4 H = detail::canonicalizing_homography(P3);
  const Mat34 A = P1 * H;
  const Mat34 B = P2 * H;
  TrifocalTensor T;
  for (int j = 0; j < 3; ++j) {
    T.slice[j] = B.col(j) * A.col(3).transpose() - B.col(3) * A.col(j).transpose();
  }
  return T;
}

/// Epipolar line of the view-3 point x3 in view 2 (coordinates of the space
/// the projections are expressed in; x3 must match P3's output space).
inline ImageLine epipolar_line_in_view2(const Projection& P2, const Projection& P3,
                                        const Vec3& x3) {
  const Mat4 H = detail::canonicalizing_homography(P3);
  const Mat34 B = P2 * H;
  const Vec3 e = B.col(3);            // epipole: view-3 center imaged in view 2
  const Vec3 ray = B.leftCols<3>() * x3;
  return e.cross(ray);
}

/// Line through f2 maximally orthogonal to the epipolar direction: its normal
/// is the (unit) epipolar direction itself. An undefined direction falls back
/// to the horizontal line through f2.
inline ImageLine choose_line(const Vec2& f2, const Vec2& epipolar_direction) {
  if (!f2.allFinite()) throw InvalidInput("choose_line: non-finite point");
  Vec2 d = epipolar_direction;
  const double n = d.norm();
  if (!(n > 1e-12) || !d.allFinite()) {
    return ImageLine(0.0, 1.0, -f2.y());
  }
  d /= n;
  return ImageLine(d.x(), d.y(), -d.dot(f2));
}

/// Direction (unit 2-vector) of an image line; the line runs along this.
inline Vec2 line_direction(const ImageLine& l) {
  const Vec2 d(l.y(), -l.x());
  const double n = d.norm();
  if (!(n > 0.0)) throw InvalidInput("line_direction: degenerate line");
  return d / n;
}

/// Point-line-point transfer into view 1.
///
/// f3 is a homogeneous pixel in view 3 and l2 a pixel-space line in view 2;
/// the tensor must have been built from extrinsic-only projections, so both
/// are moved to normalized coordinates (x3 = K⁻¹ f3, l = Kᵀ l2), contracted as
///   y = (Σ_j x3_j T_jᵀ) l,
/// and the result mapped back through K. Build the tensor from full pixel
/// projections and pass identity intrinsics to stay in pixel space throughout.
/// Output is invariant to nonzero scaling of f3 and l2.
inline Vec2 transfer_point(const TrifocalTensor& T, const Vec3& f3,
                           const ImageLine& l2, const CameraIntrinsics& K) {
  const double tn = T.frobenius();
  if (!(tn > 1e-12)) {
    throw DegenerateGeometry("transfer_point: degenerate (near-zero) tensor");
  }
  Vec3 x3 = K.inverse_matrix() * f3;
  Vec3 ln = K.matrix().transpose() * l2;
  const double xn = x3.norm();
  const double lnn = ln.norm();
  if (!(xn > 0.0) || !(lnn > 0.0)) {
    throw InvalidInput("transfer_point: zero homogeneous input");
  }
  x3 /= xn;
  ln /= lnn;

  Vec3 y = Vec3::Zero();
  for (int j = 0; j < 3; ++j) {
    y.noalias() += x3[j] * (T.slice[j].transpose() * ln);
  }
  y /= tn;

  const double yn = y.norm();
  if (!(yn > 1e-12)) {
    throw DegenerateGeometry("transfer_point: homogeneous result scale below 1e-12");
  }
  const Vec3 p = K.matrix() * y;
  if (std::abs(p.z()) < 1e-12 * p.norm()) {
    throw DegenerateGeometry("transfer_point: transferred point at infinity");
  }
  return Vec2(p.x() / p.z(), p.y() / p.z());
}

}  // namespace tvio::geo
