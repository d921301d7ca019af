#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace tvio {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using VecX = Eigen::VectorXd;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using MatX = Eigen::MatrixXd;
using Mat34 = Eigen::Matrix<double, 3, 4>;

// Hamilton product, right-handed. Stored scalar-first wherever it is packed
// into a flat vector (see vio::VioState).
using Quat = Eigen::Quaterniond;

}  // namespace tvio
