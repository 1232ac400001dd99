#pragma once

#include <Eigen/Core>

namespace ofs {

using Vector6d = Eigen::Matrix<double, 6, 1>;

// Tangent-space increment of a rigid transform: translational part rho
// (meters), rotational part phi (radians).
struct Twist {
  Eigen::Vector3d rho = Eigen::Vector3d::Zero();
  Eigen::Vector3d phi = Eigen::Vector3d::Zero();

  Vector6d vector() const {
    Vector6d v;
    v << rho, phi;
    return v;
  }
  static Twist from_vector(const Vector6d& v) { return {v.head<3>(), v.tail<3>()}; }
};

// Rigid SE(3) transform. compose() re-orthonormalizes the rotation when
// accumulated drift exceeds 1e-9.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose identity() { return {}; }

  Eigen::Vector3d transform(const Eigen::Vector3d& x) const {
    return rotation * x + translation;
  }

  Pose compose(const Pose& rhs) const;  // this ∘ rhs, rhs applied first
  Pose inverse() const;

  double orthonormality_error() const;
  void reorthonormalize();

  // Row-major 3x4 [R | t], the KITTI pose-file row convention.
  Eigen::Matrix<double, 3, 4> matrix34() const;
  static Pose from_matrix34(const Eigen::Matrix<double, 3, 4>& m);
};

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

// Exponential map; second-order series below ||phi|| = 1e-8.
// Throws std::invalid_argument on non-finite input.
Pose exp_map(const Twist& t);

// Logarithm map, valid for rotation angles below pi. Used for diagnostics
// and metrics only, not in the optimizer loop.
Twist log_map(const Pose& p);

// Derivative of x' = exp(delta) * P * x with respect to the left-composed
// twist delta at zero. Columns ordered (rho, phi):  [ I | -[P*x]x ].
Eigen::Matrix<double, 3, 6> transform_jacobian(const Pose& p, const Eigen::Vector3d& x);

}  // namespace ofs
