#include "ofs/se3.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace ofs {

namespace {
constexpr double kOrthoTolerance = 1e-9;
constexpr double kSmallAngle = 1e-8;
}  // namespace

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return m;
}

double Pose::orthonormality_error() const {
  return (rotation.transpose() * rotation - Eigen::Matrix3d::Identity())
      .cwiseAbs()
      .maxCoeff();
}

void Pose::reorthonormalize() {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1.0;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  rotation = r;
}

Pose Pose::compose(const Pose& rhs) const {
  Pose out;
  out.rotation = rotation * rhs.rotation;
  out.translation = rotation * rhs.translation + translation;
  if (out.orthonormality_error() > kOrthoTolerance) out.reorthonormalize();
  return out;
}

Pose Pose::inverse() const {
  Pose out;
  out.rotation = rotation.transpose();
  out.translation = -(out.rotation * translation);
  return out;
}

Eigen::Matrix<double, 3, 4> Pose::matrix34() const {
  Eigen::Matrix<double, 3, 4> m;
  m.block<3, 3>(0, 0) = rotation;
  m.col(3) = translation;
  return m;
}

Pose Pose::from_matrix34(const Eigen::Matrix<double, 3, 4>& m) {
  Pose p;
  p.rotation = m.block<3, 3>(0, 0);
  p.translation = m.col(3);
  return p;
}

Pose exp_map(const Twist& t) {
  if (!t.rho.allFinite() || !t.phi.allFinite())
    throw std::invalid_argument("exp_map: non-finite twist");

  const double theta2 = t.phi.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Eigen::Matrix3d k = skew(t.phi);
  const Eigen::Matrix3d k2 = k * k;

  // R = I + a*K + b*K^2,  V = I + b*K + c*K^2
  double a, b, c;
  if (theta < kSmallAngle) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
    c = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }

  Pose p;
  p.rotation = Eigen::Matrix3d::Identity() + a * k + b * k2;
  p.translation = t.rho + b * (k * t.rho) + c * (k2 * t.rho);
  return p;
}

Twist log_map(const Pose& p) {
  const double cos_theta =
      std::clamp((p.rotation.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(cos_theta);

  Eigen::Vector3d axis_vec;
  axis_vec << p.rotation(2, 1) - p.rotation(1, 2),
      p.rotation(0, 2) - p.rotation(2, 0),
      p.rotation(1, 0) - p.rotation(0, 1);

  Twist t;
  if (theta < kSmallAngle) {
    t.phi = 0.5 * (1.0 + theta * theta / 6.0) * axis_vec;
  } else {
    t.phi = theta / (2.0 * std::sin(theta)) * axis_vec;
  }

  const Eigen::Matrix3d k = skew(t.phi);
  const Eigen::Matrix3d k2 = k * k;
  double d;  // V^{-1} = I - K/2 + d*K^2
  if (theta < kSmallAngle) {
    d = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    d = 1.0 / (theta * theta) -
        (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  const Eigen::Matrix3d v_inv = Eigen::Matrix3d::Identity() - 0.5 * k + d * k2;
  t.rho = v_inv * p.translation;
  return t;
}

Eigen::Matrix<double, 3, 6> transform_jacobian(const Pose& p, const Eigen::Vector3d& x) {
  Eigen::Matrix<double, 3, 6> j;
  j.block<3, 3>(0, 0) = Eigen::Matrix3d::Identity();
  j.block<3, 3>(0, 3) = -skew(p.transform(x));
  return j;
}

}  // namespace ofs
