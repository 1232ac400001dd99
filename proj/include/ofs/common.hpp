#pragma once

#include <Eigen/Core>

namespace ofs {

// Axis-aligned box, half-open: a point on the max face is outside.
struct Aabb {
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Zero();

  bool contains(const Eigen::Vector3d& p) const {
    return (p.array() >= min.array()).all() && (p.array() < max.array()).all();
  }
  Eigen::Vector3d extent() const { return max - min; }
  bool valid() const { return (max.array() > min.array()).all(); }
};

}  // namespace ofs
