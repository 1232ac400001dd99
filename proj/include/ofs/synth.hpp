#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ofs/sampling.hpp"
#include "ofs/se3.hpp"

namespace ofs {

// Analytic primitives combined by SDF union (min). Each primitive SDF is
// exact, so the scene SDF is 1-Lipschitz.
struct Primitive {
  enum class Type { kPlane, kSphere, kBox };
  Type type = Type::kSphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();  // plane: a point on it
  Eigen::Vector3d param = Eigen::Vector3d::Zero();   // plane: unit normal; box: half extents
  double radius = 0.0;                               // sphere only

  double sdf(const Eigen::Vector3d& x) const;
};

struct Scene {
  std::vector<Primitive> primitives;

  double sdf(const Eigen::Vector3d& x) const;

  static Primitive plane(const Eigen::Vector3d& point, const Eigen::Vector3d& normal);
  static Primitive sphere(const Eigen::Vector3d& center, double radius);
  static Primitive box(const Eigen::Vector3d& center, const Eigen::Vector3d& half_extents);
};

// One primitive per line: "plane px py pz nx ny nz", "sphere cx cy cz r",
// "box cx cy cz hx hy hz". '#' starts a comment.
Scene parse_scene(const std::string& text);
Scene load_scene(const std::string& path);

struct ScanPattern {
  int azimuth_count = 360;
  std::vector<double> elevations_deg;  // e.g. -15..15
  double max_range = 30.0;
  double range_sigma = 0.01;  // meters

  static ScanPattern default_pattern();
};

// Sphere-traces every (azimuth, elevation) ray to the first surface within
// max_range, adds Gaussian range noise, drops misses, and returns
// sensor-frame points. Throws if the sensor starts inside geometry.
LidarScan simulate_scan(const Scene& scene, const Pose& pose, const ScanPattern& pattern,
                        std::uint64_t seed);

}  // namespace ofs
