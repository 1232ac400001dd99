#include "ofs/synth.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ofs/parallel.hpp"
#include "ofs/random.hpp"

namespace ofs {

double Primitive::sdf(const Eigen::Vector3d& x) const {
  switch (type) {
    case Type::kPlane:
      return param.dot(x - center);
    case Type::kSphere:
      return (x - center).norm() - radius;
    case Type::kBox: {
      const Eigen::Vector3d q = (x - center).cwiseAbs() - param;
      const double outside = q.cwiseMax(0.0).norm();
      const double inside = std::min(q.maxCoeff(), 0.0);
      return outside + inside;
    }
  }
  return 0.0;
}

double Scene::sdf(const Eigen::Vector3d& x) const {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : primitives) best = std::min(best, p.sdf(x));
  return best;
}

Primitive Scene::plane(const Eigen::Vector3d& point, const Eigen::Vector3d& normal) {
  Primitive p;
  p.type = Primitive::Type::kPlane;
  p.center = point;
  const double n = normal.norm();
  if (n <= 0.0) throw std::invalid_argument("plane: zero normal");
  p.param = normal / n;
  return p;
}

Primitive Scene::sphere(const Eigen::Vector3d& center, double radius) {
  if (radius <= 0.0) throw std::invalid_argument("sphere: radius must be positive");
  Primitive p;
  p.type = Primitive::Type::kSphere;
  p.center = center;
  p.radius = radius;
  return p;
}

Primitive Scene::box(const Eigen::Vector3d& center, const Eigen::Vector3d& half_extents) {
  if ((half_extents.array() <= 0.0).any())
    throw std::invalid_argument("box: half extents must be positive");
  Primitive p;
  p.type = Primitive::Type::kBox;
  p.center = center;
  p.param = half_extents;
  return p;
}

Scene parse_scene(const std::string& text) {
  Scene scene;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    auto need = [&](double* v) {
      if (!(ls >> *v))
        throw std::runtime_error("scene: malformed line " + std::to_string(line_no));
    };
    Eigen::Vector3d a, b;
    double r;
    if (kind == "plane") {
      for (int i = 0; i < 3; ++i) need(&a[i]);
      for (int i = 0; i < 3; ++i) need(&b[i]);
      scene.primitives.push_back(Scene::plane(a, b));
    } else if (kind == "sphere") {
      for (int i = 0; i < 3; ++i) need(&a[i]);
      need(&r);
      scene.primitives.push_back(Scene::sphere(a, r));
    } else if (kind == "box") {
      for (int i = 0; i < 3; ++i) need(&a[i]);
      for (int i = 0; i < 3; ++i) need(&b[i]);
      scene.primitives.push_back(Scene::box(a, b));
    } else {
      throw std::runtime_error("scene: unknown primitive '" + kind + "' on line " +
                               std::to_string(line_no));
    }
  }
  return scene;
}

Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("scene: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene(ss.str());
}

ScanPattern ScanPattern::default_pattern() {
  ScanPattern p;
  p.azimuth_count = 360;
  for (int i = 0; i < 16; ++i) p.elevations_deg.push_back(-15.0 + 2.0 * i);
  return p;
}

namespace {

constexpr int kMaxTraceSteps = 128;
constexpr double kTraceTol = 1e-4;

// First zero of the scene SDF along the ray, or a negative value on miss.
double sphere_trace(const Scene& scene, const Eigen::Vector3d& origin,
                    const Eigen::Vector3d& dir, double max_range) {
  double t = 0.0;
  for (int step = 0; step < kMaxTraceSteps; ++step) {
    const double d = scene.sdf(origin + t * dir);
    if (d < kTraceTol) return t;
    t += d;
    if (t > max_range) return -1.0;
  }
  return -1.0;
}

}  // namespace

LidarScan simulate_scan(const Scene& scene, const Pose& pose, const ScanPattern& pattern,
                        std::uint64_t seed) {
  if (pattern.azimuth_count < 16)
    throw std::invalid_argument("simulate_scan: azimuth count must be >= 16");
  if (pattern.range_sigma < 0.0)
    throw std::invalid_argument("simulate_scan: negative range noise");
  if (scene.sdf(pose.translation) <= 0.0)
    throw std::runtime_error("simulate_scan: sensor inside geometry");

  const std::size_t n_rays = pattern.elevations_deg.size() * pattern.azimuth_count;
  std::vector<Eigen::Vector3d> hits(n_rays, Eigen::Vector3d::Zero());
  std::vector<std::uint8_t> valid(n_rays, 0);

  parallel_for(n_rays, [&](std::size_t begin, std::size_t end) {
    for (std::size_t ray = begin; ray < end; ++ray) {
      const std::size_t ei = ray / pattern.azimuth_count;
      const std::size_t ai = ray % pattern.azimuth_count;
      const double elev = pattern.elevations_deg[ei] * M_PI / 180.0;
      const double azim = 2.0 * M_PI * static_cast<double>(ai) / pattern.azimuth_count;
      const Eigen::Vector3d dir_sensor(std::cos(elev) * std::cos(azim),
                                       std::cos(elev) * std::sin(azim), std::sin(elev));
      const Eigen::Vector3d dir_world = pose.rotation * dir_sensor;
      const double t = sphere_trace(scene, pose.translation, dir_world, pattern.max_range);
      if (t < 0.0) continue;
      double range = t;
      if (pattern.range_sigma > 0.0) {
        Rng rng(mix_seed(seed, ray));
        range += rng.normal(0.0, pattern.range_sigma);
      }
      if (range <= 0.0) continue;
      hits[ray] = range * dir_sensor;
      valid[ray] = 1;
    }
  });

  LidarScan scan;
  scan.points.reserve(n_rays);
  for (std::size_t ray = 0; ray < n_rays; ++ray)
    if (valid[ray]) scan.points.push_back(hits[ray]);
  return scan;
}

}  // namespace ofs
