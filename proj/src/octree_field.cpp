#include "ofs/octree_field.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ofs {

namespace {

constexpr std::uint32_t kMaxGridIndex = (1u << 21) - 1;

std::uint64_t expand_bits21(std::uint64_t v) {
  v &= 0x1fffffULL;
  v = (v | v << 32) & 0x1f00000000ffffULL;
  v = (v | v << 16) & 0x1f0000ff0000ffULL;
  v = (v | v << 8) & 0x100f00f00f00f00fULL;
  v = (v | v << 4) & 0x10c30c30c30c30c3ULL;
  v = (v | v << 2) & 0x1249249249249249ULL;
  return v;
}

std::uint32_t compact_bits21(std::uint64_t v) {
  v &= 0x1249249249249249ULL;
  v = (v ^ (v >> 2)) & 0x10c30c30c30c30c3ULL;
  v = (v ^ (v >> 4)) & 0x100f00f00f00f00fULL;
  v = (v ^ (v >> 8)) & 0x1f0000ff0000ffULL;
  v = (v ^ (v >> 16)) & 0x1f00000000ffffULL;
  v = (v ^ (v >> 32)) & 0x1fffffULL;
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::uint64_t morton_encode(std::uint32_t x, std::uint32_t y, std::uint32_t z) {
  return expand_bits21(x) | (expand_bits21(y) << 1) | (expand_bits21(z) << 2);
}

std::array<std::uint32_t, 3> morton_decode(std::uint64_t key) {
  return {compact_bits21(key), compact_bits21(key >> 1), compact_bits21(key >> 2)};
}

std::array<double, 8> trilinear_weights(const Eigen::Vector3d& u) {
  std::array<double, 8> w{};
  for (int j = 0; j < 8; ++j) {
    double p = 1.0;
    for (int d = 0; d < 3; ++d) p *= (j >> d & 1) ? u[d] : 1.0 - u[d];
    w[j] = p;
  }
  return w;
}

FeatureOctree::FeatureOctree(const Config& cfg) : cfg_(cfg), rng_(cfg.seed) {
  if (!cfg.bounds.valid()) throw std::invalid_argument("octree: invalid world bounds");
  if (cfg.finest_voxel <= 0.0) throw std::invalid_argument("octree: voxel size must be positive");
  if (cfg.n_levels < 1) throw std::invalid_argument("octree: need at least one level");
  if (cfg.n_levels > cfg.finest_level + 1)
    throw std::invalid_argument("octree: more trainable levels than octree depth");
  if (cfg.feature_dim < 1) throw std::invalid_argument("octree: feature_dim must be positive");

  const double max_extent = cfg.bounds.extent().maxCoeff();
  if (max_extent / cfg.finest_voxel + 2.0 > static_cast<double>(kMaxGridIndex))
    throw std::invalid_argument("octree: world bounds exceed 21-bit grid at the finest level");

  specs_.resize(cfg.n_levels);
  levels_.resize(cfg.n_levels);
  for (int i = 0; i < cfg.n_levels; ++i) {
    const int steps_up = cfg.n_levels - 1 - i;  // i = 0 is the coarsest
    specs_[i].level_index = cfg.finest_level - steps_up;
    specs_[i].voxel_size = cfg.finest_voxel * std::ldexp(1.0, steps_up);
    specs_[i].feature_dim = cfg.feature_dim;
    levels_[i].spec = specs_[i];
  }
}

bool FeatureOctree::grid_coords(int level, const Eigen::Vector3d& x,
                                std::array<std::uint32_t, 3>* iv,
                                Eigen::Vector3d* local) const {
  if (!cfg_.bounds.contains(x)) return false;
  const double vs = specs_[level].voxel_size;
  for (int d = 0; d < 3; ++d) {
    const double g = (x[d] - cfg_.bounds.min[d]) / vs;
    const double f = std::floor(g);
    (*iv)[d] = static_cast<std::uint32_t>(f);
    if (local) (*local)[d] = g - f;
  }
  return true;
}

AllocationReport FeatureOctree::allocate_for_points(std::span<const Eigen::Vector3d> points) {
  AllocationReport report;
  report.new_voxels.assign(levels_.size(), 0);
  report.new_corners.assign(levels_.size(), 0);

  const int f = cfg_.feature_dim;
  for (const auto& p : points) {
    if (!p.allFinite() || !cfg_.bounds.contains(p)) {
      ++report.skipped_outside;
      continue;
    }
    for (std::size_t li = 0; li < levels_.size(); ++li) {
      Level& level = levels_[li];
      std::array<std::uint32_t, 3> iv{};
      grid_coords(static_cast<int>(li), p, &iv, nullptr);
      const std::uint64_t vkey = morton_encode(iv[0], iv[1], iv[2]);
      if (!level.voxels.insert(vkey).second) continue;
      ++report.new_voxels[li];
      for (int j = 0; j < 8; ++j) {
        const std::uint64_t ckey =
            morton_encode(iv[0] + (j & 1), iv[1] + (j >> 1 & 1), iv[2] + (j >> 2 & 1));
        auto [it, inserted] =
            level.slots.try_emplace(ckey, static_cast<std::uint32_t>(level.slots.size()));
        if (!inserted) continue;
        ++report.new_corners[li];
        for (int c = 0; c < f; ++c)
          level.features.push_back(rng_.uniform(-cfg_.init_scale, cfg_.init_scale));
      }
    }
  }
  return report;
}

std::optional<CornerBundle> FeatureOctree::interpolate(int level, const Eigen::Vector3d& x,
                                                       bool boundary_snap) const {
  const Level& lv = levels_[level];
  std::array<std::uint32_t, 3> iv{};
  Eigen::Vector3d u;
  if (!grid_coords(level, x, &iv, &u)) return std::nullopt;

  std::uint64_t vkey = morton_encode(iv[0], iv[1], iv[2]);
  if (!lv.voxels.contains(vkey)) {
    if (!boundary_snap) return std::nullopt;
    // Points on the lower face of an unallocated voxel may belong to an
    // allocated neighbor below; try the candidates with u snapped to 1.
    const double eps = 1e-9;
    bool snappable[3];
    int n_snappable = 0;
    for (int d = 0; d < 3; ++d) {
      snappable[d] = u[d] < eps && iv[d] > 0;
      n_snappable += snappable[d];
    }
    bool found = false;
    for (int m = 1; m < 8 && !found; ++m) {
      std::array<std::uint32_t, 3> cand = iv;
      Eigen::Vector3d cu = u;
      bool ok = true;
      for (int d = 0; d < 3; ++d) {
        if (!(m >> d & 1)) continue;
        if (!snappable[d]) {
          ok = false;
          break;
        }
        cand[d] -= 1;
        cu[d] = 1.0;
      }
      if (!ok) continue;
      const std::uint64_t ck = morton_encode(cand[0], cand[1], cand[2]);
      if (lv.voxels.contains(ck)) {
        iv = cand;
        u = cu;
        vkey = ck;
        found = true;
      }
    }
    if (!found) return std::nullopt;
  }

  CornerBundle b;
  b.level = level;
  b.voxel_size = lv.spec.voxel_size;
  b.local = u;
  b.weights = trilinear_weights(u);
  const int f = cfg_.feature_dim;
  b.features.resize(f, 8);
  for (int j = 0; j < 8; ++j) {
    const std::uint64_t ckey =
        morton_encode(iv[0] + (j & 1), iv[1] + (j >> 1 & 1), iv[2] + (j >> 2 & 1));
    b.corner_keys[j] = ckey;
    const auto it = lv.slots.find(ckey);
    if (it == lv.slots.end())
      throw std::logic_error("octree: allocated voxel with missing corner record");
    b.slots[j] = it->second;
    for (int c = 0; c < f; ++c) b.features(c, j) = lv.features[it->second * f + c];
  }
  return b;
}

void FeatureOctree::interpolate_gradients(const CornerBundle& bundle,
                                          const Eigen::MatrixXd& upstream,
                                          Eigen::MatrixXd* feature_grads,
                                          Eigen::Vector3d* coord_grad) {
  const int f = static_cast<int>(bundle.features.rows());
  if (feature_grads) {
    feature_grads->resize(f, 8);
    for (int j = 0; j < 8; ++j) feature_grads->col(j) = bundle.weights[j] * upstream.col(j);
  }
  if (coord_grad) {
    coord_grad->setZero();
    const Eigen::Vector3d& u = bundle.local;
    for (int j = 0; j < 8; ++j) {
      const double hj_dot = bundle.features.col(j).dot(upstream.col(j));
      for (int d = 0; d < 3; ++d) {
        // d(weight_j)/d(u_d): drop dimension d from the product, signed by bit.
        double dw = (j >> d & 1) ? 1.0 : -1.0;
        for (int e = 0; e < 3; ++e) {
          if (e == d) continue;
          dw *= (j >> e & 1) ? u[e] : 1.0 - u[e];
        }
        (*coord_grad)[d] += dw * hj_dot;
      }
    }
    *coord_grad /= bundle.voxel_size;
  }
}

bool FeatureOctree::voxel_allocated(int level, const Eigen::Vector3d& x) const {
  std::array<std::uint32_t, 3> iv{};
  if (!grid_coords(level, x, &iv, nullptr)) return false;
  return levels_[level].voxels.contains(morton_encode(iv[0], iv[1], iv[2]));
}

std::vector<std::uint64_t> FeatureOctree::sorted_corner_keys(int level) const {
  std::vector<std::uint64_t> keys;
  keys.reserve(levels_[level].slots.size());
  for (const auto& [k, _] : levels_[level].slots) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  return keys;
}

std::vector<std::uint64_t> FeatureOctree::sorted_voxel_keys(int level) const {
  std::vector<std::uint64_t> keys(levels_[level].voxels.begin(), levels_[level].voxels.end());
  std::sort(keys.begin(), keys.end());
  return keys;
}

Eigen::Vector3d FeatureOctree::voxel_min_corner(int level, std::uint64_t voxel_key) const {
  const auto iv = morton_decode(voxel_key);
  const double vs = specs_[level].voxel_size;
  return cfg_.bounds.min + vs * Eigen::Vector3d(iv[0], iv[1], iv[2]);
}

std::uint32_t FeatureOctree::corner_slot(int level, std::uint64_t corner_key) const {
  const auto it = levels_[level].slots.find(corner_key);
  if (it == levels_[level].slots.end())
    throw std::out_of_range("octree: unknown corner key");
  return it->second;
}

void FeatureOctree::restore_level(int level, std::span<const std::uint64_t> voxel_keys,
                                  std::span<const std::uint64_t> corner_keys,
                                  std::vector<double> features) {
  if (features.size() != corner_keys.size() * static_cast<std::size_t>(cfg_.feature_dim))
    throw std::invalid_argument("octree: feature array size mismatch on restore");
  Level& lv = levels_[level];
  lv.voxels.clear();
  lv.voxels.insert(voxel_keys.begin(), voxel_keys.end());
  lv.slots.clear();
  lv.slots.reserve(corner_keys.size());
  for (std::size_t i = 0; i < corner_keys.size(); ++i)
    lv.slots.emplace(corner_keys[i], static_cast<std::uint32_t>(i));
  lv.features = std::move(features);
}

}  // namespace ofs
