#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "ofs/common.hpp"
#include "ofs/random.hpp"

namespace ofs {

// One trainable grid level. level_index is the octree depth k; consecutive
// trainable levels halve the voxel size.
struct LevelSpec {
  int level_index = 0;
  double voxel_size = 0.0;
  int feature_dim = 0;
};

// Everything needed to evaluate and differentiate one trilinear query:
// the 8 corner records of the containing voxel plus the corner weights.
// Corner j has offset bits (j&1, j>>1&1, j>>2&1) along (x, y, z).
struct CornerBundle {
  int level = 0;  // index into the trainable level list, 0 = coarsest
  double voxel_size = 0.0;
  Eigen::Vector3d local = Eigen::Vector3d::Zero();  // in-voxel coordinate u
  std::array<std::uint64_t, 8> corner_keys{};
  std::array<std::uint32_t, 8> slots{};  // feature storage indices
  std::array<double, 8> weights{};
  Eigen::MatrixXd features;  // F x 8, column per corner
};

struct AllocationReport {
  std::vector<long> new_voxels;   // per level
  std::vector<long> new_corners;  // per level
  long skipped_outside = 0;
};

// Standard trilinear corner weights: weight_j = prod_d (b_d ? u_d : 1 - u_d).
// They partition unity for any u in [0,1]^3.
std::array<double, 8> trilinear_weights(const Eigen::Vector3d& u);

// 21-bit-per-axis Morton interleave; bounds the grid to 2^21 cells per axis.
std::uint64_t morton_encode(std::uint32_t x, std::uint32_t y, std::uint32_t z);
std::array<std::uint32_t, 3> morton_decode(std::uint64_t key);

// Sparse multi-level storage of learnable corner features. Levels are held
// coarse to fine; corners shared by adjacent voxels have a single record.
class FeatureOctree {
 public:
  struct Config {
    Aabb bounds;
    int finest_level = 10;   // octree depth label of the finest level
    double finest_voxel = 0.05;
    int n_levels = 3;        // trainable levels
    int feature_dim = 3;
    double init_scale = 1e-4;  // corner features start i.i.d. U[-s, s]
    std::uint64_t seed = 1;
  };

  explicit FeatureOctree(const Config& cfg);

  const Config& config() const { return cfg_; }
  const std::vector<LevelSpec>& levels() const { return specs_; }
  int n_levels() const { return static_cast<int>(specs_.size()); }
  int feature_dim() const { return cfg_.feature_dim; }
  double finest_voxel() const { return specs_.back().voxel_size; }
  const Aabb& bounds() const { return cfg_.bounds; }

  // Ensures the containing voxel of every point exists at every level, with
  // 8 initialized corner features each. Existing records are untouched;
  // points outside the world bounds are skipped and counted.
  AllocationReport allocate_for_points(std::span<const Eigen::Vector3d> points);

  // Trilinear query at one level. nullopt signals an unobserved region
  // (containing voxel never allocated); the caller decides what to do.
  // With boundary_snap, a point on the face of an allocated voxel resolves
  // into that voxel with the local coordinate clamped to 1 (mesh queries).
  std::optional<CornerBundle> interpolate(int level, const Eigen::Vector3d& x,
                                          bool boundary_snap = false) const;

  // Reverse-mode derivatives of the weighted features z_j = weight_j * h_j.
  // upstream is dLoss/dz (F x 8). feature_grads receives weight_j * upstream_j
  // (F x 8); coord_grad receives the weight-path gradient with respect to the
  // world coordinate (chain through u divided by voxel_size).
  static void interpolate_gradients(const CornerBundle& bundle,
                                    const Eigen::MatrixXd& upstream,
                                    Eigen::MatrixXd* feature_grads,
                                    Eigen::Vector3d* coord_grad);

  bool voxel_allocated(int level, const Eigen::Vector3d& x) const;

  // Flat feature storage, slot-major: slot s occupies [s*F, (s+1)*F).
  std::vector<double>& feature_data(int level) { return levels_[level].features; }
  const std::vector<double>& feature_data(int level) const { return levels_[level].features; }
  std::size_t corner_count(int level) const { return levels_[level].slots.size(); }
  std::size_t voxel_count(int level) const { return levels_[level].voxels.size(); }

  std::vector<std::uint64_t> sorted_corner_keys(int level) const;
  std::vector<std::uint64_t> sorted_voxel_keys(int level) const;

  // Low-level access used by serialization and the replay sampler.
  Eigen::Vector3d voxel_min_corner(int level, std::uint64_t voxel_key) const;
  std::uint32_t corner_slot(int level, std::uint64_t corner_key) const;  // throws if missing

  // Rebuilds one level from checkpoint data: keys[i] maps to slot i.
  void restore_level(int level, std::span<const std::uint64_t> voxel_keys,
                     std::span<const std::uint64_t> corner_keys,
                     std::vector<double> features);

 private:
  struct Level {
    LevelSpec spec;
    std::unordered_map<std::uint64_t, std::uint32_t> slots;  // corner key -> slot
    std::vector<double> features;                            // slot-major, F each
    std::unordered_set<std::uint64_t> voxels;
  };

  bool grid_coords(int level, const Eigen::Vector3d& x, std::array<std::uint32_t, 3>* iv,
                   Eigen::Vector3d* local) const;

  Config cfg_;
  std::vector<LevelSpec> specs_;
  std::vector<Level> levels_;
  Rng rng_;
};

}  // namespace ofs
