#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "ofs/octree_field.hpp"
#include "ofs/random.hpp"

namespace ofs {

enum class Activation { kSoftplus, kIdentity };

// Per-level decoder: concat(weighted corner features, in-voxel coordinate)
// -> 32 -> 32 -> scalar. Two softplus hidden layers, linear output. All
// parameters in double precision.
struct LevelMlp {
  Eigen::MatrixXd w0;  // 32 x (8F + 3)
  Eigen::VectorXd b0;  // 32
  Eigen::MatrixXd w1;  // 32 x 32
  Eigen::VectorXd b1;  // 32
  Eigen::VectorXd w2;  // 32
  double b2 = 0.0;
  Activation activation = Activation::kSoftplus;
  int feature_dim = 0;

  static constexpr int kHidden = 32;

  int input_dim() const { return 8 * feature_dim + 3; }

  // Fan-in-scaled uniform init, zero biases.
  static LevelMlp init(int feature_dim, Rng& rng);
};

// Gradient (or moment) buffers shaped like the MLP parameters.
struct MlpGrads {
  Eigen::MatrixXd w0;
  Eigen::VectorXd b0;
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::VectorXd w2;
  double b2 = 0.0;

  static MlpGrads zeros_like(const LevelMlp& mlp);
  void set_zero();
};

// Cached forward pass of one sample through one level; replaying it
// reproduces the output bit-exactly.
struct LevelTape {
  Eigen::VectorXd input;
  Eigen::VectorXd pre0, act0, pre1, act1;
  double value = 0.0;
  CornerBundle bundle;
};

double level_forward(const LevelMlp& mlp, const CornerBundle& bundle, LevelTape* tape);

// Backward through one level. Accumulates parameter gradients into grads
// (optional), feature gradients into feature_grads (slot-major level buffer,
// optional), and adds the full coordinate gradient — the MLP-input path plus
// the trilinear-weight path, in world units — into coord_grad (optional).
void level_backward(const LevelMlp& mlp, const LevelTape& tape, double upstream,
                    MlpGrads* grads, std::vector<double>* feature_grads,
                    Eigen::Vector3d* coord_grad);

// The full map model: sparse features plus one decoder per trainable level.
struct FieldModel {
  FeatureOctree octree;
  std::vector<LevelMlp> mlps;  // coarse to fine, one per trainable level

  static FieldModel create(const FeatureOctree::Config& cfg);

  int n_levels() const { return static_cast<int>(mlps.size()); }

  // FNV-1a over all parameter bytes; used to assert map immutability.
  std::uint64_t param_checksum() const;
};

// Level masks are bitmasks over trainable levels (bit 0 = coarsest).
inline std::uint32_t all_levels_mask(int n) { return (1u << n) - 1u; }
inline std::uint32_t prefix_mask(int n_active) { return (1u << n_active) - 1u; }

struct FieldTape {
  double value = 0.0;
  std::vector<std::optional<LevelTape>> per_level;
  bool fully_covered = true;  // false when some active level had no allocation
  int observed_levels = 0;
};

// Sum of active-level predictions. Levels excluded by the mask contribute
// exactly zero; an active level with no allocation at x contributes zero and
// clears fully_covered.
double field_predict(const FieldModel& model, const Eigen::Vector3d& x, std::uint32_t mask,
                     FieldTape* tape, bool boundary_snap = false);

struct FieldGradients {
  std::vector<MlpGrads> mlp;                  // per level
  std::vector<std::vector<double>> features;  // per level, slot-major

  static FieldGradients zeros_like(const FieldModel& model);
  void set_zero();
  void sync_shapes(const FieldModel& model);  // grow feature buffers after allocation
};

void field_backward(const FieldModel& model, const FieldTape& tape, double upstream,
                    FieldGradients* grads, Eigen::Vector3d* coord_grad);

// ---- Batched path -----------------------------------------------------
// Same math as the per-sample ops, restructured as matrix products over a
// minibatch. The trainer and pose estimator use this; tests pin it against
// the per-sample path.

struct LevelBatch {
  Eigen::MatrixXd input;              // D x B_cov
  Eigen::MatrixXd pre0, act0, pre1, act1;
  Eigen::RowVectorXd value;           // 1 x B_cov
  std::vector<CornerBundle> bundles;  // B_cov
  std::vector<std::int32_t> sample_index;  // position of each column in the batch
};

struct FieldBatch {
  Eigen::VectorXd values;             // per sample, masked levels contribute 0
  std::vector<std::uint8_t> covered;  // all active levels observed
  std::vector<LevelBatch> levels;     // entry per model level (empty if masked)
  std::uint32_t mask = 0;
};

FieldBatch field_predict_batch(const FieldModel& model, std::span<const Eigen::Vector3d> xs,
                               std::uint32_t mask, bool boundary_snap = false);

// upstream is dLoss/dvalue per sample. coord_grads, when given, is resized to
// the batch and receives world-frame coordinate gradients (zero for
// uncovered samples).
void field_backward_batch(const FieldModel& model, const FieldBatch& batch,
                          const Eigen::VectorXd& upstream, FieldGradients* grads,
                          std::vector<Eigen::Vector3d>* coord_grads);

}  // namespace ofs
