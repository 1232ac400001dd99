#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ofs/level_network.hpp"
#include "ofs/sampling.hpp"

namespace ofs {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int map_iters = 50;
  int batch_size = 4096;
  double lr_features = 1e-2;
  double lr_mlp = 1e-3;
  std::vector<double> gamma = {1e-2, 1e-3, 1e-4};  // coarse to fine, non-increasing
  AdamConfig adam;
  int replay_budget = 2048;

  void validate(int n_levels) const;  // throws on bad gamma shape/ordering
};

// Equal-interval coarse-to-fine activation: with interval = total / n_levels,
// iterations [0, interval) run the coarsest level only, each following
// interval adds one level, and the final segment absorbs the remainder with
// everything active. Returns a prefix bitmask. Throws if n_levels > total.
std::uint32_t level_schedule(int iter, int total, int n_levels);

// Drift-penalty state: per-parameter snapshot of the previously converged
// weights and accumulated importance.
struct RegularizerState {
  struct LevelState {
    std::vector<double> feat_snapshot, feat_omega;
    MlpGrads mlp_snapshot, mlp_omega;
  };
  std::vector<LevelState> levels;

  static RegularizerState from_model(const FieldModel& model);
  // Mirrors live parameter shapes; new feature slots snapshot their current
  // value with zero importance.
  void sync_shapes(const FieldModel& model);
};

struct MapLossResult {
  double loss = 0.0;
  int covered = 0;  // samples with all active levels observed
};

// Weighted mean squared error over the covered samples of the batch;
// gradients (optional) accumulate into grads. Throws "no supervision" when
// every sample lies in unobserved space.
MapLossResult map_loss(const FieldModel& model, std::span<const SdfSample> samples,
                       std::uint32_t mask, FieldGradients* grads);

// Importance-weighted quadratic drift penalty, summed over levels:
// gamma_k * sum_p omega_p (w_p - snapshot_p)^2. Gradients accumulate into
// grads when given. Throws on shape mismatch.
double reg_loss(const FieldModel& model, const RegularizerState& state,
                std::span<const double> gamma, FieldGradients* grads);

struct TraceRow {
  int iter = 0;
  double map_loss = 0.0;
  double reg_loss = 0.0;
  int active_levels = 0;
};

struct TrainReport {
  std::vector<TraceRow> trace;
  bool aborted = false;
  std::string message;
  double final_map_loss = 0.0;
};

std::string trace_to_csv(std::span<const TraceRow> rows);

// One mapping step: map_iters Adam iterations over minibatches of the given
// samples under the coarse-to-fine schedule, with the drift penalty when
// reg_state is non-null. Afterwards importance accumulates the per-parameter
// |gradient| mass contributed by far-range samples and the snapshot advances.
// A non-finite loss rolls every parameter back and aborts the scan.
TrainReport train_scan(FieldModel& model, std::span<const SdfSample> samples,
                       const TrainConfig& cfg, RegularizerState* reg_state,
                       std::uint64_t seed);

}  // namespace ofs
