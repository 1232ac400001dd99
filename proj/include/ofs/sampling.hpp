#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "ofs/se3.hpp"

namespace ofs {

struct LidarScan {
  std::vector<Eigen::Vector3d> points;  // sensor frame, meters
  std::vector<float> intensities;       // optional, empty or per point
  int index = 0;                        // timestamp index
};

enum class RangeClass : std::uint8_t { kClose, kFar };
enum class SampleOrigin : std::uint8_t { kMeasured, kReplay };

// One supervised point: world position and truncated signed distance label,
// positive in free space.
struct SdfSample {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double label = 0.0;
  double weight = 1.0;
  RangeClass range_class = RangeClass::kClose;
  SampleOrigin origin = SampleOrigin::kMeasured;
};

// Sensor-frame variant used by the pose optimizer: the world position is
// pose * point_sensor, everything else is pose-independent.
struct BeamSample {
  Eigen::Vector3d point_sensor = Eigen::Vector3d::Zero();
  double label = 0.0;
  double weight = 1.0;
  RangeClass range_class = RangeClass::kClose;
};

struct SamplingConfig {
  int surf_per_beam = 3;
  int free_per_beam = 3;
  double sigma_surf = 0.05;   // stddev of along-beam surface offsets (meters)
  double truncation = 0.15;   // tau
  double min_range = 1.5;
  double max_range = 60.0;
  double d_split = 30.0;      // close/far boundary
  int max_beams = 20000;
  double surf_weight = 1.0;
  double free_weight = 0.5;
  double free_lo_frac = 0.1;  // free-space samples span [0.1 r, r - tau]
};

// Draws near-surface and free-space samples per retained beam, in the sensor
// frame. Deterministic per-beam seed derivation; beams outside
// [min_range, max_range) are dropped, and at most max_beams are kept.
// Throws std::invalid_argument if no beam survives filtering.
std::vector<BeamSample> sample_scan_sensor(const LidarScan& scan, const SamplingConfig& cfg,
                                           std::uint64_t seed);

// World-frame samples for mapping: sample_scan_sensor transformed by pose.
std::vector<SdfSample> sample_scan(const LidarScan& scan, const Pose& pose,
                                   const SamplingConfig& cfg, std::uint64_t seed);

struct FieldModel;

// Self-distillation samples: random points inside previously trained fine
// voxels, labeled with the current model prediction (all levels active),
// clamped to the truncation band.
std::vector<SdfSample> make_replay_samples(const FieldModel& model,
                                           std::span<const std::uint64_t> fine_voxel_keys,
                                           int budget, double truncation, double weight,
                                           std::uint64_t seed);

}  // namespace ofs
