#include "ofs/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ofs/level_network.hpp"
#include "ofs/random.hpp"

namespace ofs {

namespace {

double clamp_label(double y, double tau) { return std::clamp(y, -tau, tau); }

}  // namespace

std::vector<BeamSample> sample_scan_sensor(const LidarScan& scan, const SamplingConfig& cfg,
                                           std::uint64_t seed) {
  if (scan.points.empty()) throw std::invalid_argument("sample_scan: empty scan");

  std::vector<std::uint32_t> beams;
  beams.reserve(scan.points.size());
  for (std::uint32_t i = 0; i < scan.points.size(); ++i) {
    const double r = scan.points[i].norm();
    if (r >= cfg.min_range && r < cfg.max_range && scan.points[i].allFinite())
      beams.push_back(i);
  }
  if (beams.empty()) throw std::invalid_argument("sample_scan: no beams within range limits");

  if (static_cast<int>(beams.size()) > cfg.max_beams) {
    // Partial Fisher-Yates, then restore scan order for stable iteration.
    Rng pick(mix_seed(seed, 0x7375627365ULL));
    for (int i = 0; i < cfg.max_beams; ++i) {
      const std::size_t j = i + pick.uniform_index(beams.size() - i);
      std::swap(beams[i], beams[j]);
    }
    beams.resize(cfg.max_beams);
    std::sort(beams.begin(), beams.end());
  }

  std::vector<BeamSample> out;
  out.reserve(beams.size() * (cfg.surf_per_beam + cfg.free_per_beam));
  for (const std::uint32_t bi : beams) {
    const Eigen::Vector3d& endpoint = scan.points[bi];
    const double range = endpoint.norm();
    const Eigen::Vector3d dir = endpoint / range;
    const RangeClass rc = range < cfg.d_split ? RangeClass::kClose : RangeClass::kFar;
    Rng rng(mix_seed(seed, bi));

    for (int k = 0; k < cfg.surf_per_beam; ++k) {
      const double s = rng.normal(0.0, cfg.sigma_surf);
      BeamSample smp;
      smp.point_sensor = endpoint + s * dir;
      smp.label = clamp_label(-s, cfg.truncation);
      smp.weight = cfg.surf_weight;
      smp.range_class = rc;
      out.push_back(smp);
    }

    const double lo = cfg.free_lo_frac * range;
    const double hi = range - cfg.truncation;
    if (hi > lo) {
      for (int k = 0; k < cfg.free_per_beam; ++k) {
        const double d = rng.uniform(lo, hi);
        BeamSample smp;
        smp.point_sensor = d * dir;
        smp.label = cfg.truncation;
        smp.weight = cfg.free_weight;
        smp.range_class = rc;
        out.push_back(smp);
      }
    }
  }
  return out;
}

std::vector<SdfSample> sample_scan(const LidarScan& scan, const Pose& pose,
                                   const SamplingConfig& cfg, std::uint64_t seed) {
  const auto local = sample_scan_sensor(scan, cfg, seed);
  std::vector<SdfSample> out;
  out.reserve(local.size());
  for (const auto& b : local) {
    SdfSample s;
    s.position = pose.transform(b.point_sensor);
    s.label = b.label;
    s.weight = b.weight;
    s.range_class = b.range_class;
    s.origin = SampleOrigin::kMeasured;
    out.push_back(s);
  }
  return out;
}

std::vector<SdfSample> make_replay_samples(const FieldModel& model,
                                           std::span<const std::uint64_t> fine_voxel_keys,
                                           int budget, double truncation, double weight,
                                           std::uint64_t seed) {
  std::vector<SdfSample> out;
  if (budget <= 0 || fine_voxel_keys.empty()) return out;

  const int fine = model.n_levels() - 1;
  const double vs = model.octree.levels()[fine].voxel_size;
  Rng rng(mix_seed(seed, 0x7265706c6179ULL));
  const std::uint32_t mask = all_levels_mask(model.n_levels());

  std::vector<Eigen::Vector3d> positions;
  positions.reserve(budget);
  for (int i = 0; i < budget; ++i) {
    const std::uint64_t vkey = fine_voxel_keys[rng.uniform_index(fine_voxel_keys.size())];
    const Eigen::Vector3d corner = model.octree.voxel_min_corner(fine, vkey);
    Eigen::Vector3d u(rng.uniform(), rng.uniform(), rng.uniform());
    positions.push_back(corner + vs * u);
  }

  const FieldBatch batch = field_predict_batch(model, positions, mask);
  out.reserve(budget);
  for (int i = 0; i < budget; ++i) {
    SdfSample s;
    s.position = positions[i];
    s.label = clamp_label(batch.values[i], truncation);
    s.weight = weight;
    s.range_class = RangeClass::kClose;
    s.origin = SampleOrigin::kReplay;
    out.push_back(s);
  }
  return out;
}

}  // namespace ofs
