#include "ofs/mapping.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ofs/random.hpp"

namespace ofs {

namespace {

struct BlockView {
  double* data;
  std::size_t size;
};

std::array<BlockView, 6> mlp_blocks(LevelMlp& m) {
  return {{{m.w0.data(), static_cast<std::size_t>(m.w0.size())},
           {m.b0.data(), static_cast<std::size_t>(m.b0.size())},
           {m.w1.data(), static_cast<std::size_t>(m.w1.size())},
           {m.b1.data(), static_cast<std::size_t>(m.b1.size())},
           {m.w2.data(), static_cast<std::size_t>(m.w2.size())},
           {&m.b2, 1}}};
}

std::array<BlockView, 6> mlp_blocks(MlpGrads& g) {
  return {{{g.w0.data(), static_cast<std::size_t>(g.w0.size())},
           {g.b0.data(), static_cast<std::size_t>(g.b0.size())},
           {g.w1.data(), static_cast<std::size_t>(g.w1.size())},
           {g.b1.data(), static_cast<std::size_t>(g.b1.size())},
           {g.w2.data(), static_cast<std::size_t>(g.w2.size())},
           {&g.b2, 1}}};
}

// Per-parameter timestep so that parameters untouched in an iteration keep
// their moments and bias correction; only nonzero-gradient entries move.
struct LazyAdamState {
  std::vector<double> m, v;
  std::vector<std::uint32_t> t;
  void resize(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t.assign(n, 0);
  }
};

void adam_lazy_step(std::vector<double>& params, const std::vector<double>& grads,
                    LazyAdamState& s, double lr, const AdamConfig& c) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    if (g == 0.0) continue;
    const std::uint32_t t = ++s.t[i];
    s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * g;
    s.v[i] = c.beta2 * s.v[i] + (1.0 - c.beta2) * g * g;
    const double mh = s.m[i] / (1.0 - std::pow(c.beta1, t));
    const double vh = s.v[i] / (1.0 - std::pow(c.beta2, t));
    params[i] -= lr * mh / (std::sqrt(vh) + c.eps);
  }
}

void adam_dense_step(LevelMlp& params, MlpGrads& grads, MlpGrads& m, MlpGrads& v, long t,
                     double lr, const AdamConfig& c) {
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  auto pb = mlp_blocks(params);
  auto gb = mlp_blocks(grads);
  auto mb = mlp_blocks(m);
  auto vb = mlp_blocks(v);
  for (std::size_t blk = 0; blk < pb.size(); ++blk) {
    for (std::size_t i = 0; i < pb[blk].size; ++i) {
      const double g = gb[blk].data[i];
      mb[blk].data[i] = c.beta1 * mb[blk].data[i] + (1.0 - c.beta1) * g;
      vb[blk].data[i] = c.beta2 * vb[blk].data[i] + (1.0 - c.beta2) * g * g;
      pb[blk].data[i] -=
          lr * (mb[blk].data[i] / bc1) / (std::sqrt(vb[blk].data[i] / bc2) + c.eps);
    }
  }
}

struct ModelSnapshot {
  std::vector<std::vector<double>> features;
  std::vector<LevelMlp> mlps;
};

ModelSnapshot snapshot_model(const FieldModel& model) {
  ModelSnapshot s;
  for (int l = 0; l < model.n_levels(); ++l) s.features.push_back(model.octree.feature_data(l));
  s.mlps = model.mlps;
  return s;
}

void restore_model(FieldModel& model, const ModelSnapshot& s) {
  for (int l = 0; l < model.n_levels(); ++l) model.octree.feature_data(l) = s.features[l];
  model.mlps = s.mlps;
}

bool mlp_params_finite(const LevelMlp& m) {
  return m.w0.allFinite() && m.b0.allFinite() && m.w1.allFinite() && m.b1.allFinite() &&
         m.w2.allFinite() && std::isfinite(m.b2);
}

}  // namespace

void TrainConfig::validate(int n_levels) const {
  if (static_cast<int>(gamma.size()) != n_levels)
    throw std::invalid_argument("train config: gamma must have one entry per level");
  for (std::size_t i = 1; i < gamma.size(); ++i)
    if (gamma[i] > gamma[i - 1])
      throw std::invalid_argument("train config: gamma must be non-increasing coarse to fine");
  if (map_iters < 0 || batch_size < 1)
    throw std::invalid_argument("train config: bad iteration or batch size");
}

std::uint32_t level_schedule(int iter, int total, int n_levels) {
  if (n_levels > total) throw std::invalid_argument("level_schedule: more levels than iterations");
  if (iter < 0 || iter >= total) throw std::out_of_range("level_schedule: iteration out of range");
  const int interval = total / n_levels;
  const int active = std::min(n_levels, iter / interval + 1);
  return prefix_mask(active);
}

RegularizerState RegularizerState::from_model(const FieldModel& model) {
  RegularizerState s;
  s.levels.resize(model.n_levels());
  s.sync_shapes(model);
  return s;
}

void RegularizerState::sync_shapes(const FieldModel& model) {
  if (levels.size() != static_cast<std::size_t>(model.n_levels()))
    levels.resize(model.n_levels());
  for (int l = 0; l < model.n_levels(); ++l) {
    LevelState& st = levels[l];
    const auto& live = model.octree.feature_data(l);
    if (st.feat_snapshot.size() > live.size())
      throw std::runtime_error("regularizer: live features shrank");
    for (std::size_t i = st.feat_snapshot.size(); i < live.size(); ++i) {
      st.feat_snapshot.push_back(live[i]);
      st.feat_omega.push_back(0.0);
    }
    if (st.mlp_snapshot.w0.size() == 0) {
      st.mlp_snapshot = MlpGrads::zeros_like(model.mlps[l]);
      auto sb = mlp_blocks(st.mlp_snapshot);
      auto pb = mlp_blocks(const_cast<LevelMlp&>(model.mlps[l]));
      for (std::size_t blk = 0; blk < sb.size(); ++blk)
        std::copy_n(pb[blk].data, pb[blk].size, sb[blk].data);
      st.mlp_omega = MlpGrads::zeros_like(model.mlps[l]);
    }
  }
}

MapLossResult map_loss(const FieldModel& model, std::span<const SdfSample> samples,
                       std::uint32_t mask, FieldGradients* grads) {
  if (samples.empty()) throw std::invalid_argument("map_loss: empty batch");
  std::vector<Eigen::Vector3d> xs(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) xs[i] = samples[i].position;

  const FieldBatch batch = field_predict_batch(model, xs, mask);
  int covered = 0;
  for (const auto c : batch.covered) covered += c;
  if (covered == 0) throw std::runtime_error("map_loss: no supervision (batch unobserved)");

  double loss = 0.0;
  Eigen::VectorXd upstream = Eigen::VectorXd::Zero(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!batch.covered[i]) continue;
    const double r = samples[i].label - batch.values[i];
    loss += samples[i].weight * r * r;
    upstream[i] = -2.0 * samples[i].weight * r / covered;
  }
  loss /= covered;
  if (grads) field_backward_batch(model, batch, upstream, grads, nullptr);
  return {loss, covered};
}

double reg_loss(const FieldModel& model, const RegularizerState& state,
                std::span<const double> gamma, FieldGradients* grads) {
  if (state.levels.size() != static_cast<std::size_t>(model.n_levels()) ||
      gamma.size() != state.levels.size())
    throw std::invalid_argument("reg_loss: level count mismatch");

  double total = 0.0;
  for (int l = 0; l < model.n_levels(); ++l) {
    const double g = gamma[l];
    if (g == 0.0) continue;
    const auto& st = state.levels[l];
    const auto& live = model.octree.feature_data(l);
    if (st.feat_snapshot.size() != live.size())
      throw std::invalid_argument("reg_loss: feature shape mismatch");

    for (std::size_t i = 0; i < live.size(); ++i) {
      const double om = st.feat_omega[i];
      if (om == 0.0) continue;
      const double d = live[i] - st.feat_snapshot[i];
      if (d == 0.0) continue;
      total += g * om * d * d;
      if (grads) grads->features[l][i] += 2.0 * g * om * d;
    }

    auto live_b = mlp_blocks(const_cast<LevelMlp&>(model.mlps[l]));
    auto snap_b = mlp_blocks(const_cast<MlpGrads&>(st.mlp_snapshot));
    auto om_b = mlp_blocks(const_cast<MlpGrads&>(st.mlp_omega));
    for (std::size_t blk = 0; blk < live_b.size(); ++blk) {
      if (snap_b[blk].size != live_b[blk].size)
        throw std::invalid_argument("reg_loss: mlp shape mismatch");
      for (std::size_t i = 0; i < live_b[blk].size; ++i) {
        const double om = om_b[blk].data[i];
        if (om == 0.0) continue;
        const double d = live_b[blk].data[i] - snap_b[blk].data[i];
        if (d == 0.0) continue;
        total += g * om * d * d;
        if (grads) mlp_blocks(grads->mlp[l])[blk].data[i] += 2.0 * g * om * d;
      }
    }
  }
  return total;
}

std::string trace_to_csv(std::span<const TraceRow> rows) {
  std::ostringstream out;
  out << "iter,map_loss,reg_loss,active_levels\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%d\n", r.iter, r.map_loss, r.reg_loss,
                  r.active_levels);
    out << buf;
  }
  return out.str();
}

TrainReport train_scan(FieldModel& model, std::span<const SdfSample> samples,
                       const TrainConfig& cfg, RegularizerState* reg_state,
                       std::uint64_t seed) {
  cfg.validate(model.n_levels());
  TrainReport report;
  if (cfg.map_iters == 0) return report;
  if (samples.empty()) throw std::invalid_argument("train_scan: no samples");
  if (reg_state) reg_state->sync_shapes(model);

  const ModelSnapshot rollback = snapshot_model(model);
  const int n_levels = model.n_levels();

  FieldGradients grads = FieldGradients::zeros_like(model);
  FieldGradients far_grads = FieldGradients::zeros_like(model);
  FieldGradients omega_accum = FieldGradients::zeros_like(model);

  std::vector<LazyAdamState> feat_adam(n_levels);
  for (int l = 0; l < n_levels; ++l) feat_adam[l].resize(model.octree.feature_data(l).size());
  std::vector<MlpGrads> mlp_m, mlp_v;
  std::vector<long> mlp_t(n_levels, 0);
  for (int l = 0; l < n_levels; ++l) {
    mlp_m.push_back(MlpGrads::zeros_like(model.mlps[l]));
    mlp_v.push_back(MlpGrads::zeros_like(model.mlps[l]));
  }

  Rng rng(mix_seed(seed, 0x747261696eULL));
  std::vector<Eigen::Vector3d> xs(cfg.batch_size);
  std::vector<const SdfSample*> picked(cfg.batch_size);

  for (int iter = 0; iter < cfg.map_iters; ++iter) {
    const std::uint32_t mask = level_schedule(iter, cfg.map_iters, n_levels);

    int n_far = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      picked[b] = &samples[rng.uniform_index(samples.size())];
      xs[b] = picked[b]->position;
      n_far += picked[b]->range_class == RangeClass::kFar;
    }

    const FieldBatch batch = field_predict_batch(model, xs, mask);
    int covered = 0;
    for (const auto c : batch.covered) covered += c;
    if (covered == 0) throw std::runtime_error("train_scan: no supervision (batch unobserved)");

    double loss_map = 0.0;
    Eigen::VectorXd up_close = Eigen::VectorXd::Zero(cfg.batch_size);
    Eigen::VectorXd up_far = Eigen::VectorXd::Zero(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (!batch.covered[b]) continue;
      const double r = picked[b]->label - batch.values[b];
      loss_map += picked[b]->weight * r * r;
      const double u = -2.0 * picked[b]->weight * r / covered;
      if (picked[b]->range_class == RangeClass::kFar)
        up_far[b] = u;
      else
        up_close[b] = u;
    }
    loss_map /= covered;

    grads.set_zero();
    if (n_far > 0) {
      far_grads.set_zero();
      field_backward_batch(model, batch, up_far, &far_grads, nullptr);
      for (int l = 0; l < n_levels; ++l) {
        auto& fg = far_grads.features[l];
        auto& og = omega_accum.features[l];
        auto& g = grads.features[l];
        for (std::size_t i = 0; i < fg.size(); ++i) {
          og[i] += std::abs(fg[i]);
          g[i] += fg[i];
        }
        auto fb = mlp_blocks(far_grads.mlp[l]);
        auto ob = mlp_blocks(omega_accum.mlp[l]);
        auto gb = mlp_blocks(grads.mlp[l]);
        for (std::size_t blk = 0; blk < fb.size(); ++blk)
          for (std::size_t i = 0; i < fb[blk].size; ++i) {
            ob[blk].data[i] += std::abs(fb[blk].data[i]);
            gb[blk].data[i] += fb[blk].data[i];
          }
      }
      field_backward_batch(model, batch, up_close, &grads, nullptr);
    } else {
      field_backward_batch(model, batch, up_close, &grads, nullptr);
    }

    const double loss_reg =
        reg_state ? reg_loss(model, *reg_state, cfg.gamma, &grads) : 0.0;

    if (!std::isfinite(loss_map) || !std::isfinite(loss_reg)) {
      restore_model(model, rollback);
      report.aborted = true;
      std::ostringstream msg;
      msg << "train_scan: non-finite loss at iteration " << iter << " (map=" << loss_map
          << ", reg=" << loss_reg << "); parameters rolled back";
      report.message = msg.str();
      return report;
    }

    for (int l = 0; l < n_levels; ++l) {
      if (!(mask >> l & 1)) continue;
      adam_lazy_step(model.octree.feature_data(l), grads.features[l], feat_adam[l],
                     cfg.lr_features, cfg.adam);
      adam_dense_step(model.mlps[l], grads.mlp[l], mlp_m[l], mlp_v[l], ++mlp_t[l], cfg.lr_mlp,
                      cfg.adam);
      if (!mlp_params_finite(model.mlps[l])) {
        restore_model(model, rollback);
        report.aborted = true;
        report.message = "train_scan: non-finite parameters after update; rolled back";
        return report;
      }
    }

    report.trace.push_back({iter, loss_map, loss_reg, std::popcount(mask)});
  }

  if (reg_state) {
    for (int l = 0; l < n_levels; ++l) {
      auto& st = reg_state->levels[l];
      const auto& live = model.octree.feature_data(l);
      const auto& oacc = omega_accum.features[l];
      for (std::size_t i = 0; i < live.size(); ++i) {
        st.feat_omega[i] += oacc[i];
        st.feat_snapshot[i] = live[i];
      }
      auto ob = mlp_blocks(st.mlp_omega);
      auto sb = mlp_blocks(st.mlp_snapshot);
      auto ab = mlp_blocks(omega_accum.mlp[l]);
      auto pb = mlp_blocks(model.mlps[l]);
      for (std::size_t blk = 0; blk < ob.size(); ++blk)
        for (std::size_t i = 0; i < ob[blk].size; ++i) {
          ob[blk].data[i] += ab[blk].data[i];
          sb[blk].data[i] = pb[blk].data[i];
        }
    }
  }

  if (!report.trace.empty()) report.final_map_loss = report.trace.back().map_loss;
  return report;
}

}  // namespace ofs
