#include "ofs/level_network.hpp"

#include <cmath>
#include <stdexcept>

namespace ofs {

namespace {

inline double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void activate(const Eigen::MatrixXd& pre, Eigen::MatrixXd* act, Activation a) {
  if (a == Activation::kIdentity) {
    *act = pre;
    return;
  }
  *act = pre.unaryExpr([](double v) { return softplus(v); });
}

// Derivative of the activation evaluated at the pre-activation.
void activation_slope(const Eigen::MatrixXd& pre, Eigen::MatrixXd* slope, Activation a) {
  if (a == Activation::kIdentity) {
    slope->setOnes(pre.rows(), pre.cols());
    return;
  }
  *slope = pre.unaryExpr([](double v) { return sigmoid(v); });
}

}  // namespace

LevelMlp LevelMlp::init(int feature_dim, Rng& rng) {
  LevelMlp m;
  m.feature_dim = feature_dim;
  const int din = m.input_dim();
  auto fill = [&rng](Eigen::Ref<Eigen::MatrixXd> w, int fan_in) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-s, s);
  };
  m.w0.resize(kHidden, din);
  fill(m.w0, din);
  m.b0 = Eigen::VectorXd::Zero(kHidden);
  m.w1.resize(kHidden, kHidden);
  fill(m.w1, kHidden);
  m.b1 = Eigen::VectorXd::Zero(kHidden);
  m.w2.resize(kHidden);
  fill(m.w2, kHidden);
  m.b2 = 0.0;
  return m;
}

MlpGrads MlpGrads::zeros_like(const LevelMlp& mlp) {
  MlpGrads g;
  g.w0 = Eigen::MatrixXd::Zero(mlp.w0.rows(), mlp.w0.cols());
  g.b0 = Eigen::VectorXd::Zero(mlp.b0.size());
  g.w1 = Eigen::MatrixXd::Zero(mlp.w1.rows(), mlp.w1.cols());
  g.b1 = Eigen::VectorXd::Zero(mlp.b1.size());
  g.w2 = Eigen::VectorXd::Zero(mlp.w2.size());
  g.b2 = 0.0;
  return g;
}

void MlpGrads::set_zero() {
  w0.setZero();
  b0.setZero();
  w1.setZero();
  b1.setZero();
  w2.setZero();
  b2 = 0.0;
}

double level_forward(const LevelMlp& mlp, const CornerBundle& bundle, LevelTape* tape) {
  const int f = mlp.feature_dim;
  Eigen::VectorXd input(mlp.input_dim());
  for (int j = 0; j < 8; ++j)
    input.segment(j * f, f) = bundle.weights[j] * bundle.features.col(j);
  input.tail<3>() = bundle.local;

  Eigen::VectorXd pre0 = mlp.w0 * input + mlp.b0;
  Eigen::VectorXd act0(pre0.size()), pre1, act1;
  if (mlp.activation == Activation::kIdentity)
    act0 = pre0;
  else
    act0 = pre0.unaryExpr([](double v) { return softplus(v); });
  pre1 = mlp.w1 * act0 + mlp.b1;
  if (mlp.activation == Activation::kIdentity)
    act1 = pre1;
  else
    act1 = pre1.unaryExpr([](double v) { return softplus(v); });
  const double value = mlp.w2.dot(act1) + mlp.b2;

  if (tape) {
    tape->input = std::move(input);
    tape->pre0 = std::move(pre0);
    tape->act0 = std::move(act0);
    tape->pre1 = std::move(pre1);
    tape->act1 = std::move(act1);
    tape->value = value;
    tape->bundle = bundle;
  }
  return value;
}

void level_backward(const LevelMlp& mlp, const LevelTape& tape, double upstream,
                    MlpGrads* grads, std::vector<double>* feature_grads,
                    Eigen::Vector3d* coord_grad) {
  const int f = mlp.feature_dim;
  auto slope = [&mlp](const Eigen::VectorXd& pre) {
    if (mlp.activation == Activation::kIdentity)
      return Eigen::VectorXd(Eigen::VectorXd::Ones(pre.size()));
    return Eigen::VectorXd(pre.unaryExpr([](double v) { return sigmoid(v); }));
  };

  Eigen::VectorXd d_act1 = upstream * mlp.w2;
  Eigen::VectorXd d_pre1 = d_act1.cwiseProduct(slope(tape.pre1));
  Eigen::VectorXd d_act0 = mlp.w1.transpose() * d_pre1;
  Eigen::VectorXd d_pre0 = d_act0.cwiseProduct(slope(tape.pre0));
  Eigen::VectorXd d_input = mlp.w0.transpose() * d_pre0;

  if (grads) {
    grads->w2 += upstream * tape.act1;
    grads->b2 += upstream;
    grads->w1 += d_pre1 * tape.act0.transpose();
    grads->b1 += d_pre1;
    grads->w0 += d_pre0 * tape.input.transpose();
    grads->b0 += d_pre0;
  }

  const bool want_features = feature_grads != nullptr;
  const bool want_coord = coord_grad != nullptr;
  if (!want_features && !want_coord) return;

  Eigen::MatrixXd dz(f, 8);
  for (int j = 0; j < 8; ++j) dz.col(j) = d_input.segment(j * f, f);

  Eigen::MatrixXd fgrads;
  Eigen::Vector3d weight_path;
  FeatureOctree::interpolate_gradients(tape.bundle, dz, want_features ? &fgrads : nullptr,
                                       want_coord ? &weight_path : nullptr);
  if (want_features) {
    for (int j = 0; j < 8; ++j) {
      double* dst = feature_grads->data() + tape.bundle.slots[j] * f;
      for (int c = 0; c < f; ++c) dst[c] += fgrads(c, j);
    }
  }
  if (want_coord)
    *coord_grad += weight_path + d_input.tail<3>() / tape.bundle.voxel_size;
}

FieldModel FieldModel::create(const FeatureOctree::Config& cfg) {
  FieldModel m{FeatureOctree(cfg), {}};
  Rng rng(mix_seed(cfg.seed, 0x6d6c70ULL));
  m.mlps.reserve(cfg.n_levels);
  for (int i = 0; i < cfg.n_levels; ++i) m.mlps.push_back(LevelMlp::init(cfg.feature_dim, rng));
  return m;
}

std::uint64_t FieldModel::param_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const double* p, std::size_t n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (int l = 0; l < n_levels(); ++l) {
    const auto& feats = octree.feature_data(l);
    mix(feats.data(), feats.size());
    const LevelMlp& m = mlps[l];
    mix(m.w0.data(), m.w0.size());
    mix(m.b0.data(), m.b0.size());
    mix(m.w1.data(), m.w1.size());
    mix(m.b1.data(), m.b1.size());
    mix(m.w2.data(), m.w2.size());
    mix(&m.b2, 1);
  }
  return h;
}

double field_predict(const FieldModel& model, const Eigen::Vector3d& x, std::uint32_t mask,
                     FieldTape* tape, bool boundary_snap) {
  double sum = 0.0;
  if (tape) {
    tape->per_level.assign(model.n_levels(), std::nullopt);
    tape->fully_covered = true;
    tape->observed_levels = 0;
  }
  bool covered = true;
  int observed = 0;
  for (int l = 0; l < model.n_levels(); ++l) {
    if (!(mask >> l & 1)) continue;
    auto bundle = model.octree.interpolate(l, x, boundary_snap);
    if (!bundle) {
      covered = false;
      continue;
    }
    ++observed;
    if (tape) {
      LevelTape lt;
      sum += level_forward(model.mlps[l], *bundle, &lt);
      tape->per_level[l] = std::move(lt);
    } else {
      sum += level_forward(model.mlps[l], *bundle, nullptr);
    }
  }
  if (tape) {
    tape->value = sum;
    tape->fully_covered = covered;
    tape->observed_levels = observed;
  }
  return sum;
}

FieldGradients FieldGradients::zeros_like(const FieldModel& model) {
  FieldGradients g;
  g.mlp.reserve(model.n_levels());
  g.features.resize(model.n_levels());
  for (int l = 0; l < model.n_levels(); ++l) {
    g.mlp.push_back(MlpGrads::zeros_like(model.mlps[l]));
    g.features[l].assign(model.octree.feature_data(l).size(), 0.0);
  }
  return g;
}

void FieldGradients::set_zero() {
  for (auto& m : mlp) m.set_zero();
  for (auto& f : features) std::fill(f.begin(), f.end(), 0.0);
}

void FieldGradients::sync_shapes(const FieldModel& model) {
  for (int l = 0; l < model.n_levels(); ++l)
    features[l].resize(model.octree.feature_data(l).size(), 0.0);
}

void field_backward(const FieldModel& model, const FieldTape& tape, double upstream,
                    FieldGradients* grads, Eigen::Vector3d* coord_grad) {
  if (coord_grad) coord_grad->setZero();
  if (upstream == 0.0) return;
  for (int l = 0; l < model.n_levels(); ++l) {
    if (!tape.per_level[l]) continue;
    level_backward(model.mlps[l], *tape.per_level[l], upstream,
                   grads ? &grads->mlp[l] : nullptr,
                   grads ? &grads->features[l] : nullptr, coord_grad);
  }
}

FieldBatch field_predict_batch(const FieldModel& model, std::span<const Eigen::Vector3d> xs,
                               std::uint32_t mask, bool boundary_snap) {
  const auto n = static_cast<Eigen::Index>(xs.size());
  FieldBatch batch;
  batch.mask = mask;
  batch.values = Eigen::VectorXd::Zero(n);
  batch.covered.assign(xs.size(), 1);
  batch.levels.resize(model.n_levels());

  for (int l = 0; l < model.n_levels(); ++l) {
    if (!(mask >> l & 1)) continue;
    LevelBatch& lb = batch.levels[l];
    lb.bundles.reserve(xs.size());
    lb.sample_index.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      auto bundle = model.octree.interpolate(l, xs[i], boundary_snap);
      if (!bundle) {
        batch.covered[i] = 0;
        continue;
      }
      lb.bundles.push_back(std::move(*bundle));
      lb.sample_index.push_back(static_cast<std::int32_t>(i));
    }
    const auto b = static_cast<Eigen::Index>(lb.bundles.size());
    if (b == 0) continue;

    const LevelMlp& mlp = model.mlps[l];
    const int f = mlp.feature_dim;
    lb.input.resize(mlp.input_dim(), b);
    for (Eigen::Index col = 0; col < b; ++col) {
      const CornerBundle& cb = lb.bundles[col];
      for (int j = 0; j < 8; ++j)
        lb.input.col(col).segment(j * f, f) = cb.weights[j] * cb.features.col(j);
      lb.input.col(col).tail<3>() = cb.local;
    }
    lb.pre0 = (mlp.w0 * lb.input).colwise() + mlp.b0;
    activate(lb.pre0, &lb.act0, mlp.activation);
    lb.pre1 = (mlp.w1 * lb.act0).colwise() + mlp.b1;
    activate(lb.pre1, &lb.act1, mlp.activation);
    lb.value = (mlp.w2.transpose() * lb.act1).array() + mlp.b2;
    for (Eigen::Index col = 0; col < b; ++col)
      batch.values[lb.sample_index[col]] += lb.value[col];
  }
  return batch;
}

void field_backward_batch(const FieldModel& model, const FieldBatch& batch,
                          const Eigen::VectorXd& upstream, FieldGradients* grads,
                          std::vector<Eigen::Vector3d>* coord_grads) {
  if (coord_grads)
    coord_grads->assign(batch.covered.size(), Eigen::Vector3d::Zero());

  for (int l = 0; l < model.n_levels(); ++l) {
    const LevelBatch& lb = batch.levels[l];
    const auto b = static_cast<Eigen::Index>(lb.bundles.size());
    if (b == 0) continue;
    const LevelMlp& mlp = model.mlps[l];
    const int f = mlp.feature_dim;

    Eigen::RowVectorXd dout(b);
    for (Eigen::Index col = 0; col < b; ++col) dout[col] = upstream[lb.sample_index[col]];

    Eigen::MatrixXd slope1, slope0;
    activation_slope(lb.pre1, &slope1, mlp.activation);
    activation_slope(lb.pre0, &slope0, mlp.activation);

    Eigen::MatrixXd d_act1 = mlp.w2 * dout;                       // 32 x b
    Eigen::MatrixXd d_pre1 = d_act1.cwiseProduct(slope1);
    Eigen::MatrixXd d_act0 = mlp.w1.transpose() * d_pre1;
    Eigen::MatrixXd d_pre0 = d_act0.cwiseProduct(slope0);
    Eigen::MatrixXd d_input = mlp.w0.transpose() * d_pre0;        // D x b

    if (grads) {
      MlpGrads& g = grads->mlp[l];
      g.w2 += lb.act1 * dout.transpose();
      g.b2 += dout.sum();
      g.w1 += d_pre1 * lb.act0.transpose();
      g.b1 += d_pre1.rowwise().sum();
      g.w0 += d_pre0 * lb.input.transpose();
      g.b0 += d_pre0.rowwise().sum();
    }

    std::vector<double>* fg = grads ? &grads->features[l] : nullptr;
    for (Eigen::Index col = 0; col < b; ++col) {
      if (dout[col] == 0.0 && !coord_grads) continue;
      const CornerBundle& cb = lb.bundles[col];
      Eigen::Vector3d cg = Eigen::Vector3d::Zero();
      const Eigen::Vector3d& u = cb.local;
      for (int j = 0; j < 8; ++j) {
        const auto dz_j = d_input.col(col).segment(j * f, f);
        if (fg) {
          double* dst = fg->data() + cb.slots[j] * f;
          for (int c = 0; c < f; ++c) dst[c] += cb.weights[j] * dz_j[c];
        }
        if (coord_grads) {
          const double hj_dot = cb.features.col(j).dot(dz_j);
          for (int d = 0; d < 3; ++d) {
            double dw = (j >> d & 1) ? 1.0 : -1.0;
            for (int e = 0; e < 3; ++e) {
              if (e == d) continue;
              dw *= (j >> e & 1) ? u[e] : 1.0 - u[e];
            }
            cg[d] += dw * hj_dot;
          }
        }
      }
      if (coord_grads) {
        cg /= cb.voxel_size;
        cg += d_input.col(col).tail<3>() / cb.voxel_size;
        (*coord_grads)[lb.sample_index[col]] += cg;
      }
    }
  }
}

}  // namespace ofs
