#include "paco/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>

#include "paco/eval.hpp"
#include "paco/parallel.hpp"

namespace paco {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kProfileStream = 3;

Vector make_view(std::span<const double> feature, double sigma, Rng& rng) {
  Vector v(feature.begin(), feature.end());
  for (double& x : v) x += sigma * rng.normal();
  return l2_normalize(v);
}

struct AnchorOutcome {
  double loss = 0.0;
  LossBreakdown breakdown;
  std::size_t positives = 0;
  Vector d_rep;
  Vector d_proj;
  Matrix d_centers;
  Vector class_attribution;  // supcon: summed candidate gradients per class, flattened
};

struct BatchOutcome {
  double loss = 0.0;
  LossBreakdown breakdown;  // batch means
  double mean_positives = 0.0;
  EncoderParams encoder_grads;
  Matrix center_grads;
  std::vector<double> class_norms;
  std::vector<LabeledKey> keys;
};

// Forward and backward for one batch. Does not touch model parameters.
BatchOutcome run_batch(const Model& model, const SyntheticDataset& data, const TrainConfig& cfg,
                       std::span<const std::size_t> batch, Rng& rng) {
  const std::size_t b = batch.size();
  const std::size_t n_classes = data.n_classes();
  const std::size_t dim = cfg.embedding_dim;

  std::vector<EncoderActivations> query_acts;
  std::vector<Vector> z_v1, z_v2;
  std::vector<std::size_t> labels;
  query_acts.reserve(b);
  for (std::size_t idx : batch) {
    const Vector v1 = make_view(data.features[idx], cfg.view_sigma, rng);
    const Vector v2 = make_view(data.features[idx], cfg.view_sigma, rng);
    query_acts.push_back(encoder_forward(model.query, v1));
    z_v1.push_back(query_acts.back().projected);
    z_v2.push_back(encoder_forward(model.key, v2).projected);
    labels.push_back(data.labels[idx]);
  }

  PacoConfig paco_cfg;
  paco_cfg.alpha = cfg.alpha;
  paco_cfg.temperature = cfg.temperature;
  paco_cfg.rebalance_centers = cfg.loss_kind == LossKind::kPacoRebalanced;

  std::vector<AnchorOutcome> outcomes(b);
  parallel_for(b, cfg.threads, [&](std::size_t i) {
    const ContrastSet cs = build_contrast_set(i, z_v1, z_v2, labels, model.queue);
    const Vector& x = query_acts[i].rep;
    const Vector& g = query_acts[i].projected;
    AnchorOutcome& o = outcomes[i];
    o.positives = cs.positive_count();
    switch (cfg.loss_kind) {
      case LossKind::kCe: {
        auto r = cross_entropy_loss(x, model.bank.centers, labels[i], cfg.temperature);
        o.loss = r.loss;
        o.d_rep = std::move(r.d_query);
        o.d_proj.assign(dim, 0.0);
        o.d_centers = std::move(r.d_weights);
        break;
      }
      case LossKind::kSupcon: {
        auto r = supcon_loss(g, cs, cfg.temperature, /*key_gradients=*/true);
        o.loss = r.loss;
        o.d_rep.assign(dim, 0.0);
        o.d_proj = std::move(r.grads.d_anchor_post);
        o.class_attribution.assign(n_classes * dim, 0.0);
        for (std::size_t k = 0; k < cs.size(); ++k) {
          std::span<double> slot(o.class_attribution.data() + cs.labels[k] * dim, dim);
          axpy(1.0, r.grads.d_candidates.row(k), slot);
        }
        break;
      }
      case LossKind::kPaco:
      case LossKind::kPacoRebalanced: {
        auto r = paco_loss(x, g, cs, model.bank, labels[i], paco_cfg);
        o.loss = r.loss;
        o.breakdown = r.breakdown;
        o.d_rep = std::move(r.grads.d_anchor_pre);
        o.d_proj = std::move(r.grads.d_anchor_post);
        o.d_centers = std::move(r.grads.d_centers);
        break;
      }
      case LossKind::kMultitask: {
        auto r = multitask_loss(x, g, cs, model.bank, labels[i], cfg.multitask_lambda,
                                cfg.temperature);
        o.loss = r.loss;
        o.d_rep = std::move(r.grads.d_anchor_pre);
        o.d_proj = std::move(r.grads.d_anchor_post);
        o.d_centers = std::move(r.grads.d_centers);
        break;
      }
    }
  });

  // Fixed-order reduction.
  BatchOutcome out;
  const double inv_b = 1.0 / static_cast<double>(b);
  out.encoder_grads = EncoderParams::zeros(model.query.input_dim(), dim);
  out.center_grads = Matrix(n_classes, model.bank.dim());
  std::vector<double> attribution(n_classes * dim, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    AnchorOutcome& o = outcomes[i];
    out.loss += o.loss * inv_b;
    out.mean_positives += static_cast<double>(o.positives) * inv_b;
    out.breakdown.total += o.breakdown.total * inv_b;
    out.breakdown.l_sup += o.breakdown.l_sup * inv_b;
    out.breakdown.l_supcon += o.breakdown.l_supcon * inv_b;
    out.breakdown.l_extra += o.breakdown.l_extra * inv_b;
    out.breakdown.p_sup += o.breakdown.p_sup * inv_b;
    out.breakdown.p_supcon += o.breakdown.p_supcon * inv_b;
    for (double& v : o.d_rep) v *= inv_b;
    for (double& v : o.d_proj) v *= inv_b;
    encoder_backward(model.query, query_acts[i], o.d_rep, o.d_proj, out.encoder_grads);
    if (!o.d_centers.data().empty()) axpy(inv_b, o.d_centers.data(), out.center_grads.data());
    if (!o.class_attribution.empty()) axpy(inv_b, o.class_attribution, attribution);
  }

  out.class_norms.resize(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    out.class_norms[c] = cfg.loss_kind == LossKind::kSupcon
                             ? l2_norm(std::span<const double>(attribution.data() + c * dim, dim))
                             : l2_norm(out.center_grads.row(c));
  }
  out.keys.reserve(b);
  for (std::size_t i = 0; i < b; ++i) out.keys.push_back({std::move(z_v2[i]), labels[i]});
  return out;
}

bool finite_params(const EncoderParams& p) {
  for (auto t : p.tensors()) {
    if (!all_finite(t)) return false;
  }
  return true;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::vector<std::size_t> order,
                                                    std::size_t batch_size, Rng& rng) {
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < order.size(); s += batch_size) {
    const std::size_t e = std::min(order.size(), s + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                         order.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return batches;
}

}  // namespace

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kCe: return "ce";
    case LossKind::kSupcon: return "supcon";
    case LossKind::kPaco: return "paco";
    case LossKind::kPacoRebalanced: return "paco_rebalanced";
    case LossKind::kMultitask: return "multitask";
  }
  return "unknown";
}

LossKind parse_loss_kind(std::string_view name) {
  for (LossKind k : {LossKind::kCe, LossKind::kSupcon, LossKind::kPaco,
                     LossKind::kPacoRebalanced, LossKind::kMultitask}) {
    if (to_string(k) == name) return k;
  }
  throw ContractViolation("unknown loss kind '" + std::string(name) + "'");
}

bool uses_centers(LossKind kind) { return kind != LossKind::kSupcon; }

bool operator==(const EpochRecord& a, const EpochRecord& b) {
  auto same = [](double x, double y) {
    return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
  };
  if (a.epoch != b.epoch || a.grad_norms.size() != b.grad_norms.size()) return false;
  const double lhs[] = {a.lr, a.loss, a.l_sup, a.l_supcon, a.l_extra, a.p_sup, a.p_supcon,
                        a.mean_positives};
  const double rhs[] = {b.lr, b.loss, b.l_sup, b.l_supcon, b.l_extra, b.p_sup, b.p_supcon,
                        b.mean_positives};
  for (std::size_t i = 0; i < std::size(lhs); ++i) {
    if (!same(lhs[i], rhs[i])) return false;
  }
  for (std::size_t i = 0; i < a.grad_norms.size(); ++i) {
    if (!same(a.grad_norms[i], b.grad_norms[i])) return false;
  }
  return true;
}

TrainConfig TrainConfig::cifar_lt_preset() {
  TrainConfig c;
  c.temperature = 0.05;
  c.alpha = 0.02;
  return c;
}

void TrainConfig::validate() const {
  require(alpha > 0.0 && alpha < 1.0, "TrainConfig: alpha must lie in (0, 1)");
  require(temperature > 0.0, "TrainConfig: temperature must be positive");
  require(multitask_lambda >= 0.0, "TrainConfig: multitask_lambda must be nonnegative");
  require(queue_capacity > 0, "TrainConfig: queue_capacity must be positive");
  require(embedding_dim > 0, "TrainConfig: embedding_dim must be positive");
  require(key_momentum >= 0.0 && key_momentum <= 1.0, "TrainConfig: key_momentum must lie in [0, 1]");
  require(sgd_momentum >= 0.0 && sgd_momentum < 1.0, "TrainConfig: sgd_momentum must lie in [0, 1)");
  require(base_lr > 0.0, "TrainConfig: base_lr must be positive");
  require(batch_size > 0, "TrainConfig: batch_size must be positive");
  require(view_sigma >= 0.0, "TrainConfig: view_sigma must be nonnegative");
  require(threads > 0, "TrainConfig: threads must be positive");
}

void sgd_momentum_step(std::span<double> params, std::span<const double> grads,
                       std::span<double> velocity, double lr, double mu) {
  require(params.size() == grads.size() && params.size() == velocity.size(),
          "sgd_momentum_step: shape mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = mu * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

Vector Model::represent(std::span<const double> input) const {
  return l2_normalize(matvec(query.encoder, input));
}

Model init_model(const SyntheticDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  require(!data.train_indices.empty(), "init_model: dataset has no training samples");
  Rng init(derive_seed(cfg.seed, kInitStream));
  Model m;
  m.query = EncoderParams::random(data.dim, cfg.embedding_dim, init);
  m.key = m.query;
  m.query_velocity = EncoderParams::zeros(data.dim, cfg.embedding_dim);
  m.bank.centers = Matrix(data.n_classes(), cfg.embedding_dim);
  for (std::size_t c = 0; c < data.n_classes(); ++c) {
    const Vector u = init.unit_vector(cfg.embedding_dim);
    for (std::size_t j = 0; j < u.size(); ++j) m.bank.centers(c, j) = 0.1 * u[j];
  }
  m.bank.class_freq = class_frequency(data.profile);
  m.center_velocity = Matrix(data.n_classes(), cfg.embedding_dim);
  m.queue = MomentumQueue(cfg.queue_capacity, cfg.embedding_dim);
  m.rng = Rng(derive_seed(cfg.seed, kTrainStream));
  return m;
}

TrainingDiverged::TrainingDiverged(std::int64_t step, std::size_t epoch, const std::string& detail)
    : std::runtime_error("training diverged at step " + std::to_string(step) + " (epoch " +
                         std::to_string(epoch) + "): " + detail),
      step_(step),
      epoch_(epoch) {}

TrainResult train(const SyntheticDataset& data, const TrainConfig& cfg) {
  TrainResult result{init_model(data, cfg), {}};
  Model& m = result.model;
  const std::size_t n_train = data.train_indices.size();
  const std::size_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const Schedule schedule{cfg.base_lr,
                          static_cast<std::int64_t>(std::max<std::size_t>(1, steps_per_epoch * cfg.epochs))};
  const bool paco_kind =
      cfg.loss_kind == LossKind::kPaco || cfg.loss_kind == LossKind::kPacoRebalanced;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cosine_lr(m.step, schedule);
    rec.grad_norms.assign(data.n_classes(), 0.0);
    const auto batches = epoch_batches(data.train_indices, cfg.batch_size, m.rng);
    const double inv_steps = 1.0 / static_cast<double>(batches.size());
    for (const auto& batch : batches) {
      const double lr = cosine_lr(m.step, schedule);
      BatchOutcome out = run_batch(m, data, cfg, batch, m.rng);
      if (!std::isfinite(out.loss)) {
        throw TrainingDiverged(m.step, epoch, "non-finite loss");
      }
      auto params = m.query.tensors();
      const auto grads = out.encoder_grads.tensors();
      auto velocity = m.query_velocity.tensors();
      for (std::size_t t = 0; t < params.size(); ++t) {
        sgd_momentum_step(params[t], grads[t], velocity[t], lr, cfg.sgd_momentum);
      }
      if (uses_centers(cfg.loss_kind)) {
        sgd_momentum_step(m.bank.centers.data(), out.center_grads.data(),
                          m.center_velocity.data(), lr, cfg.sgd_momentum);
      }
      if (!finite_params(m.query) || !all_finite(m.bank.centers.data())) {
        throw TrainingDiverged(m.step, epoch, "non-finite parameters after update");
      }
      m.key = momentum_update(m.key, m.query, cfg.key_momentum);
      m.queue.enqueue_batch(out.keys);
      ++m.step;

      rec.loss += out.loss * inv_steps;
      rec.l_sup += out.breakdown.l_sup * inv_steps;
      rec.l_supcon += out.breakdown.l_supcon * inv_steps;
      rec.l_extra += out.breakdown.l_extra * inv_steps;
      rec.p_sup += out.breakdown.p_sup * inv_steps;
      rec.p_supcon += out.breakdown.p_supcon * inv_steps;
      rec.mean_positives += out.mean_positives * inv_steps;
      axpy(inv_steps, out.class_norms, rec.grad_norms);
    }
    if (!paco_kind) rec.l_sup = rec.l_supcon = rec.l_extra = rec.p_sup = rec.p_supcon = nan;
    result.trace.epochs.push_back(std::move(rec));
  }
  return result;
}

Matrix linear_probe(std::span<const Vector> features, std::span<const std::size_t> labels,
                    std::size_t n_classes, const ProbeConfig& cfg) {
  require(features.size() == labels.size() && !features.empty(),
          "linear_probe: features/labels misaligned or empty");
  require(n_classes >= 2, "linear_probe: need at least two classes");
  require(cfg.batch_size > 0 && cfg.base_lr > 0.0, "linear_probe: invalid config");
  const std::size_t dim = features.front().size();
  for (const auto& f : features) {
    require(f.size() == dim, "linear_probe: feature dimension mismatch");
    require(std::abs(l2_norm(f) - 1.0) < 1e-9, "linear_probe: features must be unit-norm");
  }

  Matrix w(n_classes, dim);
  Matrix velocity(n_classes, dim);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t steps_per_epoch = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
  const Schedule schedule{cfg.base_lr,
                          static_cast<std::int64_t>(std::max<std::size_t>(1, steps_per_epoch * cfg.epochs))};
  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(order, cfg.batch_size, rng)) {
      Matrix grad(n_classes, dim);
      const double inv_b = 1.0 / static_cast<double>(batch.size());
      for (std::size_t i : batch) {
        const auto r = cross_entropy_loss(features[i], w, labels[i], 1.0);
        axpy(inv_b, r.d_weights.data(), grad.data());
      }
      sgd_momentum_step(w.data(), grad.data(), velocity.data(), cosine_lr(step, schedule),
                        cfg.momentum);
      ++step;
    }
  }
  return w;
}

GradNormProfile grad_norm_profile(const Model& model, const SyntheticDataset& data,
                                  const TrainConfig& cfg) {
  cfg.validate();
  Model scratch = model;  // the queue advances during the pass; parameters stay fixed
  Rng rng(derive_seed(cfg.seed, kProfileStream));
  const auto batches = epoch_batches(data.train_indices, cfg.batch_size, rng);
  std::vector<double> norms(data.n_classes(), 0.0);
  for (const auto& batch : batches) {
    BatchOutcome out = run_batch(scratch, data, cfg, batch, rng);
    axpy(1.0 / static_cast<double>(batches.size()), out.class_norms, norms);
    scratch.queue.enqueue_batch(out.keys);
  }

  GradNormProfile p;
  p.classes.resize(data.n_classes());
  std::iota(p.classes.begin(), p.classes.end(), 0);
  std::stable_sort(p.classes.begin(), p.classes.end(), [&](std::size_t a, std::size_t b) {
    return data.profile.counts[a] > data.profile.counts[b];
  });
  for (std::size_t c : p.classes) {
    p.counts.push_back(data.profile.counts[c]);
    p.norms.push_back(norms[c]);
  }
  return p;
}

std::vector<std::size_t> predict(const Model& model, const SyntheticDataset& data,
                                 std::span<const std::size_t> indices, const Matrix& classifier) {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    out.push_back(nearest_center_classify(model.represent(data.features[i]), classifier));
  }
  return out;
}

}  // namespace paco
