#include <doctest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "paco/encoder.hpp"
#include "paco/eval.hpp"
#include "paco/io.hpp"
#include "paco/trainer.hpp"

using namespace paco;

namespace {

SyntheticDataset small_dataset(std::size_t n_classes, std::size_t per_class, double sigma,
                               std::uint64_t seed, std::size_t dim = 8) {
  return sample_gaussian_mixture(LongTailProfile{std::vector<std::size_t>(n_classes, per_class)},
                                 dim, sigma, 10, seed);
}

TrainConfig quick_config(LossKind kind) {
  TrainConfig cfg;
  cfg.loss_kind = kind;
  cfg.embedding_dim = 8;
  cfg.queue_capacity = 64;
  cfg.batch_size = 16;
  cfg.epochs = 3;
  cfg.base_lr = 0.1;
  cfg.seed = 3;
  return cfg;
}

double train_accuracy(const Model& model, const SyntheticDataset& data, const Matrix& classifier) {
  const auto preds = predict(model, data, data.train_indices, classifier);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == data.labels[data.train_indices[i]];
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

}  // namespace

TEST_CASE("sgd momentum step") {
  SUBCASE("no momentum is a plain gradient step") {
    Vector p{1.0, 2.0}, v{0.0, 0.0};
    sgd_momentum_step(p, Vector{0.5, -1.0}, v, 1.0, 0.0);
    CHECK(p == Vector{0.5, 3.0});
  }
  SUBCASE("inertia with zero gradient") {
    Vector p{1.0}, v{2.0};
    sgd_momentum_step(p, Vector{0.0}, v, 0.1, 0.9);
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.9 * 2.0));
  }
  SUBCASE("three steps against a hand unroll") {
    const double lr = 0.3, mu = 0.9;
    const double g[3] = {1.0, -2.0, 0.5};
    Vector p{4.0}, v{0.0};
    for (double gi : g) sgd_momentum_step(p, Vector{gi}, v, lr, mu);
    const double v1 = g[0];
    const double v2 = mu * v1 + g[1];
    const double v3 = mu * v2 + g[2];
    const double want = 4.0 - lr * v1 - lr * v2 - lr * v3;
    CHECK(p[0] == doctest::Approx(want).epsilon(1e-15));
    CHECK(v[0] == doctest::Approx(v3).epsilon(1e-15));
  }
  Vector p{1.0}, v{0.0, 0.0};
  CHECK_THROWS_AS(sgd_momentum_step(p, Vector{1.0}, v, 0.1, 0.9), ContractViolation);
}

TEST_CASE("loss kind names round trip") {
  for (auto k : {LossKind::kCe, LossKind::kSupcon, LossKind::kPaco, LossKind::kPacoRebalanced,
                 LossKind::kMultitask}) {
    CHECK(parse_loss_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_loss_kind("pacoo"), ContractViolation);
  CHECK_FALSE(uses_centers(LossKind::kSupcon));
  CHECK(uses_centers(LossKind::kPacoRebalanced));
}

TEST_CASE("encoder backward matches finite differences") {
  Rng rng(61);
  auto params = EncoderParams::random(5, 4, rng);
  for (double& b : params.bias_in) b = 0.1 * rng.normal();
  const Vector u = rng.normal_vector(5);
  const Vector d_rep = rng.normal_vector(4), d_proj = rng.normal_vector(4);
  auto objective = [&](const EncoderParams& p) {
    const auto a = encoder_forward(p, u);
    return dot(a.rep, d_rep) + dot(a.projected, d_proj);
  };
  auto grads = EncoderParams::zeros(5, 4);
  encoder_backward(params, encoder_forward(params, u), d_rep, d_proj, grads);
  auto tp = params.tensors();
  const auto tg = std::as_const(grads).tensors();
  for (std::size_t t = 0; t < tp.size(); ++t) {
    for (std::size_t i = 0; i < tp[t].size(); ++i) {
      const double saved = tp[t][i];
      const double fd = oracle::central_diff(
          [&](double x) {
            tp[t][i] = x;
            return objective(params);
          },
          saved);
      tp[t][i] = saved;
      REQUIRE(std::abs(fd - tg[t][i]) < 1e-7);
    }
  }
  const auto acts = encoder_forward(params, u);
  CHECK(std::abs(l2_norm(acts.projected) - 1.0) < 1e-12);
  CHECK(std::abs(l2_norm(acts.rep) - 1.0) < 1e-12);
}

TEST_CASE("zero epochs returns the initial model") {
  const auto data = small_dataset(3, 10, 0.3, 1);
  auto cfg = quick_config(LossKind::kPaco);
  cfg.epochs = 0;
  const auto r = train(data, cfg);
  const auto init = init_model(data, cfg);
  CHECK(r.trace.epochs.empty());
  CHECK(r.model.query == init.query);
  CHECK(r.model.bank.centers == init.bank.centers);
  CHECK(r.model.queue.size() == 0);
}

TEST_CASE("initial centers are scaled unit vectors") {
  const auto data = small_dataset(4, 10, 0.3, 1);
  const auto m = init_model(data, quick_config(LossKind::kPaco));
  for (std::size_t c = 0; c < 4; ++c) CHECK(l2_norm(m.bank.centers.row(c)) == doctest::Approx(0.1));
}

TEST_CASE("cross entropy separates two well separated classes") {
  const auto data = small_dataset(2, 30, 0.05, 2);
  auto cfg = quick_config(LossKind::kCe);
  cfg.epochs = 30;
  cfg.base_lr = 0.5;
  const auto r = train(data, cfg);
  CHECK(train_accuracy(r.model, data, r.model.bank.centers) == 1.0);
}

TEST_CASE("training is deterministic") {
  const auto data = small_dataset(4, 20, 0.3, 4);
  for (auto kind : {LossKind::kPaco, LossKind::kSupcon, LossKind::kMultitask}) {
    auto cfg = quick_config(kind);
    const auto a = train(data, cfg);
    const auto b = train(data, cfg);
    CHECK(a.trace == b.trace);
    CHECK(a.model.query == b.model.query);
    cfg.threads = 3;
    const auto c = train(data, cfg);
    CHECK(a.trace == c.trace);
  }
}

TEST_CASE("queue size after training") {
  const auto data = small_dataset(3, 10, 0.3, 5);
  for (std::size_t cap : {7u, 64u, 500u}) {
    auto cfg = quick_config(LossKind::kPaco);
    cfg.queue_capacity = cap;
    const auto r = train(data, cfg);
    const std::size_t enqueued = cfg.epochs * data.train_indices.size();
    CHECK(r.model.queue.size() == std::min(cap, enqueued));
    CHECK(r.model.queue.total_written() == enqueued);
  }
}

TEST_CASE("key network moves only through momentum") {
  const auto data = small_dataset(3, 10, 0.3, 6);
  auto cfg = quick_config(LossKind::kPaco);
  cfg.key_momentum = 1.0;
  const auto frozen = train(data, cfg);
  CHECK(frozen.model.key == init_model(data, cfg).key);
  CHECK_FALSE(frozen.model.query == init_model(data, cfg).query);

  cfg.key_momentum = 0.0;
  const auto tracking = train(data, cfg);
  CHECK(tracking.model.key == tracking.model.query);
}

TEST_CASE("trace invariants for paco") {
  const auto data = small_dataset(4, 12, 0.3, 7);
  auto cfg = quick_config(LossKind::kPaco);
  cfg.epochs = 4;
  const auto r = train(data, cfg);
  REQUIRE(r.trace.epochs.size() == 4);
  for (std::size_t e = 0; e < 4; ++e) {
    const auto& rec = r.trace.epochs[e];
    CHECK(rec.epoch == e);
    CHECK(std::isfinite(rec.loss));
    CHECK(std::abs(rec.p_sup + rec.p_supcon - 1.0) < 1e-9);
    CHECK(rec.grad_norms.size() == 4);
    if (e > 0) CHECK(rec.lr < r.trace.epochs[e - 1].lr);
  }
  CHECK(r.trace.epochs.front().lr == cfg.base_lr);
}

TEST_CASE("non-paco kinds leave the decomposition columns empty") {
  const auto data = small_dataset(3, 10, 0.3, 8);
  const auto r = train(data, quick_config(LossKind::kCe));
  CHECK(std::isnan(r.trace.epochs.front().p_sup));
}

TEST_CASE("linear probe") {
  SUBCASE("one-hot features are learned perfectly") {
    std::vector<Vector> feats;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < 60; ++i) {
      Vector f(4, 0.0);
      f[i % 4] = 1.0;
      feats.push_back(f);
      labels.push_back(i % 4);
    }
    const auto w = linear_probe(feats, labels, 4, {});
    std::size_t hits = 0;
    for (std::size_t i = 0; i < feats.size(); ++i) hits += nearest_center_classify(feats[i], w) == labels[i];
    CHECK(hits == feats.size());
  }
  SUBCASE("random labels stay near chance on fresh samples") {
    Rng rng(62);
    std::vector<Vector> train_f, test_f;
    std::vector<std::size_t> train_l, test_l;
    for (int i = 0; i < 400; ++i) {
      train_f.push_back(rng.unit_vector(6));
      train_l.push_back(rng.below(2));
      test_f.push_back(rng.unit_vector(6));
      test_l.push_back(rng.below(2));
    }
    const auto w = linear_probe(train_f, train_l, 2, {});
    std::size_t hits = 0;
    for (std::size_t i = 0; i < test_f.size(); ++i) hits += nearest_center_classify(test_f[i], w) == test_l[i];
    const double sigma = std::sqrt(400 * 0.25);
    CHECK(std::abs(static_cast<double>(hits) - 200.0) < 3.0 * sigma);
  }
  std::vector<Vector> bad{Vector{2.0, 0.0}};
  CHECK_THROWS_AS(linear_probe(bad, std::vector<std::size_t>{0}, 2, {}), ContractViolation);
}

TEST_CASE("grad norm profile shape and ordering") {
  const auto data = sample_gaussian_mixture(exponential_profile(6, 60, 10.0), 8, 0.3, 5, 9);
  auto cfg = quick_config(LossKind::kPaco);
  const auto model = init_model(data, cfg);
  for (auto kind : {LossKind::kCe, LossKind::kSupcon, LossKind::kPaco, LossKind::kMultitask}) {
    cfg.loss_kind = kind;
    const auto p = grad_norm_profile(model, data, cfg);
    REQUIRE(p.norms.size() == 6);
    REQUIRE(p.classes.size() == 6);
    for (std::size_t i = 1; i < 6; ++i) REQUIRE(p.counts[i] <= p.counts[i - 1]);
    for (std::size_t i = 0; i < 6; ++i) REQUIRE(p.counts[i] == data.profile.counts[p.classes[i]]);
  }
}

TEST_CASE("grad norms are balanced on a balanced dataset") {
  const auto data = small_dataset(8, 100, 0.3, 10, 16);
  auto cfg = quick_config(LossKind::kPaco);
  cfg.embedding_dim = 16;
  const auto p = grad_norm_profile(init_model(data, cfg), data, cfg);
  CHECK(balance_metric(p.norms).value < 0.2);
}

TEST_CASE("checkpoint round trip") {
  const auto data = small_dataset(3, 10, 0.3, 11);
  auto cfg = quick_config(LossKind::kPacoRebalanced);
  cfg.queue_capacity = 20;
  const auto r = train(data, cfg);
  std::stringstream ss;
  save_checkpoint(ss, r.model);
  const auto back = load_checkpoint(ss);
  CHECK(back.query == r.model.query);
  CHECK(back.key == r.model.key);
  CHECK(back.query_velocity == r.model.query_velocity);
  CHECK(back.bank.centers == r.model.bank.centers);
  CHECK(back.bank.class_freq == r.model.bank.class_freq);
  CHECK(back.center_velocity == r.model.center_velocity);
  CHECK(back.step == r.model.step);
  CHECK(back.queue.total_written() == r.model.queue.total_written());
  REQUIRE(back.queue.size() == r.model.queue.size());
  for (std::size_t i = 0; i < back.queue.size(); ++i) {
    CHECK(back.queue.label(i) == r.model.queue.label(i));
  }
  auto a = r.model.rng;
  auto b = back.rng;
  CHECK(a.normal() == b.normal());

  std::stringstream again;
  save_checkpoint(again, back);
  CHECK(again.str() == ss.str());

  std::stringstream broken("paco-lab-checkpoint 2\n");
  CHECK_THROWS_AS(load_checkpoint(broken), CheckpointError);
}

TEST_CASE("format_double is shortest round trip") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
  Rng rng(63);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.normal() * std::pow(10.0, rng.uniform(-30, 30));
    REQUIRE(std::stod(format_double(x)) == x);
  }
}
