#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "paco/data.hpp"
#include "paco/encoder.hpp"
#include "paco/losses.hpp"
#include "paco/numerics.hpp"
#include "paco/queue.hpp"

namespace paco {

enum class LossKind { kCe, kSupcon, kPaco, kPacoRebalanced, kMultitask };

std::string_view to_string(LossKind kind);
/// Parses "ce", "supcon", "paco", "paco_rebalanced" or "multitask".
LossKind parse_loss_kind(std::string_view name);
bool uses_centers(LossKind kind);

struct TrainConfig {
  LossKind loss_kind = LossKind::kPaco;
  double alpha = 0.05;
  double temperature = 0.2;
  double multitask_lambda = 0.05;
  std::size_t queue_capacity = 1024;
  std::size_t embedding_dim = 32;
  double key_momentum = 0.99;
  double sgd_momentum = 0.9;
  double base_lr = 0.02;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double view_sigma = 0.1;  // noise of each augmented view around the sample
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  /// Smaller temperature and alpha used for CIFAR-LT-style runs.
  static TrainConfig cifar_lt_preset();

  void validate() const;
};

/// Classical momentum: v' = mu v + g; p' = p - lr v'.
void sgd_momentum_step(std::span<double> params, std::span<const double> grads,
                       std::span<double> velocity, double lr, double mu);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;          // learning rate at the first step of the epoch
  double loss = 0.0;
  double l_sup = 0.0;       // decomposition means; NaN for non-PaCo kinds
  double l_supcon = 0.0;
  double l_extra = 0.0;
  double p_sup = 0.0;
  double p_supcon = 0.0;
  double mean_positives = 0.0;       // mean |P(i)| over anchors
  std::vector<double> grad_norms;    // per class, mean over steps

  /// Bitwise comparison, so two NaN columns compare equal.
  friend bool operator==(const EpochRecord& a, const EpochRecord& b);
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;
  friend bool operator==(const TrainTrace&, const TrainTrace&) = default;
};

/// Everything needed to resume or evaluate a run.
struct Model {
  EncoderParams query;
  EncoderParams key;
  EncoderParams query_velocity;
  CenterBank bank;
  Matrix center_velocity;
  MomentumQueue queue{1, 1};
  Rng rng;
  std::int64_t step = 0;

  /// Representation x = F(encoder(u)) used by centers and probes.
  Vector represent(std::span<const double> input) const;
};

Model init_model(const SyntheticDataset& data, const TrainConfig& cfg);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::int64_t step, std::size_t epoch, const std::string& detail);
  std::int64_t step() const { return step_; }
  std::size_t epoch() const { return epoch_; }

 private:
  std::int64_t step_;
  std::size_t epoch_;
};

struct TrainResult {
  Model model;
  TrainTrace trace;
};

/// Runs cfg.epochs epochs. Deterministic for a fixed config and dataset.
/// Throws TrainingDiverged if a loss or gradient turns non-finite.
TrainResult train(const SyntheticDataset& data, const TrainConfig& cfg);

struct ProbeConfig {
  std::size_t epochs = 30;
  double base_lr = 0.5;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

/// Linear classifier (one weight row per class, no bias) trained by
/// cross-entropy on frozen features.
Matrix linear_probe(std::span<const Vector> features, std::span<const std::size_t> labels,
                    std::size_t n_classes, const ProbeConfig& cfg);

struct GradNormProfile {
  std::vector<std::size_t> classes;  // sorted by training count, descending
  std::vector<std::size_t> counts;
  std::vector<double> norms;
};

/// Per-class L2 norm of the batch gradient attributed to each class, averaged
/// over one pass without parameter updates: center rows for ce/paco/multitask,
/// the summed candidate gradients of that class for supcon.
GradNormProfile grad_norm_profile(const Model& model, const SyntheticDataset& data,
                                  const TrainConfig& cfg);

/// argmax over classifier rows of row . represent(u) for each index. Pass
/// model.bank.centers for nearest-center classification or probe weights.
std::vector<std::size_t> predict(const Model& model, const SyntheticDataset& data,
                                 std::span<const std::size_t> indices, const Matrix& classifier);

}  // namespace paco
