#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "paco/data.hpp"
#include "paco/numerics.hpp"

namespace paco {

/// argmax_k c_k . feature; ties go to the lowest index.
std::size_t nearest_center_classify(std::span<const double> feature, const Matrix& centers);

struct BucketThresholds {
  std::size_t many_min = 100;  // Many: count > many_min
  std::size_t few_max = 20;    // Few: count < few_max
};

enum class Bucket { kMany, kMedium, kFew };

Bucket bucket_of(std::size_t count, const BucketThresholds& thresholds);

struct BucketReport {
  std::optional<double> many_acc;   // absent when no class falls in the bucket
  std::optional<double> medium_acc;
  std::optional<double> few_acc;
  double all_acc = 0.0;             // mean of per-class accuracies
  BucketThresholds thresholds;
  std::vector<double> per_class_acc;
};

/// Class-mean accuracies overall and per Many/Medium/Few bucket. Classes
/// without test samples count as accuracy 0.
BucketReport bucket_accuracy(std::span<const std::size_t> predictions,
                             std::span<const std::size_t> labels, const LongTailProfile& profile,
                             const BucketThresholds& thresholds = {});

struct BalanceMetric {
  double value = 0.0;    // std / mean (population std)
  bool defined = true;   // false for an all-zero vector
};

/// Coefficient of variation of per-class gradient norms; lower is more balanced.
BalanceMetric balance_metric(std::span<const double> grad_norms);

}  // namespace paco
