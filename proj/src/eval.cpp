#include "paco/eval.hpp"

#include <cmath>
#include <limits>

namespace paco {

std::size_t nearest_center_classify(std::span<const double> feature, const Matrix& centers) {
  require(centers.rows() > 0, "nearest_center_classify: no centers");
  require(centers.cols() == feature.size(), "nearest_center_classify: dimension mismatch");
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < centers.rows(); ++k) {
    const double s = dot(centers.row(k), feature);
    if (s > best_score) {
      best_score = s;
      best = k;
    }
  }
  return best;
}

Bucket bucket_of(std::size_t count, const BucketThresholds& thresholds) {
  if (count > thresholds.many_min) return Bucket::kMany;
  if (count < thresholds.few_max) return Bucket::kFew;
  return Bucket::kMedium;
}

BucketReport bucket_accuracy(std::span<const std::size_t> predictions,
                             std::span<const std::size_t> labels, const LongTailProfile& profile,
                             const BucketThresholds& thresholds) {
  require(predictions.size() == labels.size(), "bucket_accuracy: predictions/labels misaligned");
  require(thresholds.many_min > thresholds.few_max,
          "bucket_accuracy: many_min must exceed few_max");
  const std::size_t n = profile.n_classes();
  std::vector<std::size_t> correct(n, 0), seen(n, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < n, "bucket_accuracy: label out of range");
    ++seen[labels[i]];
    if (predictions[i] == labels[i]) ++correct[labels[i]];
  }

  BucketReport r;
  r.thresholds = thresholds;
  r.per_class_acc.resize(n);
  double sums[3] = {0, 0, 0};
  std::size_t members[3] = {0, 0, 0};
  double total = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    const double acc = seen[c] ? static_cast<double>(correct[c]) / seen[c] : 0.0;
    r.per_class_acc[c] = acc;
    total += acc;
    const auto b = static_cast<std::size_t>(bucket_of(profile.counts[c], thresholds));
    sums[b] += acc;
    ++members[b];
  }
  r.all_acc = total / static_cast<double>(n);
  auto mean = [&](Bucket b) -> std::optional<double> {
    const auto i = static_cast<std::size_t>(b);
    if (members[i] == 0) return std::nullopt;
    return sums[i] / static_cast<double>(members[i]);
  };
  r.many_acc = mean(Bucket::kMany);
  r.medium_acc = mean(Bucket::kMedium);
  r.few_acc = mean(Bucket::kFew);
  return r;
}

BalanceMetric balance_metric(std::span<const double> grad_norms) {
  require(!grad_norms.empty(), "balance_metric: empty input");
  double sum = 0.0;
  for (double g : grad_norms) {
    require(g >= 0.0 && std::isfinite(g), "balance_metric: norms must be finite and nonnegative");
    sum += g;
  }
  const double n = static_cast<double>(grad_norms.size());
  const double mean = sum / n;
  if (mean == 0.0) return {std::numeric_limits<double>::quiet_NaN(), false};
  // Two-pass variance.
  double ss = 0.0;
  for (double g : grad_norms) ss += (g - mean) * (g - mean);
  return {std::sqrt(ss / n) / mean, true};
}

}  // namespace paco
