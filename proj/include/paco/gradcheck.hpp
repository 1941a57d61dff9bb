#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "paco/losses.hpp"
#include "paco/numerics.hpp"

namespace paco::gradcheck {

/// Central finite difference of f at x along every coordinate.
Vector central_difference(const std::function<double(std::span<const double>)>& f,
                          std::span<const double> x, double step = 1e-6);

/// ||analytic - numeric|| / max(||analytic||, ||numeric||, floor).
double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                      double floor = 1e-8);

enum class CheckedLoss { kInfoNce, kCrossEntropy, kSupcon, kPaco, kPacoRebalanced, kMultitask };

std::string_view to_string(CheckedLoss loss);
CheckedLoss parse_checked_loss(std::string_view name);
std::span<const CheckedLoss> all_checked_losses();

struct InstanceLimits {
  std::size_t max_dim = 16;
  std::size_t max_candidates = 32;
  std::size_t max_classes = 10;
};

/// A random loss evaluation point, fully determined by its seed.
struct Instance {
  CheckedLoss loss = CheckedLoss::kPaco;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  double alpha = 0.05;
  double lambda = 0.05;
  std::size_t label = 0;
  Vector anchor_pre;   // also the query / cross-entropy input
  Vector anchor_post;
  Vector positive;     // InfoNCE only
  Matrix negatives;    // InfoNCE only
  ContrastSet contrast;
  CenterBank bank;
};

Instance make_instance(CheckedLoss loss, std::uint64_t seed, const InstanceLimits& limits = {});

/// Worst relative error over every gradient block of the instance's loss.
double check_instance(const Instance& inst, double step = 1e-6);

/// Plain-text dump of every input, for replaying a failure by hand.
void dump_instance(std::ostream& out, const Instance& inst);

struct LossSummary {
  CheckedLoss loss = CheckedLoss::kPaco;
  std::size_t instances = 0;
  double max_error = 0.0;
  double median_error = 0.0;
  std::uint64_t worst_seed = 0;
};

/// Per-instance seeds are derive_seed(base_seed, 1000000 * kind + index).
LossSummary run_suite(CheckedLoss loss, std::uint64_t base_seed, std::size_t instances,
                      const InstanceLimits& limits = {}, double step = 1e-6);

}  // namespace paco::gradcheck
