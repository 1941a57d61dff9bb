#include "paco/gradcheck.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <string>

namespace paco::gradcheck {

Vector central_difference(const std::function<double(std::span<const double>)>& f,
                          std::span<const double> x, double step) {
  Vector probe(x.begin(), x.end());
  Vector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = f(probe);
    probe[i] = orig - step;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                      double floor) {
  require(analytic.size() == numeric.size(), "relative_error: length mismatch");
  Vector diff(analytic.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - numeric[i];
  const double scale = std::max({l2_norm(analytic), l2_norm(numeric), floor});
  return l2_norm(diff) / scale;
}

namespace {

constexpr std::array kAll = {CheckedLoss::kInfoNce,  CheckedLoss::kCrossEntropy,
                             CheckedLoss::kSupcon,   CheckedLoss::kPaco,
                             CheckedLoss::kPacoRebalanced, CheckedLoss::kMultitask};

PacoConfig paco_config(const Instance& inst) {
  PacoConfig cfg;
  cfg.alpha = inst.alpha;
  cfg.temperature = inst.temperature;
  cfg.rebalance_centers = inst.loss == CheckedLoss::kPacoRebalanced;
  cfg.key_gradients = true;
  return cfg;
}

// Finite-difference check of one input block: `set` writes the perturbed block
// into a scratch instance, `eval` returns the loss.
double check_block(const Instance& inst, std::span<const double> block,
                   std::span<const double> analytic,
                   const std::function<void(Instance&, std::span<const double>)>& set,
                   const std::function<double(const Instance&)>& eval, double step) {
  Instance scratch = inst;
  const Vector numeric = central_difference(
      [&](std::span<const double> v) {
        set(scratch, v);
        return eval(scratch);
      },
      block, step);
  return relative_error(analytic, numeric);
}

void set_vector(Vector& dst, std::span<const double> v) { dst.assign(v.begin(), v.end()); }
void set_matrix(Matrix& dst, std::span<const double> v) {
  std::copy(v.begin(), v.end(), dst.data().begin());
}

}  // namespace

std::string_view to_string(CheckedLoss loss) {
  switch (loss) {
    case CheckedLoss::kInfoNce: return "infonce";
    case CheckedLoss::kCrossEntropy: return "cross_entropy";
    case CheckedLoss::kSupcon: return "supcon";
    case CheckedLoss::kPaco: return "paco";
    case CheckedLoss::kPacoRebalanced: return "paco_rebalanced";
    case CheckedLoss::kMultitask: return "multitask";
  }
  return "unknown";
}

CheckedLoss parse_checked_loss(std::string_view name) {
  for (CheckedLoss l : kAll) {
    if (to_string(l) == name) return l;
  }
  throw ContractViolation("unknown loss '" + std::string(name) + "'");
}

std::span<const CheckedLoss> all_checked_losses() { return kAll; }

Instance make_instance(CheckedLoss loss, std::uint64_t seed, const InstanceLimits& limits) {
  require(limits.max_dim >= 2 && limits.max_candidates >= 2 && limits.max_classes >= 2,
          "make_instance: limits too small");
  Rng rng(seed);
  Instance inst;
  inst.loss = loss;
  inst.seed = seed;
  const std::size_t dim = 2 + rng.below(limits.max_dim - 1);
  const std::size_t n_classes = 2 + rng.below(limits.max_classes - 1);
  const std::size_t n_cand = 2 + rng.below(limits.max_candidates - 1);
  inst.temperature = rng.uniform(0.1, 1.0);
  inst.alpha = rng.uniform(0.02, 0.9);
  inst.lambda = rng.uniform(0.01, 1.0);
  inst.label = rng.below(n_classes);
  inst.anchor_pre = rng.unit_vector(dim);
  inst.anchor_post = rng.unit_vector(dim);

  inst.positive = rng.unit_vector(dim);
  inst.negatives = Matrix(n_cand - 1, dim);
  for (std::size_t k = 0; k + 1 < n_cand; ++k) {
    const Vector z = rng.unit_vector(dim);
    std::copy(z.begin(), z.end(), inst.negatives.row(k).begin());
  }

  Matrix rows(n_cand, dim);
  std::vector<std::size_t> labels(n_cand);
  for (std::size_t k = 0; k < n_cand; ++k) {
    const Vector z = rng.unit_vector(dim);
    std::copy(z.begin(), z.end(), rows.row(k).begin());
    labels[k] = rng.below(n_classes);
  }
  labels[rng.below(n_cand)] = inst.label;  // at least one positive
  inst.contrast = ContrastSet::from_rows(inst.label, rows, std::move(labels));

  // Roughly unit-norm centers keep the softmax away from saturation, where the
  // loss itself loses the digits a finite difference needs.
  inst.bank.centers = Matrix(n_classes, dim);
  const double center_scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& c : inst.bank.centers.data()) c = center_scale * rng.normal();
  inst.bank.class_freq.resize(n_classes);
  double total = 0.0;
  for (double& q : inst.bank.class_freq) total += (q = rng.uniform(0.05, 1.0));
  for (double& q : inst.bank.class_freq) q /= total;
  return inst;
}

double check_instance(const Instance& inst, double step) {
  double worst = 0.0;
  auto track = [&worst](double e) { worst = std::max(worst, e); };

  switch (inst.loss) {
    case CheckedLoss::kInfoNce: {
      auto eval = [](const Instance& s) {
        return infonce_loss(s.anchor_pre, s.positive, s.negatives, s.temperature).loss;
      };
      const auto r = infonce_loss(inst.anchor_pre, inst.positive, inst.negatives, inst.temperature);
      track(check_block(inst, inst.anchor_pre, r.d_query,
                        [](Instance& s, auto v) { set_vector(s.anchor_pre, v); }, eval, step));
      track(check_block(inst, inst.positive, r.d_positive,
                        [](Instance& s, auto v) { set_vector(s.positive, v); }, eval, step));
      track(check_block(inst, inst.negatives.data(), r.d_negatives.data(),
                        [](Instance& s, auto v) { set_matrix(s.negatives, v); }, eval, step));
      break;
    }
    case CheckedLoss::kCrossEntropy: {
      auto eval = [](const Instance& s) {
        return cross_entropy_loss(s.anchor_pre, s.bank.centers, s.label, s.temperature).loss;
      };
      const auto r =
          cross_entropy_loss(inst.anchor_pre, inst.bank.centers, inst.label, inst.temperature);
      track(check_block(inst, inst.anchor_pre, r.d_query,
                        [](Instance& s, auto v) { set_vector(s.anchor_pre, v); }, eval, step));
      track(check_block(inst, inst.bank.centers.data(), r.d_weights.data(),
                        [](Instance& s, auto v) { set_matrix(s.bank.centers, v); }, eval, step));
      break;
    }
    case CheckedLoss::kSupcon: {
      auto eval = [](const Instance& s) {
        return supcon_loss(s.anchor_post, s.contrast, s.temperature).loss;
      };
      const auto r = supcon_loss(inst.anchor_post, inst.contrast, inst.temperature, true);
      track(check_block(inst, inst.anchor_post, r.grads.d_anchor_post,
                        [](Instance& s, auto v) { set_vector(s.anchor_post, v); }, eval, step));
      track(check_block(inst, inst.contrast.candidates.data(), r.grads.d_candidates.data(),
                        [](Instance& s, auto v) { set_matrix(s.contrast.candidates, v); }, eval,
                        step));
      break;
    }
    case CheckedLoss::kPaco:
    case CheckedLoss::kPacoRebalanced: {
      const PacoConfig cfg = paco_config(inst);
      auto eval = [cfg](const Instance& s) {
        return paco_loss(s.anchor_pre, s.anchor_post, s.contrast, s.bank, s.label, cfg).loss;
      };
      const auto r =
          paco_loss(inst.anchor_pre, inst.anchor_post, inst.contrast, inst.bank, inst.label, cfg);
      track(check_block(inst, inst.anchor_pre, r.grads.d_anchor_pre,
                        [](Instance& s, auto v) { set_vector(s.anchor_pre, v); }, eval, step));
      track(check_block(inst, inst.anchor_post, r.grads.d_anchor_post,
                        [](Instance& s, auto v) { set_vector(s.anchor_post, v); }, eval, step));
      track(check_block(inst, inst.bank.centers.data(), r.grads.d_centers.data(),
                        [](Instance& s, auto v) { set_matrix(s.bank.centers, v); }, eval, step));
      track(check_block(inst, inst.contrast.candidates.data(), r.grads.d_candidates.data(),
                        [](Instance& s, auto v) { set_matrix(s.contrast.candidates, v); }, eval,
                        step));
      break;
    }
    case CheckedLoss::kMultitask: {
      auto eval = [](const Instance& s) {
        return multitask_loss(s.anchor_pre, s.anchor_post, s.contrast, s.bank, s.label, s.lambda,
                              s.temperature)
            .loss;
      };
      const auto r = multitask_loss(inst.anchor_pre, inst.anchor_post, inst.contrast, inst.bank,
                                    inst.label, inst.lambda, inst.temperature);
      track(check_block(inst, inst.anchor_pre, r.grads.d_anchor_pre,
                        [](Instance& s, auto v) { set_vector(s.anchor_pre, v); }, eval, step));
      track(check_block(inst, inst.anchor_post, r.grads.d_anchor_post,
                        [](Instance& s, auto v) { set_vector(s.anchor_post, v); }, eval, step));
      track(check_block(inst, inst.bank.centers.data(), r.grads.d_centers.data(),
                        [](Instance& s, auto v) { set_matrix(s.bank.centers, v); }, eval, step));
      break;
    }
  }
  return worst;
}

void dump_instance(std::ostream& out, const Instance& inst) {
  auto vec = [](std::span<const double> v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += fmt::format("{}{}", i ? " " : "", v[i]);
    return s;
  };
  out << fmt::format("loss {}\nseed {}\ntemperature {}\nalpha {}\nlambda {}\nlabel {}\n",
                     to_string(inst.loss), inst.seed, inst.temperature, inst.alpha, inst.lambda,
                     inst.label);
  out << "anchor_pre " << vec(inst.anchor_pre) << '\n';
  out << "anchor_post " << vec(inst.anchor_post) << '\n';
  out << "positive " << vec(inst.positive) << '\n';
  for (std::size_t k = 0; k < inst.negatives.rows(); ++k) {
    out << "negative " << vec(inst.negatives.row(k)) << '\n';
  }
  for (std::size_t k = 0; k < inst.contrast.size(); ++k) {
    out << fmt::format("candidate {} {}\n", inst.contrast.labels[k],
                       vec(inst.contrast.candidates.row(k)));
  }
  for (std::size_t c = 0; c < inst.bank.n_classes(); ++c) {
    out << fmt::format("center {} {}\n", inst.bank.class_freq[c], vec(inst.bank.centers.row(c)));
  }
}

LossSummary run_suite(CheckedLoss loss, std::uint64_t base_seed, std::size_t instances,
                      const InstanceLimits& limits, double step) {
  require(instances > 0, "run_suite: need at least one instance");
  LossSummary s;
  s.loss = loss;
  s.instances = instances;
  std::vector<double> errors;
  errors.reserve(instances);
  const auto kind = static_cast<std::uint64_t>(loss);
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t seed = derive_seed(base_seed, 1000000 * kind + i);
    const double e = check_instance(make_instance(loss, seed, limits), step);
    if (errors.empty() || e > s.max_error) {
      s.max_error = e;
      s.worst_seed = seed;
    }
    errors.push_back(e);
  }
  std::sort(errors.begin(), errors.end());
  const std::size_t mid = errors.size() / 2;
  s.median_error = errors.size() % 2 ? errors[mid] : 0.5 * (errors[mid - 1] + errors[mid]);
  return s;
}

}  // namespace paco::gradcheck
