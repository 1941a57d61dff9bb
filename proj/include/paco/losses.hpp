#pragma once

#include <cstddef>
#include <span>

#include "paco/numerics.hpp"
#include "paco/queue.hpp"

namespace paco {

/// Learnable class centers together with the class frequencies q(y).
/// Centers are free vectors (not normalized); they double as classifier weights.
struct CenterBank {
  Matrix centers;    // n_classes x dim
  Vector class_freq; // positive, sums to 1

  std::size_t n_classes() const { return centers.rows(); }
  std::size_t dim() const { return centers.cols(); }

  /// Throws ContractViolation unless n >= 2 and q is a positive distribution.
  void validate() const;
};

struct PacoConfig {
  double alpha = 0.05;        // weight on sample positives, in (0, 1)
  double temperature = 0.2;   // divides every logit, candidates and centers alike
  bool rebalance_centers = false;  // Balanced-Softmax log-prior on center logits
  bool scale_by_weight_sum = true; // divide by 1 + alpha * |P(i)|
  bool key_gradients = false;      // also differentiate w.r.t. candidate embeddings

  void validate() const;
};

/// Decomposition of the PaCo loss into its multi-task parts.
/// total == l_sup + alpha * l_supcon + l_extra (unscaled form).
struct LossBreakdown {
  double total = 0.0;    // unscaled PaCo loss
  double scaled = 0.0;   // total / (1 + alpha * |P(i)|)
  double l_sup = 0.0;    // cross-entropy over centers only
  double l_supcon = 0.0; // sum form of the supervised contrastive loss over A(i) only
  double l_extra = 0.0;  // -log P_sup - alpha |P(i)| log(1 - P_sup)
  double p_sup = 0.0;    // probability mass on centers
  double p_supcon = 0.0; // probability mass on candidates
  bool boundary = false; // P_sup hit 0 or 1 where a log term needs it; l_extra is +inf
};

/// Gradients of a contrastive loss. Blocks a loss does not depend on are empty
/// (d_centers, d_anchor_pre) or zero (d_candidates unless key gradients are on).
struct LossGrads {
  Vector d_anchor_pre;   // w.r.t. x_i, the representation seen by the centers
  Vector d_anchor_post;  // w.r.t. G(x_i), the projection seen by the candidates
  Matrix d_centers;
  Matrix d_candidates;
};

struct LossResult {
  double loss = 0.0;
  LossGrads grads;
};

struct PacoResult {
  double loss = 0.0;  // scaled or unscaled per PacoConfig::scale_by_weight_sum
  LossBreakdown breakdown;
  LossGrads grads;    // gradient of `loss`
};

struct InfoNceResult {
  double loss = 0.0;
  Vector d_query;
  Vector d_positive;
  Matrix d_negatives;
};

struct CrossEntropyResult {
  double loss = 0.0;
  Vector d_query;
  Matrix d_weights;
};

/// -log(exp(q.k+/t) / (exp(q.k+/t) + sum_j exp(q.k-_j/t))). Needs at least one negative.
InfoNceResult infonce_loss(std::span<const double> query, std::span<const double> positive,
                           const Matrix& negatives, double temperature);

/// -log_softmax(W q / t)[label]
CrossEntropyResult cross_entropy_loss(std::span<const double> query, const Matrix& weights,
                                      std::size_t label, double temperature);

/// Supervised contrastive loss scaled by 1/|P(i)|. Empty P(i) gives zero loss and gradient.
LossResult supcon_loss(std::span<const double> anchor_post, const ContrastSet& contrast,
                       double temperature, bool key_gradients = false);

/// PaCo loss: positives weighted alpha, own center weighted 1, one softmax over
/// A(i) and all centers. Candidates see G(x_i), centers see x_i.
PacoResult paco_loss(std::span<const double> anchor_pre, std::span<const double> anchor_post,
                     const ContrastSet& contrast, const CenterBank& bank, std::size_t label,
                     const PacoConfig& cfg);

/// The multi-task parts of the unrebalanced PaCo loss, computed from separate
/// center-only and candidate-only softmaxes.
LossBreakdown decompose_paco(std::span<const double> anchor_pre,
                             std::span<const double> anchor_post, const ContrastSet& contrast,
                             const CenterBank& bank, std::size_t label, const PacoConfig& cfg);

/// cross_entropy(x_i, centers) + lambda * supcon(G(x_i)); separate denominators.
LossResult multitask_loss(std::span<const double> anchor_pre, std::span<const double> anchor_post,
                          const ContrastSet& contrast, const CenterBank& bank, std::size_t label,
                          double lambda, double temperature);

}  // namespace paco
