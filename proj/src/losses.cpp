#include "paco/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace paco {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kFreqTolerance = 1e-9;

void require_temperature(double t) {
  require(t > 0.0 && std::isfinite(t), "temperature must be positive and finite");
}

// logits[k] = rows[k] . v / t
Vector scaled_logits(const Matrix& rows, std::span<const double> v, double t) {
  require(rows.rows() == 0 || rows.cols() == v.size(), "embedding dimension mismatch");
  Vector logits(rows.rows());
  for (std::size_t k = 0; k < rows.rows(); ++k) logits[k] = dot(rows.row(k), v) / t;
  return logits;
}

Vector center_logits(std::span<const double> anchor_pre, const CenterBank& bank, double t,
                     bool rebalance) {
  Vector logits = scaled_logits(bank.centers, anchor_pre, t);
  if (rebalance) {
    for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += std::log(bank.class_freq[c]);
  }
  return logits;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// -log softmax(logits)[k] given the log-sum-exp and the index of the largest
// logit. For the largest logit the value is log1p(sum_{j != top} exp(l_j - l_top)),
// which keeps full relative precision when the softmax is nearly saturated.
double neg_log_prob(std::span<const double> logits, std::size_t k, double lse, std::size_t top) {
  if (k != top) return lse - logits[k];
  double rest = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (j != top) rest += std::exp(logits[j] - logits[top]);
  }
  return std::log1p(rest);
}

double neg_log_prob(std::span<const double> logits, std::size_t k) {
  return neg_log_prob(logits, k, log_sum_exp(logits), argmax(logits));
}

double lse_or_neg_inf(std::span<const double> logits) {
  return logits.empty() ? -kInf : log_sum_exp(logits);
}

LossBreakdown breakdown_from_logits(std::span<const double> cand_logits,
                                    std::span<const double> ctr_logits,
                                    const ContrastSet& contrast, std::size_t label, double alpha) {
  const double positives = static_cast<double>(contrast.positive_count());
  const double lse_c = log_sum_exp(ctr_logits);
  const double lse_a = lse_or_neg_inf(cand_logits);
  const double both[2] = {lse_c, lse_a};
  const double lse_all = lse_a == -kInf ? lse_c : log_sum_exp(both);

  LossBreakdown b;
  b.l_sup = lse_c - ctr_logits[label];
  for (std::size_t k = 0; k < cand_logits.size(); ++k) {
    if (contrast.positive_mask[k]) b.l_supcon += lse_a - cand_logits[k];
  }
  const double log_p_sup = lse_c - lse_all;
  const double log_p_supcon = lse_a - lse_all;
  b.p_sup = std::exp(log_p_sup);
  b.p_supcon = std::exp(log_p_supcon);

  const bool sup_edge = log_p_sup == -kInf;
  const bool supcon_edge = positives > 0.0 && log_p_supcon == -kInf;
  if (sup_edge || supcon_edge) {
    b.boundary = true;
    b.l_extra = kInf;
  } else {
    b.l_extra = -log_p_sup - (positives > 0.0 ? alpha * positives * log_p_supcon : 0.0);
  }
  return b;
}

}  // namespace

void CenterBank::validate() const {
  require(centers.rows() >= 2, "CenterBank: need at least two classes");
  require(class_freq.size() == centers.rows(), "CenterBank: class_freq length mismatch");
  double sum = 0.0;
  for (double q : class_freq) {
    require(q > 0.0 && std::isfinite(q), "CenterBank: class frequencies must be positive");
    sum += q;
  }
  require(std::abs(sum - 1.0) < kFreqTolerance, "CenterBank: class frequencies must sum to 1");
}

void PacoConfig::validate() const {
  require(alpha > 0.0 && alpha < 1.0, "PacoConfig: alpha must lie in (0, 1)");
  require_temperature(temperature);
}

InfoNceResult infonce_loss(std::span<const double> query, std::span<const double> positive,
                           const Matrix& negatives, double temperature) {
  require_temperature(temperature);
  require(negatives.rows() >= 1, "infonce_loss: at least one negative is required");
  require(positive.size() == query.size() && negatives.cols() == query.size(),
          "infonce_loss: dimension mismatch");
  const std::size_t n = negatives.rows() + 1;
  Vector logits(n);
  logits[0] = dot(query, positive) / temperature;
  for (std::size_t j = 0; j < negatives.rows(); ++j) {
    logits[j + 1] = dot(query, negatives.row(j)) / temperature;
  }
  const Vector p = softmax(logits);

  InfoNceResult r;
  r.loss = neg_log_prob(logits, 0);
  r.d_query.assign(query.size(), 0.0);
  r.d_positive.assign(query.size(), 0.0);
  r.d_negatives = Matrix(negatives.rows(), query.size());
  const double g0 = (p[0] - 1.0) / temperature;
  axpy(g0, positive, r.d_query);
  axpy(g0, query, r.d_positive);
  for (std::size_t j = 0; j < negatives.rows(); ++j) {
    const double gj = p[j + 1] / temperature;
    axpy(gj, negatives.row(j), r.d_query);
    axpy(gj, query, r.d_negatives.row(j));
  }
  return r;
}

CrossEntropyResult cross_entropy_loss(std::span<const double> query, const Matrix& weights,
                                      std::size_t label, double temperature) {
  require_temperature(temperature);
  require(label < weights.rows(), "cross_entropy_loss: label out of range");
  require(weights.cols() == query.size(), "cross_entropy_loss: dimension mismatch");
  const Vector logits = scaled_logits(weights, query, temperature);
  const Vector p = softmax(logits);

  CrossEntropyResult r;
  r.loss = neg_log_prob(logits, label);
  r.d_query.assign(query.size(), 0.0);
  r.d_weights = Matrix(weights.rows(), weights.cols());
  for (std::size_t c = 0; c < weights.rows(); ++c) {
    const double g = (p[c] - (c == label ? 1.0 : 0.0)) / temperature;
    axpy(g, weights.row(c), r.d_query);
    axpy(g, query, r.d_weights.row(c));
  }
  return r;
}

LossResult supcon_loss(std::span<const double> anchor_post, const ContrastSet& contrast,
                       double temperature, bool key_gradients) {
  require_temperature(temperature);
  require(contrast.size() > 0, "supcon_loss: contrast set is empty");
  const std::size_t dim = anchor_post.size();

  LossResult r;
  r.grads.d_anchor_post.assign(dim, 0.0);
  r.grads.d_candidates = Matrix(contrast.size(), dim);
  const std::size_t positives = contrast.positive_count();
  if (positives == 0) return r;

  const Vector logits = scaled_logits(contrast.candidates, anchor_post, temperature);
  const double lse = log_sum_exp(logits);
  const std::size_t top = argmax(logits);
  const double inv_p = 1.0 / static_cast<double>(positives);
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const bool pos = contrast.positive_mask[k];
    if (pos) r.loss += inv_p * neg_log_prob(logits, k, lse, top);
    const double g = (std::exp(logits[k] - lse) - (pos ? inv_p : 0.0)) / temperature;
    axpy(g, contrast.candidates.row(k), r.grads.d_anchor_post);
    if (key_gradients) axpy(g, anchor_post, r.grads.d_candidates.row(k));
  }
  return r;
}

PacoResult paco_loss(std::span<const double> anchor_pre, std::span<const double> anchor_post,
                     const ContrastSet& contrast, const CenterBank& bank, std::size_t label,
                     const PacoConfig& cfg) {
  cfg.validate();
  bank.validate();
  require(label < bank.n_classes(), "paco_loss: label out of range");
  require(anchor_pre.size() == bank.dim(), "paco_loss: anchor/center dimension mismatch");
  require(contrast.size() == 0 || contrast.candidates.cols() == anchor_post.size(),
          "paco_loss: anchor/candidate dimension mismatch");
  const double t = cfg.temperature;

  const Vector cand = scaled_logits(contrast.candidates, anchor_post, t);
  const Vector ctr = center_logits(anchor_pre, bank, t, cfg.rebalance_centers);
  const double positives = static_cast<double>(contrast.positive_count());
  const double weight_sum = 1.0 + cfg.alpha * positives;

  // One softmax over centers followed by candidates.
  Vector all(ctr);
  all.insert(all.end(), cand.begin(), cand.end());
  const double lse_all = log_sum_exp(all);
  const std::size_t top = argmax(all);

  double unscaled = neg_log_prob(all, label, lse_all, top);
  for (std::size_t k = 0; k < cand.size(); ++k) {
    if (contrast.positive_mask[k]) {
      unscaled += cfg.alpha * neg_log_prob(all, ctr.size() + k, lse_all, top);
    }
  }

  PacoResult r;
  r.breakdown = breakdown_from_logits(cand, ctr, contrast, label, cfg.alpha);
  r.breakdown.total = unscaled;
  r.breakdown.scaled = unscaled / weight_sum;
  const double scale = cfg.scale_by_weight_sum ? 1.0 / weight_sum : 1.0;
  r.loss = unscaled * scale;

  // dL/dlogit_k = scale * (W * p_k - w_k), W = 1 + alpha |P|.
  LossGrads& g = r.grads;
  g.d_anchor_pre.assign(anchor_pre.size(), 0.0);
  g.d_anchor_post.assign(anchor_post.size(), 0.0);
  g.d_centers = Matrix(bank.n_classes(), bank.dim());
  g.d_candidates = Matrix(contrast.size(), anchor_post.size());
  for (std::size_t c = 0; c < ctr.size(); ++c) {
    const double w = c == label ? 1.0 : 0.0;
    const double dl = scale * (weight_sum * std::exp(ctr[c] - lse_all) - w) / t;
    axpy(dl, bank.centers.row(c), g.d_anchor_pre);
    axpy(dl, anchor_pre, g.d_centers.row(c));
  }
  for (std::size_t k = 0; k < cand.size(); ++k) {
    const double w = contrast.positive_mask[k] ? cfg.alpha : 0.0;
    const double dl = scale * (weight_sum * std::exp(cand[k] - lse_all) - w) / t;
    axpy(dl, contrast.candidates.row(k), g.d_anchor_post);
    if (cfg.key_gradients) axpy(dl, anchor_post, g.d_candidates.row(k));
  }
  return r;
}

LossBreakdown decompose_paco(std::span<const double> anchor_pre,
                             std::span<const double> anchor_post, const ContrastSet& contrast,
                             const CenterBank& bank, std::size_t label, const PacoConfig& cfg) {
  cfg.validate();
  bank.validate();
  require(!cfg.rebalance_centers, "decompose_paco: defined for the unrebalanced loss only");
  require(label < bank.n_classes(), "decompose_paco: label out of range");
  const Vector cand = scaled_logits(contrast.candidates, anchor_post, cfg.temperature);
  const Vector ctr = center_logits(anchor_pre, bank, cfg.temperature, false);
  LossBreakdown b = breakdown_from_logits(cand, ctr, contrast, label, cfg.alpha);
  b.total = b.l_sup + cfg.alpha * b.l_supcon + b.l_extra;
  b.scaled = b.total / (1.0 + cfg.alpha * static_cast<double>(contrast.positive_count()));
  return b;
}

LossResult multitask_loss(std::span<const double> anchor_pre, std::span<const double> anchor_post,
                          const ContrastSet& contrast, const CenterBank& bank, std::size_t label,
                          double lambda, double temperature) {
  require(lambda >= 0.0, "multitask_loss: lambda must be nonnegative");
  const CrossEntropyResult ce = cross_entropy_loss(anchor_pre, bank.centers, label, temperature);
  LossResult r;
  r.loss = ce.loss;
  r.grads.d_anchor_pre = ce.d_query;
  r.grads.d_centers = ce.d_weights;
  r.grads.d_anchor_post.assign(anchor_post.size(), 0.0);
  r.grads.d_candidates = Matrix(contrast.size(), anchor_post.size());
  if (lambda > 0.0 && contrast.size() > 0) {
    const LossResult sc = supcon_loss(anchor_post, contrast, temperature);
    r.loss += lambda * sc.loss;
    axpy(lambda, sc.grads.d_anchor_post, r.grads.d_anchor_post);
  }
  return r;
}

}  // namespace paco
