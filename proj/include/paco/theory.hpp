#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "paco/losses.hpp"
#include "paco/numerics.hpp"

namespace paco::theory {

/// A scalar that may sit on the boundary of its domain, where it is +infinity.
struct Evaluation {
  double value = 0.0;
  bool boundary = false;
};

/// Optimal true-positive-pair probability for the supervised contrastive loss: 1 / k_y.
double supcon_optimum(double k_y);

struct PacoOptimum {
  double pair_prob = 0.0;    // alpha / (1 + alpha k_y); 0 when there are no positives
  double center_prob = 0.0;  // 1 / (1 + alpha k_y)
};

PacoOptimum paco_optimum(double alpha, double k_y);

enum class SimplexProblem {
  kSupCon,  // minimize -sum_i log p_i over the k-simplex
  kPaco,    // minimize -log p_c - alpha sum_i log p_i over the (k+1)-simplex
};

struct SimplexOptions {
  std::size_t max_iterations = 200000;
  double stationarity_tolerance = 1e-12;
};

struct SimplexResult {
  std::vector<double> pair_probs;  // p_1..p_k
  double center_prob = 0.0;        // p_c, zero for the SupCon problem
  double objective = 0.0;
  std::size_t iterations = 0;
  double stationarity = 0.0;       // ||p - proj(p - grad)||_inf at exit
  bool converged = false;
};

/// Numeric minimizer of the Lagrangian families by projected gradient descent
/// on the probability simplex, started away from the optimum.
SimplexResult simplex_oracle(SimplexProblem problem, std::size_t k, double alpha,
                             const SimplexOptions& options = {});

/// Euclidean projection onto {p : p >= 0, sum p = 1}.
std::vector<double> project_to_simplex(std::span<const double> v);

/// -log p - alpha k* log(1 - p); +inf at p <= 0 or p >= 1.
Evaluation extra_loss(double p_sup, double alpha, double k_star);

/// Closed-form minimizer of extra_loss: 1 / (1 + alpha k*).
double extra_loss_minimizer(double alpha, double k_star);

/// Numeric minimizer of extra_loss over (0, 1) by Brent's method.
double extra_loss_search(double alpha, double k_star);

struct CurvePoint {
  double p_sup = 0.0;
  double value = 0.0;
};

struct ExtraLossCurve {
  std::vector<CurvePoint> points;
  double grid_step = 0.0;
  double argmin = 0.0;  // grid point with the smallest value
};

/// Samples extra_loss on the interior grid p_j = (j + 1) / (grid_points + 1).
ExtraLossCurve extra_loss_curve(double alpha, double k_star, std::size_t grid_points);

/// Supervised contrastive loss value at pair optimum alpha/(1+alpha k*) when P_sup = p:
/// -k* log((alpha / (1 + alpha k*)) / (1 - p)).
Evaluation supcon_intensity(double p_sup, double alpha, double k_star);

/// Closed-form gradient of the unscaled PaCo loss w.r.t. each center:
/// ((alpha k* + 1) p_{c_k} - [k == label]) x / temperature.
Matrix center_gradient_formula(std::span<const double> anchor_pre, const CenterBank& bank,
                               std::size_t label, double alpha, double k_star,
                               std::span<const double> center_probs, double temperature = 1.0);

/// Ratio between the head-class and tail-class optimal pair probabilities under
/// the supervised contrastive loss (k_head / k_tail) and under PaCo
/// ((1/alpha + k_head) / (1/alpha + k_tail)). Templated so callers can pass an
/// exact rational type.
template <class T>
T supcon_rebalance_ratio(const T& k_head, const T& k_tail) {
  return k_head / k_tail;
}

template <class T>
T paco_rebalance_ratio(const T& alpha, const T& k_head, const T& k_tail) {
  const T inv_alpha = T(1) / alpha;
  return (inv_alpha + k_head) / (inv_alpha + k_tail);
}

/// One row of the closed-form-versus-oracle sweep.
struct OptimaReport {
  double alpha = 0.0;
  double k_y = 0.0;
  double closed_pair_prob = 0.0;
  double closed_center_prob = 0.0;
  double numeric_pair_prob = 0.0;
  double numeric_center_prob = 0.0;
  double gap = 0.0;  // max abs coordinate difference
  bool converged = false;
};

/// Compares the closed forms with the simplex oracle. Non-integer k_y is
/// rounded to the nearest integer count for the oracle.
OptimaReport compare_paco_optimum(double alpha, double k_y, const SimplexOptions& options = {});

struct SupconReport {
  double k_y = 0.0;
  double closed_prob = 0.0;
  double numeric_max_gap = 0.0;
  double closed_loss = 0.0;   // -k log(1/k)
  double numeric_loss = 0.0;
  bool converged = false;
};

SupconReport compare_supcon_optimum(std::size_t k_y, const SimplexOptions& options = {});

}  // namespace paco::theory
