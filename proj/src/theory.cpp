#include "paco/theory.hpp"

#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

namespace paco::theory {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double weighted_neg_log(std::span<const double> p, std::span<const double> w) {
  double f = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] <= 0.0) return kInf;
    f -= w[j] * std::log(p[j]);
  }
  return f;
}

std::vector<double> simplex_step(std::span<const double> p, std::span<const double> grad,
                                 double step) {
  std::vector<double> moved(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) moved[j] = p[j] - step * grad[j];
  return project_to_simplex(moved);
}

}  // namespace

double supcon_optimum(double k_y) {
  require(k_y >= 1.0, "supcon_optimum: k_y must be at least 1");
  return 1.0 / k_y;
}

PacoOptimum paco_optimum(double alpha, double k_y) {
  require(alpha > 0.0 && alpha <= 1.0, "paco_optimum: alpha must lie in (0, 1]");
  require(k_y >= 0.0, "paco_optimum: k_y must be nonnegative");
  const double denom = 1.0 + alpha * k_y;
  return {k_y > 0.0 ? alpha / denom : 0.0, 1.0 / denom};
}

std::vector<double> project_to_simplex(std::span<const double> v) {
  require(!v.empty(), "project_to_simplex: empty input");
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double threshold = 0.0;
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    cumulative += sorted[j];
    const double candidate = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (sorted[j] - candidate > 0.0) threshold = candidate;
  }
  std::vector<double> out(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) out[j] = std::max(v[j] - threshold, 0.0);
  return out;
}

SimplexResult simplex_oracle(SimplexProblem problem, std::size_t k, double alpha,
                             const SimplexOptions& options) {
  const bool paco = problem == SimplexProblem::kPaco;
  if (paco) {
    require(alpha > 0.0 && alpha <= 1.0, "simplex_oracle: alpha must lie in (0, 1]");
  } else {
    require(k >= 1, "simplex_oracle: the SupCon problem needs at least one positive");
  }

  // Layout: [p_c,] p_1..p_k
  const std::size_t offset = paco ? 1 : 0;
  const std::size_t n = k + offset;
  std::vector<double> weights(n, paco ? alpha : 1.0);
  if (paco) weights[0] = 1.0;

  // Deterministic, deliberately lopsided start: p_j proportional to j + 1.
  std::vector<double> p(n);
  std::iota(p.begin(), p.end(), 1.0);
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& x : p) x /= total;

  std::vector<double> grad(n);
  auto gradient = [&](std::span<const double> at) {
    for (std::size_t j = 0; j < n; ++j) grad[j] = -weights[j] / at[j];
  };
  auto stationarity = [&](std::span<const double> at) {
    const auto q = simplex_step(at, grad, 1.0);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s = std::max(s, std::abs(q[j] - at[j]));
    return s;
  };

  SimplexResult result;
  double f = weighted_neg_log(p, weights);
  double step = 1.0;
  gradient(p);
  double stat = stationarity(p);
  std::size_t it = 0;
  while (it < options.max_iterations && stat > options.stationarity_tolerance) {
    ++it;
    // Backtracking on the projected path (sufficient-decrease test for
    // projected gradient methods).
    bool accepted = false;
    std::vector<double> trial;
    double f_trial = kInf;
    while (step > 1e-30) {
      trial = simplex_step(p, grad, step);
      // The decrease is summed as -w log1p(d / p) so it stays accurate when it
      // is far smaller than f itself.
      double decrease = 0.0;
      double lin = 0.0;
      double sq = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double d = trial[j] - p[j];
        decrease = trial[j] <= 0.0 ? kInf : decrease - weights[j] * std::log1p(d / p[j]);
        lin += grad[j] * d;
        sq += d * d;
      }
      f_trial = f + decrease;
      if (decrease <= lin + sq / (2.0 * step)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    p = std::move(trial);
    f = f_trial;
    step = std::min(step * 2.0, 1.0);
    gradient(p);
    stat = stationarity(p);
  }

  result.iterations = it;
  result.stationarity = stat;
  result.converged = stat <= options.stationarity_tolerance;
  result.objective = weighted_neg_log(p, weights);
  result.center_prob = paco ? p[0] : 0.0;
  result.pair_probs.assign(p.begin() + static_cast<std::ptrdiff_t>(offset), p.end());
  return result;
}

Evaluation extra_loss(double p_sup, double alpha, double k_star) {
  require(alpha >= 0.0 && k_star >= 0.0, "extra_loss: alpha and k_star must be nonnegative");
  if (!(p_sup > 0.0 && p_sup < 1.0)) return {kInf, true};
  return {-std::log(p_sup) - alpha * k_star * std::log1p(-p_sup), false};
}

double extra_loss_minimizer(double alpha, double k_star) {
  require(alpha >= 0.0 && k_star >= 0.0,
          "extra_loss_minimizer: alpha and k_star must be nonnegative");
  return 1.0 / (1.0 + alpha * k_star);
}

double extra_loss_search(double alpha, double k_star) {
  require(alpha >= 0.0 && k_star >= 0.0, "extra_loss_search: alpha and k_star must be nonnegative");
  const auto f = [&](double p) { return extra_loss(p, alpha, k_star).value; };
  const double edge = 1e-12;
  return boost::math::tools::brent_find_minima(f, edge, 1.0 - edge,
                                               std::numeric_limits<double>::digits)
      .first;
}

ExtraLossCurve extra_loss_curve(double alpha, double k_star, std::size_t grid_points) {
  require(grid_points >= 3, "extra_loss_curve: need at least three grid points");
  ExtraLossCurve curve;
  curve.grid_step = 1.0 / static_cast<double>(grid_points + 1);
  curve.points.reserve(grid_points);
  double best = kInf;
  for (std::size_t j = 0; j < grid_points; ++j) {
    const double p = static_cast<double>(j + 1) * curve.grid_step;
    const double v = extra_loss(p, alpha, k_star).value;
    curve.points.push_back({p, v});
    if (v < best) {
      best = v;
      curve.argmin = p;
    }
  }
  return curve;
}

Evaluation supcon_intensity(double p_sup, double alpha, double k_star) {
  require(alpha > 0.0 && k_star >= 0.0, "supcon_intensity: invalid alpha or k_star");
  const double pair_opt = alpha / (1.0 + alpha * k_star);
  if (p_sup >= 1.0) return {-kInf, true};
  const double value = -k_star * (std::log(pair_opt) - std::log1p(-p_sup));
  return {value, p_sup <= 0.0};
}

Matrix center_gradient_formula(std::span<const double> anchor_pre, const CenterBank& bank,
                               std::size_t label, double alpha, double k_star,
                               std::span<const double> center_probs, double temperature) {
  require(label < bank.n_classes(), "center_gradient_formula: label out of range");
  require(center_probs.size() == bank.n_classes(),
          "center_gradient_formula: one probability per center required");
  require(anchor_pre.size() == bank.dim(), "center_gradient_formula: dimension mismatch");
  require(temperature > 0.0, "center_gradient_formula: temperature must be positive");
  double mass = 0.0;
  for (double p : center_probs) {
    require(p >= 0.0, "center_gradient_formula: negative probability");
    mass += p;
  }
  require(mass <= 1.0 + 1e-9, "center_gradient_formula: probabilities exceed unit mass");

  Matrix grad(bank.n_classes(), bank.dim());
  const double weight_sum = alpha * k_star + 1.0;
  for (std::size_t c = 0; c < bank.n_classes(); ++c) {
    const double coeff = (weight_sum * center_probs[c] - (c == label ? 1.0 : 0.0)) / temperature;
    axpy(coeff, anchor_pre, grad.row(c));
  }
  return grad;
}

OptimaReport compare_paco_optimum(double alpha, double k_y, const SimplexOptions& options) {
  const double k = std::round(k_y);
  const auto closed = paco_optimum(alpha, k);
  const auto numeric =
      simplex_oracle(SimplexProblem::kPaco, static_cast<std::size_t>(k), alpha, options);

  OptimaReport r;
  r.alpha = alpha;
  r.k_y = k;
  r.closed_pair_prob = closed.pair_prob;
  r.closed_center_prob = closed.center_prob;
  r.numeric_center_prob = numeric.center_prob;
  r.converged = numeric.converged;
  r.gap = std::abs(numeric.center_prob - closed.center_prob);
  double pair_sum = 0.0;
  for (double p : numeric.pair_probs) {
    r.gap = std::max(r.gap, std::abs(p - closed.pair_prob));
    pair_sum += p;
  }
  r.numeric_pair_prob = numeric.pair_probs.empty() ? 0.0 : pair_sum / numeric.pair_probs.size();
  return r;
}

SupconReport compare_supcon_optimum(std::size_t k_y, const SimplexOptions& options) {
  const auto numeric = simplex_oracle(SimplexProblem::kSupCon, k_y, 1.0, options);
  SupconReport r;
  r.k_y = static_cast<double>(k_y);
  r.closed_prob = supcon_optimum(r.k_y);
  for (double p : numeric.pair_probs) {
    r.numeric_max_gap = std::max(r.numeric_max_gap, std::abs(p - r.closed_prob));
  }
  r.closed_loss = -r.k_y * std::log(r.closed_prob);
  r.numeric_loss = numeric.objective;
  r.converged = numeric.converged;
  return r;
}

}  // namespace paco::theory
