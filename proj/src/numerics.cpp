#include "paco/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace paco {

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) {
  // Scaled accumulation so huge or tiny entries do not overflow.
  double scale = 0.0;
  for (double x : v) scale = std::max(scale, std::abs(x));
  if (scale == 0.0 || !std::isfinite(scale)) return scale;
  double s = 0.0;
  for (double x : v) {
    const double r = x / scale;
    s += r * r;
  }
  return scale * std::sqrt(s);
}

void axpy(double scale, std::span<const double> v, std::span<double> out) {
  require(v.size() == out.size(), "axpy: length mismatch");
  for (std::size_t i = 0; i < v.size(); ++i) out[i] += scale * v[i];
}

Vector matvec(const Matrix& m, std::span<const double> x) {
  require(m.cols() == x.size(), "matvec: shape mismatch");
  Vector y(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) y[r] = dot(m.row(r), x);
  return y;
}

Vector matvec_transposed(const Matrix& m, std::span<const double> x) {
  require(m.rows() == x.size(), "matvec_transposed: shape mismatch");
  Vector y(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) axpy(x[r], m.row(r), y);
  return y;
}

double log_sum_exp(std::span<const double> logits) {
  require(!logits.empty(), "log_sum_exp: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  if (mx == -std::numeric_limits<double>::infinity()) return mx;
  require(std::isfinite(mx), "log_sum_exp: non-finite logit");
  double s = 0.0;
  for (double l : logits) s += std::exp(l - mx);
  return mx + std::log(s);
}

Vector log_softmax(std::span<const double> logits) {
  require(!logits.empty(), "log_softmax: empty input");
  require(all_finite(logits), "log_softmax: non-finite logit");
  // Subtract the max first so a constant shift of the input is exact.
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] - mx;
    s += std::exp(out[i]);
  }
  const double log_s = std::log(s);
  for (double& v : out) v -= log_s;
  return out;
}

Vector softmax(std::span<const double> logits) {
  Vector out = log_softmax(logits);
  for (double& v : out) v = std::exp(v);
  return out;
}

Vector l2_normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw DegenerateInput("l2_normalize: zero or non-finite vector");
  }
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

Vector l2_normalize_backward(std::span<const double> v, std::span<const double> dy) {
  require(v.size() == dy.size(), "l2_normalize_backward: length mismatch");
  const double n = l2_norm(v);
  if (!(n > 0.0)) throw DegenerateInput("l2_normalize_backward: zero vector");
  // dx = (dy - y (y . dy)) / n, with y = v / n
  double ydy = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) ydy += v[i] / n * dy[i];
  Vector dx(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) dx[i] = (dy[i] - v[i] / n * ydy) / n;
  return dx;
}

double cosine_lr(std::int64_t step, const Schedule& schedule) {
  require(schedule.base_lr > 0.0, "cosine_lr: base_lr must be positive");
  require(schedule.total_steps > 0, "cosine_lr: total_steps must be positive");
  require(step >= 0 && step <= schedule.total_steps, "cosine_lr: step out of range");
  if (step == schedule.total_steps) return 0.0;
  const double phase = std::numbers::pi * static_cast<double>(step) /
                       static_cast<double>(schedule.total_steps);
  return schedule.base_lr * (1.0 + std::cos(phase)) / 2.0;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::below(std::size_t n) {
  require(n > 0, "Rng::below: empty range");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return static_cast<std::size_t>(x % n);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Vector Rng::normal_vector(std::size_t dim) {
  Vector v(dim);
  for (double& x : v) x = normal();
  return v;
}

Vector Rng::unit_vector(std::size_t dim) {
  for (;;) {
    Vector v = normal_vector(dim);
    if (l2_norm(v) > 1e-12) return l2_normalize(v);
  }
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_ << ' ' << (has_spare_ ? 1 : 0) << ' ';
  os.precision(17);
  os << std::hexfloat << spare_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  int spare_flag = 0;
  std::string spare_text;
  is >> engine_ >> spare_flag >> spare_text;
  if (!is) throw ContractViolation("Rng::restore: malformed state");
  has_spare_ = spare_flag != 0;
  spare_ = std::strtod(spare_text.c_str(), nullptr);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace paco
