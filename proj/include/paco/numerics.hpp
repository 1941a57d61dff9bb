#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace paco {

using Vector = std::vector<double>;

/// Raised when a caller breaks an operation's precondition.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when the input is well-formed but degenerate (zero vector, all-zero norms, ...).
class DegenerateInput : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

/// Row-major dense matrix. Small sizes only (weights, centers).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

/// out += scale * v
void axpy(double scale, std::span<const double> v, std::span<double> out);

/// y = M x
Vector matvec(const Matrix& m, std::span<const double> x);
/// y = M^T x
Vector matvec_transposed(const Matrix& m, std::span<const double> x);

double log_sum_exp(std::span<const double> logits);
Vector log_softmax(std::span<const double> logits);
Vector softmax(std::span<const double> logits);

/// Unit-norm copy of v. Throws DegenerateInput on a zero (or non-finite) vector.
Vector l2_normalize(std::span<const double> v);

/// Gradient through y = v / ||v||: returns J^T dy given v and dy.
Vector l2_normalize_backward(std::span<const double> v, std::span<const double> dy);

struct Schedule {
  double base_lr = 0.02;
  std::int64_t total_steps = 1;
};

/// base_lr * (1 + cos(pi * step / total_steps)) / 2
double cosine_lr(std::int64_t step, const Schedule& schedule);

bool all_finite(std::span<const double> v);

/// Deterministic generator used by every experiment: a 64-bit Mersenne Twister
/// (bit-exact across standard libraries) with hand-written uniform/normal
/// transforms so draws do not depend on the library's distribution classes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  /// Standard normal via Box-Muller; caches the second variate.
  double normal();

  Vector normal_vector(std::size_t dim);
  Vector unit_vector(std::size_t dim);

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Seed for an independent stream derived from a base seed and a stream id (splitmix64 mix).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace paco
