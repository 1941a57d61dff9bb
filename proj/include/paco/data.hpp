#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "paco/numerics.hpp"

namespace paco {

/// Per-class training counts, sorted nonincreasing (class 0 is the head).
struct LongTailProfile {
  std::vector<std::size_t> counts;

  std::size_t n_classes() const { return counts.size(); }
  std::size_t total() const;
  double imbalance_factor() const;
};

/// counts[i] = round(n_max * beta^(-i / (n - 1))).
LongTailProfile exponential_profile(std::size_t n_classes, std::size_t n_max, double beta);

/// Power-law rank profile n_max * (1 + c x)^(-power / 2) on x = i / (n - 1), with c
/// chosen so the last class has exactly n_min samples. Endpoints are exact.
LongTailProfile pareto_profile(std::size_t n_classes, std::size_t n_max, std::size_t n_min,
                               double power);

/// q(y) = counts[y] / sum(counts).
Vector class_frequency(const LongTailProfile& profile);

struct SyntheticDataset {
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
  LongTailProfile profile;
  Matrix class_means;                 // n_classes x dim, unit rows
  std::vector<Vector> features;       // unit norm
  std::vector<std::size_t> labels;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;

  std::size_t n_classes() const { return profile.n_classes(); }
};

/// Gaussian mixture on the unit sphere: random unit class means, samples
/// normalize(mean + sigma * N(0, I)). Train follows the profile; test is balanced.
SyntheticDataset sample_gaussian_mixture(const LongTailProfile& profile, std::size_t dim,
                                         double noise_sigma, std::size_t test_per_class,
                                         std::uint64_t seed);

/// Header line "# dim=<d> n_classes=<n> seed=<s> train=<a> test=<b>", then one
/// sample per line: label,f_1,...,f_dim. The first <a> rows are the training
/// split, the remaining <b> rows the test split.
void write_dataset(std::ostream& out, const SyntheticDataset& data);
SyntheticDataset read_dataset(std::istream& in);

/// CSV with header "class,count,frequency".
void write_profile_csv(std::ostream& out, const LongTailProfile& profile);

}  // namespace paco
