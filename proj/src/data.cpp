#include "paco/data.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

namespace paco {

std::size_t LongTailProfile::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

double LongTailProfile::imbalance_factor() const {
  require(!counts.empty() && counts.back() > 0, "imbalance_factor: empty profile");
  return static_cast<double>(counts.front()) / static_cast<double>(counts.back());
}

LongTailProfile exponential_profile(std::size_t n_classes, std::size_t n_max, double beta) {
  require(n_classes >= 2, "exponential_profile: need at least two classes");
  require(beta >= 1.0 && std::isfinite(beta), "exponential_profile: beta must be >= 1");
  require(static_cast<double>(n_max) / beta >= 1.0,
          "exponential_profile: n_max / beta must be at least 1");
  LongTailProfile p;
  p.counts.resize(n_classes);
  const double last = static_cast<double>(n_classes - 1);
  for (std::size_t i = 0; i < n_classes; ++i) {
    const double c = static_cast<double>(n_max) * std::pow(beta, -static_cast<double>(i) / last);
    p.counts[i] = static_cast<std::size_t>(std::llround(c));
  }
  p.counts.front() = n_max;
  return p;
}

LongTailProfile pareto_profile(std::size_t n_classes, std::size_t n_max, std::size_t n_min,
                               double power) {
  require(n_classes >= 2, "pareto_profile: need at least two classes");
  require(n_min >= 1 && n_max > n_min, "pareto_profile: need n_max > n_min >= 1");
  require(power > 0.0 && std::isfinite(power), "pareto_profile: power must be positive");
  const double exponent = power / 2.0;
  const double ratio = static_cast<double>(n_max) / static_cast<double>(n_min);
  const double spread = std::pow(ratio, 1.0 / exponent) - 1.0;
  LongTailProfile p;
  p.counts.resize(n_classes);
  const double last = static_cast<double>(n_classes - 1);
  for (std::size_t i = 0; i < n_classes; ++i) {
    const double x = static_cast<double>(i) / last;
    const double c = static_cast<double>(n_max) * std::pow(1.0 + spread * x, -exponent);
    p.counts[i] = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(c)), n_min, n_max);
  }
  p.counts.front() = n_max;
  p.counts.back() = n_min;
  return p;
}

Vector class_frequency(const LongTailProfile& profile) {
  const double total = static_cast<double>(profile.total());
  require(total > 0.0, "class_frequency: empty profile");
  Vector q(profile.n_classes());
  for (std::size_t c = 0; c < q.size(); ++c) {
    q[c] = static_cast<double>(profile.counts[c]) / total;
  }
  return q;
}

SyntheticDataset sample_gaussian_mixture(const LongTailProfile& profile, std::size_t dim,
                                         double noise_sigma, std::size_t test_per_class,
                                         std::uint64_t seed) {
  require(dim >= 2, "sample_gaussian_mixture: dim must be at least 2");
  require(noise_sigma > 0.0, "sample_gaussian_mixture: noise_sigma must be positive");
  require(profile.n_classes() >= 2, "sample_gaussian_mixture: need at least two classes");

  SyntheticDataset d;
  d.dim = dim;
  d.seed = seed;
  d.noise_sigma = noise_sigma;
  d.profile = profile;
  d.class_means = Matrix(profile.n_classes(), dim);

  Rng rng(seed);
  for (std::size_t c = 0; c < profile.n_classes(); ++c) {
    const Vector m = rng.unit_vector(dim);
    std::copy(m.begin(), m.end(), d.class_means.row(c).begin());
  }
  auto draw = [&](std::size_t c) {
    Vector v(d.class_means.row(c).begin(), d.class_means.row(c).end());
    for (double& x : v) x += noise_sigma * rng.normal();
    d.features.push_back(l2_normalize(v));
    d.labels.push_back(c);
  };
  for (std::size_t c = 0; c < profile.n_classes(); ++c) {
    for (std::size_t k = 0; k < profile.counts[c]; ++k) {
      d.train_indices.push_back(d.features.size());
      draw(c);
    }
  }
  for (std::size_t c = 0; c < profile.n_classes(); ++c) {
    for (std::size_t k = 0; k < test_per_class; ++k) {
      d.test_indices.push_back(d.features.size());
      draw(c);
    }
  }
  return d;
}

void write_dataset(std::ostream& out, const SyntheticDataset& data) {
  out << fmt::format("# dim={} n_classes={} seed={} train={} test={}\n", data.dim,
                     data.n_classes(), data.seed, data.train_indices.size(),
                     data.test_indices.size());
  auto emit = [&](std::size_t idx) {
    std::string line = fmt::format("{}", data.labels[idx]);
    for (double x : data.features[idx]) line += fmt::format(",{}", x);
    line += '\n';
    out << line;
  };
  for (std::size_t i : data.train_indices) emit(i);
  for (std::size_t i : data.test_indices) emit(i);
}

namespace {

std::size_t header_field(const std::string& header, const std::string& key) {
  const auto pos = header.find(key + "=");
  require(pos != std::string::npos, "read_dataset: header lacks " + key);
  return static_cast<std::size_t>(std::stoull(header.substr(pos + key.size() + 1)));
}

}  // namespace

SyntheticDataset read_dataset(std::istream& in) {
  std::string header;
  require(static_cast<bool>(std::getline(in, header)) && header.rfind("#", 0) == 0,
          "read_dataset: missing header line");
  SyntheticDataset d;
  d.dim = header_field(header, "dim");
  const std::size_t n_classes = header_field(header, "n_classes");
  d.seed = header_field(header, "seed");
  const std::size_t n_train = header_field(header, "train");
  const std::size_t n_test = header_field(header, "test");
  d.profile.counts.assign(n_classes, 0);

  std::string line;
  for (std::size_t row = 0; row < n_train + n_test; ++row) {
    require(static_cast<bool>(std::getline(in, line)),
            "read_dataset: expected " + std::to_string(n_train + n_test) + " samples");
    const char* it = line.data();
    const char* end = line.data() + line.size();
    std::size_t label = 0;
    auto [p, ec] = std::from_chars(it, end, label);
    require(ec == std::errc() && label < n_classes,
            "read_dataset: bad label on line " + std::to_string(row + 2));
    Vector f(d.dim);
    for (double& x : f) {
      require(p < end && *p == ',', "read_dataset: short row on line " + std::to_string(row + 2));
      auto r = std::from_chars(p + 1, end, x);
      require(r.ec == std::errc(), "read_dataset: bad value on line " + std::to_string(row + 2));
      p = r.ptr;
    }
    (row < n_train ? d.train_indices : d.test_indices).push_back(d.features.size());
    if (row < n_train) ++d.profile.counts[label];
    d.features.push_back(std::move(f));
    d.labels.push_back(label);
  }
  return d;
}

void write_profile_csv(std::ostream& out, const LongTailProfile& profile) {
  const Vector q = class_frequency(profile);
  out << "class,count,frequency\n";
  for (std::size_t c = 0; c < profile.n_classes(); ++c) {
    out << fmt::format("{},{},{}\n", c, profile.counts[c], q[c]);
  }
}

}  // namespace paco
