#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "paco/queue.hpp"

using namespace paco;

namespace {

Vector unit(std::size_t dim, std::size_t hot) {
  Vector v(dim, 0.0);
  v[hot % dim] = 1.0;
  return v;
}

}  // namespace

TEST_CASE("queue under capacity keeps insertion order") {
  MomentumQueue q(3, 2);
  q.enqueue(unit(2, 0), 0);
  q.enqueue(unit(2, 1), 1);
  REQUIRE(q.size() == 2);
  CHECK(q.label(0) == 0);
  CHECK(q.label(1) == 1);
}

TEST_CASE("queue evicts the oldest entry") {
  MomentumQueue q(3, 2);
  for (std::size_t l : {0u, 1u, 2u}) q.enqueue(unit(2, l), l);
  q.enqueue(unit(2, 3), 3);
  REQUIRE(q.size() == 3);
  CHECK(q.label(0) == 1);
  CHECK(q.label(1) == 2);
  CHECK(q.label(2) == 3);
}

TEST_CASE("queue matches a list oracle over many batches") {
  const std::size_t capacity = 8192, dim = 4, batch = 128;
  MomentumQueue q(capacity, dim);
  oracle::ListQueue<LabeledKey> ref{capacity, {}};
  Rng rng(3);
  for (std::size_t b = 0; b < 100; ++b) {
    std::vector<LabeledKey> keys;
    for (std::size_t i = 0; i < batch; ++i) keys.push_back({rng.unit_vector(dim), rng.below(1000)});
    q.enqueue_batch(keys);
    for (auto& k : keys) ref.push(k);
  }
  REQUIRE(q.size() == capacity);
  CHECK(q.total_written() == 100 * batch);
  for (std::size_t i = 0; i < capacity; ++i) {
    REQUIRE(q.label(i) == ref.items[i].label);
    const auto e = q.embedding(i);
    REQUIRE(std::equal(e.begin(), e.end(), ref.items[i].embedding.begin()));
  }
}

TEST_CASE("queue suffix property for capacities not dividing the batch") {
  Rng rng(4);
  for (std::size_t capacity : {1u, 5u, 7u, 64u}) {
    MomentumQueue q(capacity, 3);
    oracle::ListQueue<std::size_t> ref{capacity, {}};
    std::size_t label = 0;
    for (int step = 0; step < 40; ++step) {
      std::vector<LabeledKey> keys;
      const std::size_t n = rng.below(6);
      for (std::size_t i = 0; i < n; ++i) keys.push_back({rng.unit_vector(3), label++});
      q.enqueue_batch(keys);
      for (auto& k : keys) ref.push(k.label);
      REQUIRE(q.size() == std::min<std::size_t>(capacity, label));
      for (std::size_t i = 0; i < q.size(); ++i) REQUIRE(q.label(i) == ref.items[i]);
    }
  }
}

TEST_CASE("queue rejects bad keys") {
  MomentumQueue q(4, 2);
  CHECK_THROWS_AS(q.enqueue(Vector{1.0, 0.0, 0.0}, 0), ContractViolation);
  CHECK_THROWS_AS(q.enqueue(Vector{2.0, 0.0}, 0), ContractViolation);
  const std::vector<LabeledKey> batch{{unit(2, 0), 0}, {Vector{0.5, 0.5}, 1}};
  CHECK_THROWS_AS(q.enqueue_batch(batch), ContractViolation);
  CHECK(q.size() == 0);  // nothing from the rejected batch was written
}

TEST_CASE("queue restore round-trips") {
  MomentumQueue q(5, 2);
  Rng rng(5);
  for (std::size_t i = 0; i < 12; ++i) q.enqueue(rng.unit_vector(2), i);
  const auto copy = MomentumQueue::restore(5, 2, q.entries(), q.total_written());
  CHECK(copy.entries().size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(copy.label(i) == q.label(i));
  CHECK(copy.total_written() == q.total_written());
}

TEST_CASE("momentum_update endpoints and convex combination") {
  Rng rng(6);
  const auto key = EncoderParams::random(4, 3, rng);
  const auto query = EncoderParams::random(4, 3, rng);
  CHECK(momentum_update(key, query, 1.0) == key);
  CHECK(momentum_update(key, query, 0.0) == query);

  const double m = 0.999;
  const auto mixed = momentum_update(key, query, m);
  const auto tk = key.tensors();
  const auto tq = query.tensors();
  const auto tm = mixed.tensors();
  for (std::size_t t = 0; t < tk.size(); ++t) {
    for (std::size_t i = 0; i < tk[t].size(); ++i) {
      REQUIRE(tm[t][i] == m * tk[t][i] + (1.0 - m) * tq[t][i]);
      // contraction toward the query parameters
      REQUIRE(std::abs(tm[t][i] - tq[t][i]) ==
              doctest::Approx(m * std::abs(tk[t][i] - tq[t][i])).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(momentum_update(key, query, 1.5), ContractViolation);
  CHECK_THROWS_AS(momentum_update(key, query, -0.1), ContractViolation);
}

TEST_CASE("contrast set size and positives") {
  SUBCASE("empty queue, batch of two") {
    MomentumQueue q(8, 2);
    const std::vector<Vector> v1{unit(2, 0), unit(2, 1)}, v2{unit(2, 0), unit(2, 1)};
    const std::vector<std::size_t> labels{0, 1};
    const auto cs = build_contrast_set(0, v1, v2, labels, q);
    CHECK(cs.size() == 3);
    CHECK(cs.positive_count() == 1);  // only the anchor's own second view
  }
  SUBCASE("queue plus batch against an exhaustive label scan") {
    Rng rng(9);
    MomentumQueue q(100, 3);
    for (std::size_t i = 0; i < 100; ++i) q.enqueue(rng.unit_vector(3), i < 10 ? 7 : 1 + rng.below(5));
    std::vector<Vector> v1, v2;
    const std::vector<std::size_t> labels{7, 2, 7, 3};
    for (std::size_t i = 0; i < 4; ++i) {
      v1.push_back(rng.unit_vector(3));
      v2.push_back(rng.unit_vector(3));
    }
    const auto cs = build_contrast_set(0, v1, v2, labels, q);
    REQUIRE(cs.size() == 100 + 2 * 4 - 1);
    std::size_t scan = 0;
    for (std::size_t i = 0; i < q.size(); ++i) scan += q.label(i) == 7;
    for (std::size_t i = 1; i < 4; ++i) scan += labels[i] == 7;
    for (std::size_t i = 0; i < 4; ++i) scan += labels[i] == 7;
    CHECK(cs.positive_count() == scan);
    for (std::size_t k = 0; k < cs.size(); ++k) {
      REQUIRE((cs.positive_mask[k] != 0) == (cs.labels[k] == 7));
    }
    // the anchor's first view is absent, its second view present
    for (std::size_t k = 0; k < cs.size(); ++k) {
      const auto row = cs.candidates.row(k);
      if (k < 100 + 3) {
        REQUIRE_FALSE(std::equal(row.begin(), row.end(), v1[0].begin()));
      }
    }
    const auto last_block = cs.candidates.row(100 + 3);
    CHECK(std::equal(last_block.begin(), last_block.end(), v2[0].begin()));
  }
}

TEST_CASE("contrast set size holds for every anchor") {
  Rng rng(10);
  MomentumQueue q(17, 2);
  for (std::size_t i = 0; i < 11; ++i) q.enqueue(rng.unit_vector(2), rng.below(3));
  std::vector<Vector> v1, v2;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 6; ++i) {
    v1.push_back(rng.unit_vector(2));
    v2.push_back(rng.unit_vector(2));
    labels.push_back(rng.below(3));
  }
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(build_contrast_set(i, v1, v2, labels, q).size() == q.size() + 2 * 6 - 1);
  }
}

TEST_CASE("expected positives") {
  const auto e = expected_positives(0.001, 8192, 128);
  CHECK(e.exact == doctest::Approx(8.447).epsilon(1e-12));
  CHECK(e.approx == doctest::Approx(8.192).epsilon(1e-12));
  CHECK(0.05 * e.approx == doctest::Approx(0.4096));

  const auto single = expected_positives(1.0, 10, 1);
  CHECK(single.exact == 11.0);
  CHECK(single.approx == 10.0);
  CHECK_THROWS_AS(expected_positives(0.0, 10, 1), ContractViolation);
}
