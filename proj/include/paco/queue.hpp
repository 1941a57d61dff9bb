#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "paco/encoder.hpp"
#include "paco/numerics.hpp"

namespace paco {

struct LabeledKey {
  Vector embedding;
  std::size_t label = 0;
};

/// Fixed-capacity FIFO dictionary of unit-norm key embeddings with labels.
/// Eviction is per entry: once full, every enqueue drops exactly the oldest key.
class MomentumQueue {
 public:
  MomentumQueue(std::size_t capacity, std::size_t embedding_dim);

  void enqueue(std::span<const double> embedding, std::size_t label);
  void enqueue_batch(std::span<const LabeledKey> keys);

  std::size_t capacity() const { return capacity_; }
  std::size_t embedding_dim() const { return dim_; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  std::uint64_t total_written() const { return written_; }
  std::size_t write_cursor() const { return cursor_; }

  /// i-th entry in FIFO order, 0 = oldest.
  std::span<const double> embedding(std::size_t i) const;
  std::size_t label(std::size_t i) const;

  /// Snapshot of all entries, oldest first.
  std::vector<LabeledKey> entries() const;

  /// Rebuilds a queue from a snapshot (oldest first) plus its write counter.
  static MomentumQueue restore(std::size_t capacity, std::size_t embedding_dim,
                               std::span<const LabeledKey> entries, std::uint64_t total_written);

 private:
  std::size_t slot(std::size_t i) const;

  std::size_t capacity_;
  std::size_t dim_;
  Matrix storage_;
  std::vector<std::size_t> labels_;
  std::size_t cursor_ = 0;  // next slot to write
  std::size_t size_ = 0;
  std::uint64_t written_ = 0;
};

/// The candidate set A(i) for one anchor, with P(i) marked.
///
/// Candidates are ordered: queue entries (oldest first), the batch's first-view
/// embeddings except the anchor's own, then every second-view embedding.
struct ContrastSet {
  std::size_t anchor_index = 0;
  std::size_t anchor_label = 0;
  Matrix candidates;                  // |A(i)| x dim
  std::vector<std::size_t> labels;    // aligned with candidate rows
  std::vector<char> positive_mask;    // label == anchor_label

  std::size_t size() const { return labels.size(); }
  std::size_t positive_count() const;

  /// Builds a contrast set from explicit rows; positives are derived from labels.
  static ContrastSet from_rows(std::size_t anchor_label, const Matrix& rows,
                               std::vector<std::size_t> labels);
};

ContrastSet build_contrast_set(std::size_t anchor, std::span<const Vector> batch_v1,
                               std::span<const Vector> batch_v2,
                               std::span<const std::size_t> batch_labels,
                               const MomentumQueue& queue);

/// theta_key' = m * theta_key + (1 - m) * theta_query, elementwise.
EncoderParams momentum_update(const EncoderParams& key_params, const EncoderParams& query_params,
                              double m);

struct ExpectedPositives {
  double exact = 0.0;   // q * (queue_len + 2 * batch - 1)
  double approx = 0.0;  // q * queue_len
};

ExpectedPositives expected_positives(double class_freq, std::size_t queue_len,
                                     std::size_t batch_size);

}  // namespace paco
