#include "paco/queue.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace paco {

namespace {
constexpr double kUnitTolerance = 1e-9;
}

MomentumQueue::MomentumQueue(std::size_t capacity, std::size_t embedding_dim)
    : capacity_(capacity),
      dim_(embedding_dim),
      storage_(capacity, embedding_dim),
      labels_(capacity, 0) {
  require(capacity > 0, "MomentumQueue: capacity must be positive");
  require(embedding_dim > 0, "MomentumQueue: embedding dimension must be positive");
}

std::size_t MomentumQueue::slot(std::size_t i) const {
  // Oldest entry sits at the cursor once the ring is full, at 0 before that.
  const std::size_t oldest = size_ == capacity_ ? cursor_ : 0;
  return (oldest + i) % capacity_;
}

void MomentumQueue::enqueue(std::span<const double> embedding, std::size_t label) {
  require(embedding.size() == dim_,
          "MomentumQueue::enqueue: key has dimension " + std::to_string(embedding.size()) +
              ", queue expects " + std::to_string(dim_));
  require(std::abs(l2_norm(embedding) - 1.0) < kUnitTolerance,
          "MomentumQueue::enqueue: key is not unit-norm");
  std::copy(embedding.begin(), embedding.end(), storage_.row(cursor_).begin());
  labels_[cursor_] = label;
  cursor_ = (cursor_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
  ++written_;
}

void MomentumQueue::enqueue_batch(std::span<const LabeledKey> keys) {
  // Validate the whole batch first so a bad key leaves the queue untouched.
  for (const auto& k : keys) {
    require(k.embedding.size() == dim_, "MomentumQueue::enqueue_batch: key dimension mismatch");
    require(std::abs(l2_norm(k.embedding) - 1.0) < kUnitTolerance,
            "MomentumQueue::enqueue_batch: key is not unit-norm");
  }
  for (const auto& k : keys) enqueue(k.embedding, k.label);
}

std::span<const double> MomentumQueue::embedding(std::size_t i) const {
  require(i < size_, "MomentumQueue::embedding: index out of range");
  return storage_.row(slot(i));
}

std::size_t MomentumQueue::label(std::size_t i) const {
  require(i < size_, "MomentumQueue::label: index out of range");
  return labels_[slot(i)];
}

std::vector<LabeledKey> MomentumQueue::entries() const {
  std::vector<LabeledKey> out;
  out.reserve(size_);
  for (std::size_t i = 0; i < size_; ++i) {
    const auto e = embedding(i);
    out.push_back({Vector(e.begin(), e.end()), label(i)});
  }
  return out;
}

MomentumQueue MomentumQueue::restore(std::size_t capacity, std::size_t embedding_dim,
                                     std::span<const LabeledKey> entries,
                                     std::uint64_t total_written) {
  require(entries.size() <= capacity, "MomentumQueue::restore: more entries than capacity");
  require(total_written >= entries.size(), "MomentumQueue::restore: inconsistent write count");
  MomentumQueue q(capacity, embedding_dim);
  q.enqueue_batch(entries);
  q.written_ = total_written;
  return q;
}

std::size_t ContrastSet::positive_count() const {
  return static_cast<std::size_t>(std::count(positive_mask.begin(), positive_mask.end(), 1));
}

ContrastSet ContrastSet::from_rows(std::size_t anchor_label, const Matrix& rows,
                                   std::vector<std::size_t> labels) {
  require(rows.rows() == labels.size(), "ContrastSet::from_rows: label count mismatch");
  ContrastSet cs;
  cs.anchor_label = anchor_label;
  cs.candidates = rows;
  cs.labels = std::move(labels);
  cs.positive_mask.resize(cs.labels.size());
  for (std::size_t k = 0; k < cs.labels.size(); ++k) {
    cs.positive_mask[k] = cs.labels[k] == anchor_label ? 1 : 0;
  }
  return cs;
}

ContrastSet build_contrast_set(std::size_t anchor, std::span<const Vector> batch_v1,
                               std::span<const Vector> batch_v2,
                               std::span<const std::size_t> batch_labels,
                               const MomentumQueue& queue) {
  const std::size_t batch = batch_labels.size();
  require(batch_v1.size() == batch && batch_v2.size() == batch,
          "build_contrast_set: view/label count mismatch");
  require(anchor < batch, "build_contrast_set: anchor index out of range");
  const std::size_t dim = queue.embedding_dim();
  const std::size_t count = queue.size() + 2 * batch - 1;

  ContrastSet cs;
  cs.anchor_index = anchor;
  cs.anchor_label = batch_labels[anchor];
  cs.candidates = Matrix(count, dim);
  cs.labels.reserve(count);

  std::size_t row = 0;
  auto push = [&](std::span<const double> e, std::size_t label) {
    require(e.size() == dim, "build_contrast_set: embedding dimension mismatch");
    std::copy(e.begin(), e.end(), cs.candidates.row(row++).begin());
    cs.labels.push_back(label);
  };
  for (std::size_t k = 0; k < queue.size(); ++k) push(queue.embedding(k), queue.label(k));
  for (std::size_t k = 0; k < batch; ++k) {
    if (k != anchor) push(batch_v1[k], batch_labels[k]);
  }
  for (std::size_t k = 0; k < batch; ++k) push(batch_v2[k], batch_labels[k]);

  cs.positive_mask.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    cs.positive_mask[k] = cs.labels[k] == cs.anchor_label ? 1 : 0;
  }
  return cs;
}

EncoderParams momentum_update(const EncoderParams& key_params, const EncoderParams& query_params,
                              double m) {
  require(m >= 0.0 && m <= 1.0, "momentum_update: m must lie in [0, 1]");
  require(key_params.same_shape(query_params), "momentum_update: parameter shapes differ");
  EncoderParams out = key_params;
  auto dst = out.tensors();
  const auto src = query_params.tensors();
  for (std::size_t t = 0; t < dst.size(); ++t) {
    for (std::size_t i = 0; i < dst[t].size(); ++i) {
      dst[t][i] = m * dst[t][i] + (1.0 - m) * src[t][i];
    }
  }
  return out;
}

ExpectedPositives expected_positives(double class_freq, std::size_t queue_len,
                                     std::size_t batch_size) {
  require(class_freq > 0.0 && class_freq <= 1.0, "expected_positives: q must lie in (0, 1]");
  require(batch_size > 0, "expected_positives: batch size must be positive");
  const double candidates = static_cast<double>(queue_len) + 2.0 * batch_size - 1.0;
  return {class_freq * candidates, class_freq * static_cast<double>(queue_len)};
}

}  // namespace paco
