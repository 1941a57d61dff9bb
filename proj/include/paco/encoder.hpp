#pragma once

#include <span>
#include <vector>

#include "paco/numerics.hpp"

namespace paco {

/// Parameters of the toy query/key network: a linear encoder followed by a
/// two-layer MLP head G.
///
///   x = normalize(encoder * u)                        (representation, F(x) = x)
///   g = normalize(head_out * relu(head_in * x + b_in) + b_out)
struct EncoderParams {
  Matrix encoder;   // embedding_dim x input_dim
  Matrix head_in;   // embedding_dim x embedding_dim
  Vector bias_in;   // embedding_dim
  Matrix head_out;  // embedding_dim x embedding_dim
  Vector bias_out;  // embedding_dim

  static EncoderParams zeros(std::size_t input_dim, std::size_t embedding_dim);
  /// Uniform(-1, 1) / sqrt(fan_in) weights, zero biases.
  static EncoderParams random(std::size_t input_dim, std::size_t embedding_dim, Rng& rng);

  std::size_t input_dim() const { return encoder.cols(); }
  std::size_t embedding_dim() const { return encoder.rows(); }

  /// Every parameter tensor in a fixed order, for elementwise updates.
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;

  bool same_shape(const EncoderParams& other) const;
  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

/// Intermediate values kept for the backward pass.
struct EncoderActivations {
  Vector input;
  Vector encoded;    // before normalization
  Vector rep;        // x, unit norm
  Vector hidden_pre;
  Vector hidden;
  Vector head;       // before normalization
  Vector projected;  // g = G(x), unit norm
};

EncoderActivations encoder_forward(const EncoderParams& params, std::span<const double> input);

/// Accumulates into `grads` the parameter gradient for upstream gradients on
/// the representation x (d_rep) and on the projection g (d_projected).
void encoder_backward(const EncoderParams& params, const EncoderActivations& acts,
                      std::span<const double> d_rep, std::span<const double> d_projected,
                      EncoderParams& grads);

}  // namespace paco
