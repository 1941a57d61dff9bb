#include "paco/encoder.hpp"

#include <cmath>

namespace paco {

EncoderParams EncoderParams::zeros(std::size_t input_dim, std::size_t embedding_dim) {
  require(input_dim > 0 && embedding_dim > 0, "EncoderParams: dimensions must be positive");
  EncoderParams p;
  p.encoder = Matrix(embedding_dim, input_dim);
  p.head_in = Matrix(embedding_dim, embedding_dim);
  p.bias_in = Vector(embedding_dim, 0.0);
  p.head_out = Matrix(embedding_dim, embedding_dim);
  p.bias_out = Vector(embedding_dim, 0.0);
  return p;
}

EncoderParams EncoderParams::random(std::size_t input_dim, std::size_t embedding_dim, Rng& rng) {
  EncoderParams p = zeros(input_dim, embedding_dim);
  auto fill = [&rng](Matrix& m) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols()));
    for (double& w : m.data()) w = rng.uniform(-bound, bound);
  };
  fill(p.encoder);
  fill(p.head_in);
  fill(p.head_out);
  return p;
}

std::vector<std::span<double>> EncoderParams::tensors() {
  return {encoder.data(), head_in.data(), bias_in, head_out.data(), bias_out};
}

std::vector<std::span<const double>> EncoderParams::tensors() const {
  return {encoder.data(), head_in.data(), bias_in, head_out.data(), bias_out};
}

bool EncoderParams::same_shape(const EncoderParams& other) const {
  return encoder.same_shape(other.encoder) && head_in.same_shape(other.head_in) &&
         head_out.same_shape(other.head_out) && bias_in.size() == other.bias_in.size() &&
         bias_out.size() == other.bias_out.size();
}

EncoderActivations encoder_forward(const EncoderParams& params, std::span<const double> input) {
  require(input.size() == params.input_dim(), "encoder_forward: input dimension mismatch");
  EncoderActivations a;
  a.input.assign(input.begin(), input.end());
  a.encoded = matvec(params.encoder, input);
  a.rep = l2_normalize(a.encoded);
  a.hidden_pre = matvec(params.head_in, a.rep);
  axpy(1.0, params.bias_in, a.hidden_pre);
  a.hidden = a.hidden_pre;
  for (double& h : a.hidden) h = h > 0.0 ? h : 0.0;
  a.head = matvec(params.head_out, a.hidden);
  axpy(1.0, params.bias_out, a.head);
  a.projected = l2_normalize(a.head);
  return a;
}

namespace {

// grad += outer(left, right)
void add_outer(std::span<const double> left, std::span<const double> right, Matrix& grad) {
  for (std::size_t r = 0; r < left.size(); ++r) {
    if (left[r] != 0.0) axpy(left[r], right, grad.row(r));
  }
}

}  // namespace

void encoder_backward(const EncoderParams& params, const EncoderActivations& acts,
                      std::span<const double> d_rep, std::span<const double> d_projected,
                      EncoderParams& grads) {
  require(grads.same_shape(params), "encoder_backward: gradient shape mismatch");
  const Vector d_head = l2_normalize_backward(acts.head, d_projected);
  add_outer(d_head, acts.hidden, grads.head_out);
  axpy(1.0, d_head, grads.bias_out);

  Vector d_hidden = matvec_transposed(params.head_out, d_head);
  for (std::size_t i = 0; i < d_hidden.size(); ++i) {
    if (acts.hidden_pre[i] <= 0.0) d_hidden[i] = 0.0;
  }
  add_outer(d_hidden, acts.rep, grads.head_in);
  axpy(1.0, d_hidden, grads.bias_in);

  Vector d_x = matvec_transposed(params.head_in, d_hidden);
  axpy(1.0, d_rep, d_x);
  const Vector d_encoded = l2_normalize_backward(acts.encoded, d_x);
  add_outer(d_encoded, acts.input, grads.encoder);
}

}  // namespace paco
