#pragma once

// Scaled dot-product attention primitives, their vector-Jacobian products,
// and the attention-map records passed between modules.

#include "harmonpaint/core.hpp"

#include <string_view>

namespace harmonpaint {

/// log(DBL_MIN) rounded up.
inline constexpr double kSoftmaxFloor = -708.0;

/// Row-wise numerically stable softmax.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double peak = logits.row(i).maxCoeff();
    // Terms below the normal double range are flushed to zero: subnormal
    // probabilities slow every later product by orders of magnitude.
    const auto shifted = (logits.row(i).array() - peak).eval();
    out.row(i) = (shifted < kSoftmaxFloor).select(0.0, shifted.exp()).matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

/// d(logits) given probabilities p = softmax(logits) and d(p).
inline Matrix softmax_rows_backward(const Matrix& probs, const Matrix& dprobs) {
  const Vector dot = probs.cwiseProduct(dprobs).rowwise().sum();
  return probs.cwiseProduct(dprobs - dot.replicate(1, dprobs.cols()));
}

inline Matrix attention_logits(const Matrix& q, const Matrix& k) {
  require(q.cols() == k.cols(), "query/key dimension mismatch");
  require(q.cols() > 0, "attention head dimension must be positive");
  return (q * k.transpose()) / std::sqrt(static_cast<double>(q.cols()));
}

inline Matrix attention_probs(const Matrix& q, const Matrix& k) { return softmax_rows(attention_logits(q, k)); }

/// Gradients with respect to query, key and value.
struct QkvGradient {
  Matrix dq;
  Matrix dk;
  Matrix dv;
};

/// Backward through logits = q k^T / sqrt(d) given d(logits).
inline void accumulate_logit_gradient(const Matrix& q, const Matrix& k, const Matrix& dlogits, Matrix& dq,
                                      Matrix& dk, double scale = 1.0) {
  const double s = scale / std::sqrt(static_cast<double>(q.cols()));
  dq.noalias() += s * dlogits * k;
  dk.noalias() += s * dlogits.transpose() * q;
}

inline void check_qkv(const Matrix& q, const Matrix& k, const Matrix& v) {
  require(q.rows() > 0 && k.rows() > 0, "attention requires at least one patch");
  require(q.cols() > 0, "attention head dimension must be positive");
  require(q.cols() == k.cols(), "query/key dimension mismatch");
  require(k.rows() == v.rows(), "key/value patch count mismatch");
}

/// softmax(q k^T / sqrt(d)) v
inline Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  check_qkv(q, k, v);
  return attention_probs(q, k) * v;
}

inline QkvGradient attention_backward(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& dout) {
  const Matrix probs = attention_probs(q, k);
  QkvGradient g{Matrix::Zero(q.rows(), q.cols()), Matrix::Zero(k.rows(), k.cols()), probs.transpose() * dout};
  const Matrix dlogits = softmax_rows_backward(probs, dout * v.transpose());
  accumulate_logit_gradient(q, k, dlogits, g.dq, g.dk);
  return g;
}

/// HW x HW self-attention weights with provenance.
struct SelfAttentionMap {
  Matrix weights;
  Resolution resolution;
  int layer_index = 0;
  int timestep = 0;
};

/// HW x L cross-attention weights.
struct CrossAttentionMap {
  Matrix weights;
  Resolution resolution;
  int layer_index = 0;
  int timestep = 0;

  [[nodiscard]] int token_count() const { return static_cast<int>(weights.cols()); }
};

enum class MapKind { self, cross, self_modified };

inline std::string_view to_string(MapKind kind) {
  switch (kind) {
    case MapKind::self: return "self";
    case MapKind::cross: return "cross";
    case MapKind::self_modified: return "self_modified";
  }
  return "unknown";
}

inline MapKind parse_map_kind(std::string_view text) {
  if (text == "self") return MapKind::self;
  if (text == "cross") return MapKind::cross;
  if (text == "self_modified") return MapKind::self_modified;
  throw InvalidArgument("unknown attention map kind '" + std::string(text) + "'");
}

/// A map captured during a forward pass.
struct AttentionCapture {
  MapKind kind = MapKind::self;
  int layer_index = 0;
  int step_index = 0;
  Resolution resolution;
  Matrix weights;
};

}  // namespace harmonpaint
