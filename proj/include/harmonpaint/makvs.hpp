#pragma once

// Mask-adjusted key/value attention. Masked rows of K and V are replaced by
// the unmasked-region mean, and each query attends over the concatenation of
// the original keys and the strength-scaled replaced keys.

#include "harmonpaint/attention.hpp"
#include "harmonpaint/mask_ops.hpp"

namespace harmonpaint {

/// Style-transfer strength; 1.4 for stylized content, 0.8 for natural images.
class StyleStrength {
 public:
  static constexpr double kStylized = 1.4;
  static constexpr double kNatural = 0.8;

  StyleStrength() = default;
  explicit StyleStrength(double lambda) : lambda_(lambda) {
    require(std::isfinite(lambda) && lambda >= 0.0, "style strength lambda must be >= 0");
  }

  [[nodiscard]] double value() const { return lambda_; }

 private:
  double lambda_ = kStylized;
};

struct KVPair {
  Matrix key;
  Matrix value;
  Resolution resolution;
  int layer_index = 0;
};

namespace detail {

inline int unmasked_count(const FlatMask& mf) {
  int n = 0;
  for (Eigen::Index i = 0; i < mf.size(); ++i) n += mf.values[i] == 0.0 ? 1 : 0;
  return n;
}

inline void check_style_inputs(Eigen::Index patches, const FlatMask& mf) {
  require(mf.size() == patches,
          "mask length " + std::to_string(mf.size()) + " does not match " + std::to_string(patches) + " patches");
  if (unmasked_count(mf) == 0)
    throw UnrepresentableStyle("mask covers every patch at " + to_string(mf.source) +
                               "; no unmasked region to take style statistics from");
}

/// Transpose of the row-replacement operator applied to a gradient.
inline Matrix style_replace_transpose(const Matrix& grad, const FlatMask& mf) {
  const int n_unmasked = unmasked_count(mf);
  RowVector masked_sum = RowVector::Zero(grad.cols());
  for (Eigen::Index i = 0; i < grad.rows(); ++i)
    if (mf.values[i] != 0.0) masked_sum += grad.row(i);
  masked_sum /= static_cast<double>(n_unmasked);
  Matrix out(grad.rows(), grad.cols());
  for (Eigen::Index i = 0; i < grad.rows(); ++i) {
    if (mf.values[i] != 0.0)
      out.row(i).setZero();
    else
      out.row(i) = grad.row(i) + masked_sum;
  }
  return out;
}

}  // namespace detail

/// Rows at masked patches become the mean of the unmasked rows; other rows
/// are copied. Branches on the binary mask, not the softened one.
inline Matrix style_replace(const Matrix& features, const FlatMask& mf) {
  detail::check_style_inputs(features.rows(), mf);
  RowVector mean = RowVector::Zero(features.cols());
  int n = 0;
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    if (mf.values[i] == 0.0) {
      mean += features.row(i);
      ++n;
    }
  }
  mean /= static_cast<double>(n);
  Matrix out = features;
  for (Eigen::Index i = 0; i < features.rows(); ++i)
    if (mf.values[i] != 0.0) out.row(i) = mean;
  return out;
}

/// softmax(Q [K, lambda K~]^T / sqrt(d)), HW x 2HW.
inline Matrix makvs_attention_weights(const Matrix& q, const KVPair& kv, const FlatMask& mf, StyleStrength strength) {
  check_qkv(q, kv.key, kv.value);
  const Matrix styled_key = style_replace(kv.key, mf);
  Matrix keys(2 * kv.key.rows(), kv.key.cols());
  keys << kv.key, strength.value() * styled_key;
  return softmax_rows(attention_logits(q, keys));
}

inline Matrix makvs_attention(const Matrix& q, const KVPair& kv, const FlatMask& mf, StyleStrength strength) {
  const Matrix weights = makvs_attention_weights(q, kv, mf, strength);
  Matrix values(2 * kv.value.rows(), kv.value.cols());
  values << kv.value, style_replace(kv.value, mf);
  return weights * values;
}

/// Mean-key variant used as a comparison baseline: softmax(Q K~^T / sqrt(d)) V~.
inline Matrix makvs_attention_naive(const Matrix& q, const KVPair& kv, const FlatMask& mf) {
  check_qkv(q, kv.key, kv.value);
  return attention_probs(q, style_replace(kv.key, mf)) * style_replace(kv.value, mf);
}

inline QkvGradient makvs_attention_backward(const Matrix& q, const KVPair& kv, const FlatMask& mf,
                                            StyleStrength strength, const Matrix& dout) {
  check_qkv(q, kv.key, kv.value);
  const Eigen::Index n = kv.key.rows();
  const double lambda = strength.value();
  const Matrix styled_key = style_replace(kv.key, mf);
  const Matrix styled_value = style_replace(kv.value, mf);

  Matrix keys(2 * n, kv.key.cols());
  keys << kv.key, lambda * styled_key;
  Matrix values(2 * n, kv.value.cols());
  values << kv.value, styled_value;
  const Matrix weights = softmax_rows(attention_logits(q, keys));

  const Matrix dvalues = weights.transpose() * dout;
  const Matrix dlogits = softmax_rows_backward(weights, dout * values.transpose());

  QkvGradient g{Matrix::Zero(q.rows(), q.cols()), Matrix::Zero(n, kv.key.cols()), Matrix()};
  Matrix dkeys = Matrix::Zero(2 * n, kv.key.cols());
  accumulate_logit_gradient(q, keys, dlogits, g.dq, dkeys);
  g.dk = dkeys.topRows(n) + lambda * detail::style_replace_transpose(dkeys.bottomRows(n), mf);
  g.dv = dvalues.topRows(n) + detail::style_replace_transpose(dvalues.bottomRows(n), mf);
  return g;
}

}  // namespace harmonpaint
