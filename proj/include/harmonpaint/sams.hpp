#pragma once

// Self-attention masking: post-softmax reweighting of self-attention by
// m m^T + (1-m)(1-m)^T, which keeps object-object and background-background
// interactions and suppresses the cross-region ones.

#include "harmonpaint/attention.hpp"
#include "harmonpaint/mask_ops.hpp"

namespace harmonpaint {

struct SamsOptions {
  /// Rescale each modified row to sum to one. Off by default: the weighting
  /// is applied after softmax with no renormalization.
  bool renormalize = false;
};

namespace detail {

inline void check_soft_mask(Eigen::Index patches, const SoftMaskVector& soft) {
  require(soft.size() == patches, "soft mask length " + std::to_string(soft.size()) +
                                      " does not match attention size " + std::to_string(patches));
}

/// (W . A) with W_ij = m_i m_j + (1-m_i)(1-m_j), without forming W.
inline Matrix weight_by_regions(const Matrix& attn, const Vector& m) {
  Matrix out(attn.rows(), attn.cols());
  for (Eigen::Index i = 0; i < attn.rows(); ++i) {
    const double mi = m[i];
    for (Eigen::Index j = 0; j < attn.cols(); ++j) {
      const double mj = m[j];
      out(i, j) = (mi * mj + (1.0 - mi) * (1.0 - mj)) * attn(i, j);
    }
  }
  return out;
}

}  // namespace detail

/// Applies the region weighting to an attention-weight matrix.
inline Matrix apply_sams_weights(const Matrix& attn, const SoftMaskVector& soft, SamsOptions options = {}) {
  require(attn.rows() == attn.cols(), "self-attention map must be square");
  detail::check_soft_mask(attn.rows(), soft);
  Matrix out = detail::weight_by_regions(attn, soft.values);
  if (options.renormalize) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double s = out.row(i).sum();
      if (s > 0.0) out.row(i) /= s;
    }
  }
  return out;
}

inline SelfAttentionMap apply_sams(const SelfAttentionMap& attn, const SoftMaskVector& soft, SamsOptions options = {}) {
  require(attn.weights.rows() == attn.resolution.patches(), "self-attention map does not match its resolution");
  return {apply_sams_weights(attn.weights, soft, options), attn.resolution, attn.layer_index, attn.timestep};
}

/// Output of masked self-attention together with the maps it used.
struct SamsForward {
  Matrix output;
  Matrix probs;     // softmax(q k^T / sqrt(d))
  Matrix modified;  // reweighted probs
};

inline SamsForward sams_forward(const Matrix& q, const Matrix& k, const Matrix& v, const SoftMaskVector& soft,
                                SamsOptions options = {}) {
  check_qkv(q, k, v);
  require(q.rows() == k.rows(), "self-attention expects matching query/key patch counts");
  detail::check_soft_mask(q.rows(), soft);
  SamsForward f;
  f.probs = attention_probs(q, k);
  f.modified = apply_sams_weights(f.probs, soft, options);
  f.output = f.modified * v;
  return f;
}

inline Matrix sams_attention(const Matrix& q, const Matrix& k, const Matrix& v, const SoftMaskVector& soft,
                             SamsOptions options = {}) {
  return sams_forward(q, k, v, soft, options).output;
}

inline QkvGradient sams_attention_backward(const Matrix& q, const Matrix& k, const Matrix& v,
                                           const SoftMaskVector& soft, const Matrix& dout,
                                           SamsOptions options = {}) {
  const SamsForward f = sams_forward(q, k, v, soft, options);
  QkvGradient g{Matrix::Zero(q.rows(), q.cols()), Matrix::Zero(k.rows(), k.cols()), f.modified.transpose() * dout};
  Matrix dmodified = dout * v.transpose();
  if (options.renormalize) {
    // modified = B / rowsum(B); recover dB.
    const Matrix raw = detail::weight_by_regions(f.probs, soft.values);
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      const double s = raw.row(i).sum();
      if (s <= 0.0) {
        dmodified.row(i).setZero();
        continue;
      }
      const double dot = dmodified.row(i).dot(f.modified.row(i));
      dmodified.row(i) = (dmodified.row(i).array() - dot).matrix() / s;
    }
  }
  const Matrix dprobs = detail::weight_by_regions(dmodified, soft.values);
  accumulate_logit_gradient(q, k, softmax_rows_backward(f.probs, dprobs), g.dq, g.dk);
  return g;
}

}  // namespace harmonpaint
