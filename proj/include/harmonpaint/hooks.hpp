#pragma once

// Interceptors that replace the self-attention computation of individual
// denoiser blocks.

#include "harmonpaint/makvs.hpp"
#include "harmonpaint/sams.hpp"

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace harmonpaint {

/// Maps produced while an interceptor runs; filled only when requested.
struct HookTrace {
  bool want_maps = false;
  Matrix probs;     // pre-modification softmax weights
  Matrix modified;  // weights actually used (empty when identical to probs)
};

/// Replaces softmax(q k^T / sqrt(d)) v for one block. Implementations are
/// immutable and may be shared across threads.
class SelfAttentionHook {
 public:
  virtual ~SelfAttentionHook() = default;

  [[nodiscard]] virtual std::string name() const = 0;
  virtual Matrix forward(const Matrix& q, const Matrix& k, const Matrix& v, HookTrace* trace) const = 0;
  virtual QkvGradient backward(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& dout) const = 0;
};

/// Plain attention; installing it must not change any output.
class VanillaHook final : public SelfAttentionHook {
 public:
  [[nodiscard]] std::string name() const override { return "vanilla"; }

  Matrix forward(const Matrix& q, const Matrix& k, const Matrix& v, HookTrace* trace) const override {
    if (trace && trace->want_maps) {
      trace->probs = attention_probs(q, k);
      return trace->probs * v;
    }
    return attention(q, k, v);
  }

  QkvGradient backward(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& dout) const override {
    return attention_backward(q, k, v, dout);
  }
};

class SamsHook final : public SelfAttentionHook {
 public:
  SamsHook(SoftMaskVector soft, SamsOptions options = {}) : soft_(std::move(soft)), options_(options) {}

  [[nodiscard]] std::string name() const override { return "sams"; }
  [[nodiscard]] const SoftMaskVector& soft_mask() const { return soft_; }

  Matrix forward(const Matrix& q, const Matrix& k, const Matrix& v, HookTrace* trace) const override {
    SamsForward f = sams_forward(q, k, v, soft_, options_);
    if (trace && trace->want_maps) {
      trace->probs = std::move(f.probs);
      trace->modified = std::move(f.modified);
    }
    return std::move(f.output);
  }

  QkvGradient backward(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& dout) const override {
    return sams_attention_backward(q, k, v, soft_, dout, options_);
  }

 private:
  SoftMaskVector soft_;
  SamsOptions options_;
};

class MakvsHook final : public SelfAttentionHook {
 public:
  MakvsHook(FlatMask mask, StyleStrength strength) : mask_(std::move(mask)), strength_(strength) {}

  [[nodiscard]] std::string name() const override { return "makvs"; }

  Matrix forward(const Matrix& q, const Matrix& k, const Matrix& v, HookTrace* trace) const override {
    KVPair kv{k, v, mask_.source, 0};
    if (trace && trace->want_maps) trace->probs = attention_probs(q, k);
    return makvs_attention(q, kv, mask_, strength_);
  }

  QkvGradient backward(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& dout) const override {
    return makvs_attention_backward(q, KVPair{k, v, mask_.source, 0}, mask_, strength_, dout);
  }

 private:
  FlatMask mask_;
  StyleStrength strength_;
};

/// Per-block interceptors for one forward pass, keyed by 1-based
/// self-attention block index.
class HookSet {
 public:
  void install(int layer, std::shared_ptr<const SelfAttentionHook> hook) {
    require(hook != nullptr, "cannot install a null hook");
    require(!hooks_.contains(layer), "layer " + std::to_string(layer) + " already has an interceptor");
    hooks_.emplace(layer, std::move(hook));
  }

  [[nodiscard]] const SelfAttentionHook* find(int layer) const {
    auto it = hooks_.find(layer);
    return it == hooks_.end() ? nullptr : it->second.get();
  }

  [[nodiscard]] const std::map<int, std::shared_ptr<const SelfAttentionHook>>& hooks() const { return hooks_; }
  [[nodiscard]] bool empty() const { return hooks_.empty() && !capture_cross; }

  /// Layers carrying a hook with the given name, ascending.
  [[nodiscard]] std::vector<int> layers_named(const std::string& name) const {
    std::vector<int> out;
    for (const auto& [layer, hook] : hooks_)
      if (hook->name() == name) out.push_back(layer);
    return out;
  }

  /// One entry per installed hook, e.g. "sams@2".
  [[nodiscard]] std::vector<std::string> log() const {
    std::vector<std::string> out;
    for (const auto& [layer, hook] : hooks_) out.push_back(hook->name() + "@" + std::to_string(layer));
    if (capture_cross) out.push_back("capture-cross");
    return out;
  }

  bool capture_cross = false;

 private:
  std::map<int, std::shared_ptr<const SelfAttentionHook>> hooks_;
};

}  // namespace harmonpaint
