#pragma once

// The contract a diffusion backend implements so the pipeline can drive it:
// latent geometry, a stable enumeration of attention blocks, text encoding,
// noise prediction with interceptors installed, gradients of a
// cross-attention objective with respect to the noisy latent, and image
// encode/decode.
//
// Self-attention blocks are numbered from 1 in forward order. Encoder blocks
// come first, so small indices always address the encoder.

#include "harmonpaint/attention.hpp"
#include "harmonpaint/hooks.hpp"
#include "harmonpaint/image.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace harmonpaint {

/// channels x height x width latent stored as an HW x C matrix (one patch
/// per row, row-major patch order).
struct Latent {
  Resolution resolution;
  Matrix data;

  Latent() = default;
  Latent(Resolution res, int channels) : resolution(res), data(Matrix::Zero(res.patches(), channels)) {}
  Latent(Resolution res, Matrix values) : resolution(res), data(std::move(values)) {
    require(data.rows() == res.patches(), "latent data does not match resolution " + to_string(res));
  }

  [[nodiscard]] int channels() const { return static_cast<int>(data.cols()); }
  bool operator==(const Latent& other) const {
    return resolution == other.resolution && data.rows() == other.data.rows() && data.cols() == other.data.cols() &&
           data == other.data;
  }
};

struct TextEmbedding {
  Matrix tokens;                   // L x d_text
  std::vector<int> prompt_tokens;  // indices of non-padding, non-boundary tokens
  std::vector<std::string> words;

  [[nodiscard]] int length() const { return static_cast<int>(tokens.rows()); }
};

/// Inpainting condition: latent-resolution mask and the masked-image latent.
struct Conditioning {
  Latent mask;          // 1 channel
  Latent masked_image;  // same channels as the noisy latent
};

enum class BlockSection { encoder, middle, decoder };

inline std::string_view to_string(BlockSection s) {
  switch (s) {
    case BlockSection::encoder: return "encoder";
    case BlockSection::middle: return "middle";
    case BlockSection::decoder: return "decoder";
  }
  return "unknown";
}

struct BlockInfo {
  int index = 0;  // 1-based, forward order
  Resolution resolution;
  BlockSection section = BlockSection::encoder;
};

struct CaptureOptions {
  bool cross = false;
  /// Self-attention layers whose maps (pre- and post-modification) are kept.
  std::vector<int> self_layers;
};

struct DenoiseRequest {
  const Latent* latent = nullptr;
  double time = 0.0;
  int step_index = 0;
  const TextEmbedding* text = nullptr;
  const Conditioning* condition = nullptr;
  const HookSet* hooks = nullptr;
  CaptureOptions capture;
};

struct DenoiseResult {
  Latent noise_prediction;
  std::vector<AttentionCapture> captures;
};

/// Scalar objective over every cross-attention map of one forward pass
/// (ordered by block index).
class CrossAttentionObjective {
 public:
  virtual ~CrossAttentionObjective() = default;
  /// Returns the value; when `grads` is non-null it is resized to maps.size()
  /// and entry b receives d(value)/d(maps[b].weights).
  virtual double evaluate(std::span<const CrossAttentionMap> maps, std::vector<Matrix>* grads) const = 0;
};

struct ObjectiveGradient {
  double value = 0.0;
  Latent gradient;
};

class BackendAdapter {
 public:
  virtual ~BackendAdapter() = default;

  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual Resolution latent_resolution() const = 0;
  [[nodiscard]] virtual int latent_channels() const = 0;
  [[nodiscard]] virtual const std::vector<BlockInfo>& self_attention_blocks() const = 0;
  [[nodiscard]] virtual const std::vector<BlockInfo>& cross_attention_blocks() const = 0;

  /// Training horizon T and cumulative signal rate alpha_bar(t), t in [0, T].
  [[nodiscard]] virtual double horizon() const = 0;
  [[nodiscard]] virtual double alpha_bar(double t) const = 0;

  [[nodiscard]] virtual TextEmbedding encode_text(std::string_view prompt, std::uint64_t seed) const = 0;
  [[nodiscard]] virtual Latent encode_image(const RgbImage& image) const = 0;
  [[nodiscard]] virtual RgbImage decode_latent(const Latent& latent, int width, int height) const = 0;

  [[nodiscard]] virtual DenoiseResult denoise(const DenoiseRequest& request) const = 0;

  /// Objective value at the request's latent, without gradients.
  [[nodiscard]] virtual double evaluate_objective(const DenoiseRequest& request,
                                                  const CrossAttentionObjective& objective) const = 0;

  /// Objective value and its gradient with respect to the request's latent,
  /// taken through every cross-attention block. Must not modify the backend.
  [[nodiscard]] virtual ObjectiveGradient objective_gradient(const DenoiseRequest& request,
                                                             const CrossAttentionObjective& objective) const = 0;

  /// Deterministic DDIM update from time t to t_next (t_next < 0 means the
  /// clean endpoint, alpha_bar = 1).
  [[nodiscard]] virtual Latent sampler_step(const Latent& latent, const Latent& noise_prediction, double t,
                                            double t_next) const {
    const double a = alpha_bar(t);
    const double a_next = t_next < 0.0 ? 1.0 : alpha_bar(t_next);
    const Matrix x0 = (latent.data - std::sqrt(1.0 - a) * noise_prediction.data) / std::sqrt(a);
    return Latent(latent.resolution, std::sqrt(a_next) * x0 + std::sqrt(1.0 - a_next) * noise_prediction.data);
  }

  [[nodiscard]] const BlockInfo& self_block(int index) const {
    const auto& blocks = self_attention_blocks();
    require(index >= 1 && index <= static_cast<int>(blocks.size()),
            "self-attention layer " + std::to_string(index) + " outside 1.." + std::to_string(blocks.size()));
    return blocks[static_cast<std::size_t>(index - 1)];
  }
};

/// Forward noising z_t = sqrt(abar) z0 + sqrt(1 - abar) eps.
inline Latent noise_with(const Latent& z0, double alpha_bar, const Matrix& eps) {
  require(alpha_bar > 0.0 && alpha_bar <= 1.0, "alpha_bar must lie in (0, 1]");
  require(eps.rows() == z0.data.rows() && eps.cols() == z0.data.cols(), "noise shape mismatch");
  return Latent(z0.resolution, std::sqrt(alpha_bar) * z0.data + std::sqrt(1.0 - alpha_bar) * eps);
}

/// Standard-normal noise shaped like `like`, deterministic in the seed.
inline Matrix seeded_noise(const Latent& like, std::uint64_t seed) {
  Rng rng(seed);
  return rng.normal_matrix(like.data.rows(), like.data.cols());
}

}  // namespace harmonpaint
