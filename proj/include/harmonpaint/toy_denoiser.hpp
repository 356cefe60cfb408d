#pragma once

// Miniature, untrained, fully deterministic denoiser with real self- and
// cross-attention blocks. It mimics the inpainting U-Net interface
// (noisy latent + mask + masked-image latent in, noise prediction out) so every
// attention mechanism can be exercised and differentiated at desk scale.
//
// Layout (16 transformer blocks, each with self-attention, cross-attention
// and a tanh MLP, all residual; per-patch linear maps in between):
//
//   level 0 (full res) : encoder blocks 1-2          decoder blocks 14-16
//   level 1 (1/2 res)  : encoder blocks 3-4          decoder blocks 11-13
//   level 2 (1/4 res)  : encoder blocks 5-6, middle 7, decoder blocks 8-10
//
// Downsampling keeps the top-left patch of each 2x2 cell, upsampling repeats
// each patch; skip connections add the encoder output of the same level.
// With the default 32x32 latent, cross-attention exists at 32, 16 and 8.
//
// The noise prediction is sqrt(1 - abar(t)) * z + f(z, t, ...) where f is the
// network output. The first term is the optimal estimate for a standard-normal
// clean latent and keeps the sampler well-behaved with random weights.
//
// Parameters are drawn from Rng(derive_seed(parameter_seed, "toy-parameters"))
// in a fixed order (input, time, output, then per block: self q,k,v,o; cross
// q,k,v,o; mlp w1,b1,w2), each entry normal with the per-matrix stddev listed
// in make_parameters().

#include "harmonpaint/backend.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <sstream>

namespace harmonpaint {

struct ToyArchitecture {
  int latent_channels = 4;
  Resolution latent{32, 32};
  int model_dim = 32;
  int head_dim = 16;
  int text_dim = 16;
  int token_count = 8;
  int mlp_dim = 64;
  std::uint64_t parameter_seed = 0;

  bool operator==(const ToyArchitecture&) const = default;
};

/// Linear-beta schedule in continuous time:
/// abar(t) = exp(-(b0 t + (b1 - b0) t^2 / (2T))), so abar(0) = 1.
struct NoiseSchedule {
  double horizon = kDefaultHorizon;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  [[nodiscard]] double alpha_bar(double t) const {
    const double tc = std::clamp(t, 0.0, horizon);
    return std::exp(-(beta_start * tc + (beta_end - beta_start) * tc * tc / (2.0 * horizon)));
  }
};

/// z_t for clean latent z0 with noise drawn from `noise_seed`.
inline Latent noise_latent(const Latent& z0, double t, std::uint64_t noise_seed, const NoiseSchedule& schedule = {}) {
  return noise_with(z0, schedule.alpha_bar(t), seeded_noise(z0, noise_seed));
}

class ToyDenoiser {
 public:
  explicit ToyDenoiser(ToyArchitecture arch = {}) : arch_(arch) {
    require(arch.latent.height >= 4 && arch.latent.width >= 4 && arch.latent.height % 4 == 0 &&
                arch.latent.width % 4 == 0,
            "toy latent dimensions must be multiples of 4, got " + to_string(arch.latent));
    require(arch.latent_channels >= 1 && arch.model_dim >= 2 && arch.model_dim % 2 == 0 && arch.head_dim >= 1 &&
                arch.text_dim >= 1 && arch.token_count >= 3 && arch.mlp_dim >= 1,
            "invalid toy architecture");
    build_layout();
    make_parameters();
  }

  [[nodiscard]] const ToyArchitecture& architecture() const { return arch_; }
  [[nodiscard]] const NoiseSchedule& noise_schedule() const { return schedule_; }
  [[nodiscard]] const std::vector<BlockInfo>& blocks() const { return blocks_; }

  [[nodiscard]] DenoiseResult denoise(const DenoiseRequest& request) const {
    Pass pass = forward(request, false);
    DenoiseResult result{Latent(arch_.latent, std::move(pass.eps)), std::move(pass.captures)};
    return result;
  }

  [[nodiscard]] std::vector<CrossAttentionMap> cross_attention_maps(const DenoiseRequest& request) const {
    return forward(request, false).cross_maps;
  }

  [[nodiscard]] double evaluate_objective(const DenoiseRequest& request,
                                          const CrossAttentionObjective& objective) const {
    const Pass pass = forward(request, false);
    return objective.evaluate(pass.cross_maps, nullptr);
  }

  [[nodiscard]] ObjectiveGradient objective_gradient(const DenoiseRequest& request,
                                                     const CrossAttentionObjective& objective) const {
    const Pass pass = forward(request, true);
    std::vector<Matrix> map_grads;
    ObjectiveGradient out;
    out.value = objective.evaluate(pass.cross_maps, &map_grads);
    require(map_grads.size() == pass.cross_maps.size(), "objective returned the wrong number of map gradients");
    out.gradient = Latent(arch_.latent, backward(pass, *request.hooks, map_grads));
    return out;
  }

  /// Self-attention sub-layer of one block applied to block input `h`
  /// (before the residual add); `hook` null means plain attention.
  [[nodiscard]] Matrix self_attention_output(int layer, const Matrix& h, const SelfAttentionHook* hook) const {
    require(layer >= 1 && layer <= static_cast<int>(blocks_.size()), "unknown layer " + std::to_string(layer));
    require(h.rows() == blocks_[static_cast<std::size_t>(layer - 1)].resolution.patches() && h.cols() == arch_.model_dim,
            "block input shape mismatch");
    const BlockParams& p = params_.blocks[static_cast<std::size_t>(layer - 1)];
    Vector inv;
    const Matrix n = rms_norm(h, inv);
    const Matrix q = n * p.wq, k = n * p.wk, v = n * p.wv;
    return (hook ? hook->forward(q, k, v, nullptr) : vanilla_.forward(q, k, v, nullptr)) * p.wo;
  }

  /// FNV-1a over every parameter's bytes.
  [[nodiscard]] std::uint64_t parameter_checksum() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto feed = [&h](const Matrix& m) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
      for (std::size_t i = 0; i < static_cast<std::size_t>(m.size()) * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 0x100000001B3ULL;
      }
    };
    feed(params_.w_in);
    feed(params_.b_in);
    feed(params_.w_time);
    feed(params_.w_out);
    for (const auto& b : params_.blocks)
      for (const Matrix* m : {&b.wq, &b.wk, &b.wv, &b.wo, &b.cq, &b.ck, &b.cv, &b.co, &b.w1, &b.b1, &b.w2}) feed(*m);
    return h;
  }

 private:
  struct BlockParams {
    Matrix wq, wk, wv, wo;  // self-attention
    Matrix cq, ck, cv, co;  // cross-attention
    Matrix w1, b1, w2;      // mlp (b1 is 1 x F)
  };
  struct Parameters {
    Matrix w_in, b_in, w_time, w_out;
    std::vector<BlockParams> blocks;
  };

  enum class OpKind { block, down, up, save_skip, add_skip };
  struct Op {
    OpKind kind;
    int arg;  // block number (0-based) or skip level
  };

  struct BlockCache {
    Matrix n_self, n_cross, n_mlp;  // normalized sublayer inputs
    Vector r_self, r_cross, r_mlp;  // their inverse row RMS
    Matrix q, k, v;
    Matrix cross_probs;
    Matrix cross_values;  // text tokens projected by cv
    Matrix cross_keys;
    Matrix mlp;  // tanh activations
  };

  struct Pass {
    Matrix eps;
    std::vector<CrossAttentionMap> cross_maps;
    std::vector<AttentionCapture> captures;
    std::vector<BlockCache> cache;
  };

  void build_layout() {
    const Resolution r0 = arch_.latent;
    const Resolution levels[3] = {r0, {r0.height / 2, r0.width / 2}, {r0.height / 4, r0.width / 4}};
    int next = 0;
    auto add_block = [&](int level, BlockSection section) {
      ops_.push_back({OpKind::block, next});
      blocks_.push_back({next + 1, levels[level], section});
      ++next;
    };
    for (int level = 0; level < 3; ++level) {
      add_block(level, BlockSection::encoder);
      add_block(level, BlockSection::encoder);
      ops_.push_back({OpKind::save_skip, level});
      if (level < 2) ops_.push_back({OpKind::down, 0});
    }
    add_block(2, BlockSection::middle);
    for (int level = 2; level >= 0; --level) {
      ops_.push_back({OpKind::add_skip, level});
      for (int i = 0; i < 3; ++i) add_block(level, BlockSection::decoder);
      if (level > 0) ops_.push_back({OpKind::up, 0});
    }
  }

  void make_parameters() {
    Rng rng(derive_seed(arch_.parameter_seed, "toy-parameters"));
    const int c = arch_.latent_channels, D = arch_.model_dim, d = arch_.head_dim, dt = arch_.text_dim,
              F = arch_.mlp_dim;
    const int in_features = 2 * c + 1;
    auto sd = [](int fan_in, double gain = 1.0) { return gain / std::sqrt(static_cast<double>(fan_in)); };
    params_.w_in = rng.normal_matrix(in_features, D, sd(in_features));
    params_.b_in = rng.normal_matrix(1, D, 0.1);
    params_.w_time = rng.normal_matrix(D, D, sd(D, 0.5));
    params_.w_out = rng.normal_matrix(D, c, sd(D, 0.2));
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      BlockParams p;
      p.wq = rng.normal_matrix(D, d, sd(D, 1.5));
      p.wk = rng.normal_matrix(D, d, sd(D, 1.5));
      p.wv = rng.normal_matrix(D, d, sd(D));
      p.wo = rng.normal_matrix(d, D, sd(d, 0.5));
      p.cq = rng.normal_matrix(D, d, sd(D, 1.5));
      p.ck = rng.normal_matrix(dt, d, sd(dt, 1.5));
      p.cv = rng.normal_matrix(dt, d, sd(dt));
      p.co = rng.normal_matrix(d, D, sd(d, 0.5));
      p.w1 = rng.normal_matrix(D, F, sd(D));
      p.b1 = rng.normal_matrix(1, F, 0.1);
      p.w2 = rng.normal_matrix(F, D, sd(F, 0.5));
      params_.blocks.push_back(std::move(p));
    }
  }

  [[nodiscard]] RowVector time_embedding(double t) const {
    const int D = arch_.model_dim, half = D / 2;
    RowVector emb(D);
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      emb[2 * k] = std::sin(t * freq);
      emb[2 * k + 1] = std::cos(t * freq);
    }
    return emb * params_.w_time;
  }

  void validate(const DenoiseRequest& r) const {
    require(r.latent && r.text && r.condition && r.hooks, "denoise request is missing an input");
    require(r.latent->resolution == arch_.latent && r.latent->channels() == arch_.latent_channels,
            "latent shape does not match the toy architecture");
    require(r.text->tokens.cols() == arch_.text_dim && r.text->length() >= 1, "text embedding shape mismatch");
    require(r.condition->mask.resolution == arch_.latent && r.condition->mask.channels() == 1,
            "mask condition must be a single-channel latent-resolution grid");
    require(r.condition->masked_image.resolution == arch_.latent &&
                r.condition->masked_image.channels() == arch_.latent_channels,
            "masked-image condition shape mismatch");
    const int n = static_cast<int>(blocks_.size());
    for (const auto& [layer, hook] : r.hooks->hooks())
      require(layer >= 1 && layer <= n, "interceptor installed on unknown layer " + std::to_string(layer) +
                                            " (valid 1.." + std::to_string(n) + ")");
    for (int layer : r.capture.self_layers)
      require(layer >= 1 && layer <= n, "capture requested for unknown layer " + std::to_string(layer));
  }

  static Matrix downsample(const Matrix& h, Resolution res) {
    const int hh = res.height / 2, ww = res.width / 2;
    Matrix out(hh * ww, h.cols());
    for (int i = 0; i < hh; ++i)
      for (int j = 0; j < ww; ++j) out.row(i * ww + j) = h.row((2 * i) * res.width + 2 * j);
    return out;
  }

  static Matrix downsample_backward(const Matrix& dsmall, Resolution res) {
    const int hh = res.height / 2, ww = res.width / 2;
    Matrix out = Matrix::Zero(res.patches(), dsmall.cols());
    for (int i = 0; i < hh; ++i)
      for (int j = 0; j < ww; ++j) out.row((2 * i) * res.width + 2 * j) = dsmall.row(i * ww + j);
    return out;
  }

  // `res` is the small (input) resolution.
  static Matrix upsample(const Matrix& h, Resolution res) {
    const int H = res.height * 2, W = res.width * 2;
    Matrix out(H * W, h.cols());
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) out.row(y * W + x) = h.row((y / 2) * res.width + x / 2);
    return out;
  }

  static Matrix upsample_backward(const Matrix& dbig, Resolution res) {
    const int H = res.height * 2, W = res.width * 2;
    Matrix out = Matrix::Zero(res.patches(), dbig.cols());
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) out.row((y / 2) * res.width + x / 2) += dbig.row(y * W + x);
    return out;
  }

  /// Parameter-free RMS normalization of each row; `inv` receives 1 / rms.
  static Matrix rms_norm(const Matrix& x, Vector& inv) {
    inv = ((x.array().square().rowwise().sum() / static_cast<double>(x.cols())) + 1e-6).rsqrt().matrix();
    return inv.asDiagonal() * x;
  }

  static Matrix rms_norm_backward(const Matrix& dy, const Matrix& y, const Vector& inv) {
    const Vector dot = dy.cwiseProduct(y).rowwise().sum() / static_cast<double>(y.cols());
    return inv.asDiagonal() * (dy - dot.asDiagonal() * y);
  }

  [[nodiscard]] Pass forward(const DenoiseRequest& r, bool keep_cache) const {
    validate(r);
    const int C = arch_.latent_channels;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(arch_.head_dim));
    const bool capture_cross = r.capture.cross || r.hooks->capture_cross;

    Matrix x(arch_.latent.patches(), 2 * C + 1);
    x << r.latent->data, r.condition->mask.data, r.condition->masked_image.data;
    Matrix h = x * params_.w_in;
    h.rowwise() += params_.b_in.row(0) + time_embedding(r.time);

    Pass pass;
    if (keep_cache) pass.cache.resize(blocks_.size());
    Matrix skips[3];
    Resolution res = arch_.latent;

    for (const Op& op : ops_) {
      switch (op.kind) {
        case OpKind::save_skip: skips[op.arg] = h; break;
        case OpKind::add_skip: h += skips[op.arg]; break;
        case OpKind::down:
          h = downsample(h, res);
          res = {res.height / 2, res.width / 2};
          break;
        case OpKind::up:
          h = upsample(h, res);
          res = {res.height * 2, res.width * 2};
          break;
        case OpKind::block: {
          const BlockParams& p = params_.blocks[static_cast<std::size_t>(op.arg)];
          const int layer = op.arg + 1;
          Vector r_self, r_cross, r_mlp;
          Matrix n_self = rms_norm(h, r_self);
          Matrix q = n_self * p.wq, k = n_self * p.wk, v = n_self * p.wv;

          const bool want_self = std::find(r.capture.self_layers.begin(), r.capture.self_layers.end(), layer) !=
                                 r.capture.self_layers.end();
          HookTrace trace{want_self, {}, {}};
          const SelfAttentionHook* hook = r.hooks->find(layer);
          const Matrix sa = hook ? hook->forward(q, k, v, &trace) : vanilla_.forward(q, k, v, &trace);
          if (want_self) {
            pass.captures.push_back({MapKind::self, layer, r.step_index, res, std::move(trace.probs)});
            if (trace.modified.size() > 0)
              pass.captures.push_back({MapKind::self_modified, layer, r.step_index, res, std::move(trace.modified)});
          }
          h += sa * p.wo;

          Matrix ck = r.text->tokens * p.ck;
          Matrix cv = r.text->tokens * p.cv;
          Matrix n_cross = rms_norm(h, r_cross);
          Matrix cross = softmax_rows((n_cross * p.cq) * ck.transpose() * inv_sqrt_d);
          h += (cross * cv) * p.co;

          Matrix n_mlp = rms_norm(h, r_mlp);
          Matrix pre = n_mlp * p.w1;
          pre.rowwise() += p.b1.row(0);
          Matrix act = pre.array().tanh().matrix();
          h += act * p.w2;

          if (capture_cross)
            pass.captures.push_back({MapKind::cross, layer, r.step_index, res, cross});
          pass.cross_maps.push_back({cross, res, layer, r.step_index});
          if (keep_cache) {
            BlockCache& c = pass.cache[static_cast<std::size_t>(op.arg)];
            c.n_self = std::move(n_self);
            c.n_cross = std::move(n_cross);
            c.n_mlp = std::move(n_mlp);
            c.r_self = std::move(r_self);
            c.r_cross = std::move(r_cross);
            c.r_mlp = std::move(r_mlp);
            c.q = std::move(q);
            c.k = std::move(k);
            c.v = std::move(v);
            c.cross_probs = std::move(cross);
            c.cross_values = std::move(cv);
            c.cross_keys = std::move(ck);
            c.mlp = std::move(act);
          }
          break;
        }
      }
    }
    const double prior = std::sqrt(1.0 - schedule_.alpha_bar(r.time));
    pass.eps = prior * r.latent->data + h * params_.w_out;
    return pass;
  }

  /// d(objective)/d(latent) given d(objective)/d(cross map) per block.
  [[nodiscard]] Matrix backward(const Pass& pass, const HookSet& hooks, const std::vector<Matrix>& map_grads) const {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(arch_.head_dim));
    Resolution res = arch_.latent;
    // Resolution at the end of the forward pass equals the input resolution.
    Matrix dh = Matrix::Zero(res.patches(), arch_.model_dim);
    Matrix dskips[3];

    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      const Op& op = *it;
      switch (op.kind) {
        case OpKind::add_skip: dskips[op.arg] = dh; break;
        case OpKind::save_skip: dh += dskips[op.arg]; break;
        case OpKind::up:
          res = {res.height / 2, res.width / 2};
          dh = upsample_backward(dh, res);
          break;
        case OpKind::down:
          res = {res.height * 2, res.width * 2};
          dh = downsample_backward(dh, res);
          break;
        case OpKind::block: {
          const BlockParams& p = params_.blocks[static_cast<std::size_t>(op.arg)];
          const BlockCache& c = pass.cache[static_cast<std::size_t>(op.arg)];
          const int layer = op.arg + 1;

          // mlp
          const Matrix dpre = (dh * p.w2.transpose()).cwiseProduct((1.0 - c.mlp.array().square()).matrix());
          dh += rms_norm_backward(dpre * p.w1.transpose(), c.n_mlp, c.r_mlp);

          // cross-attention
          Matrix dcross = (dh * p.co.transpose()) * c.cross_values.transpose();
          const Matrix& injected = map_grads[static_cast<std::size_t>(op.arg)];
          if (injected.size() > 0) dcross += injected;
          const Matrix dlogits = softmax_rows_backward(c.cross_probs, dcross);
          dh += rms_norm_backward((dlogits * c.cross_keys * inv_sqrt_d) * p.cq.transpose(), c.n_cross, c.r_cross);

          // self-attention
          const Matrix dsa = dh * p.wo.transpose();
          const SelfAttentionHook* hook = hooks.find(layer);
          const QkvGradient g = hook ? hook->backward(c.q, c.k, c.v, dsa) : vanilla_.backward(c.q, c.k, c.v, dsa);
          const Matrix dn = g.dq * p.wq.transpose() + g.dk * p.wk.transpose() + g.dv * p.wv.transpose();
          dh += rms_norm_backward(dn, c.n_self, c.r_self);
          break;
        }
      }
    }
    const Matrix dx = dh * params_.w_in.transpose();
    return dx.leftCols(arch_.latent_channels);
  }

  ToyArchitecture arch_;
  NoiseSchedule schedule_;
  std::vector<BlockInfo> blocks_;
  std::vector<Op> ops_;
  Parameters params_;
  VanillaHook vanilla_;
};

/// BackendAdapter over the toy denoiser with a toy autoencoder (area-average
/// RGB to latent, nearest-neighbour decode) and a hashing text encoder.
class ToyBackend final : public BackendAdapter {
 public:
  explicit ToyBackend(ToyArchitecture arch = {}) : net_(arch) {
    for (const auto& b : net_.blocks()) cross_blocks_.push_back(b);
  }

  [[nodiscard]] const ToyDenoiser& denoiser() const { return net_; }

  [[nodiscard]] std::string name() const override { return "toy"; }
  [[nodiscard]] Resolution latent_resolution() const override { return net_.architecture().latent; }
  [[nodiscard]] int latent_channels() const override { return net_.architecture().latent_channels; }
  [[nodiscard]] const std::vector<BlockInfo>& self_attention_blocks() const override { return net_.blocks(); }
  [[nodiscard]] const std::vector<BlockInfo>& cross_attention_blocks() const override { return cross_blocks_; }
  [[nodiscard]] double horizon() const override { return net_.noise_schedule().horizon; }
  [[nodiscard]] double alpha_bar(double t) const override { return net_.noise_schedule().alpha_bar(t); }

  /// Lower-cased whitespace-separated words become tokens 1..n between a
  /// boundary token at 0 and one at n+1; the rest is padding. Each token
  /// vector is a seeded normal draw keyed by (seed, word).
  [[nodiscard]] TextEmbedding encode_text(std::string_view prompt, std::uint64_t seed) const override {
    const auto& a = net_.architecture();
    TextEmbedding text;
    std::istringstream in{std::string(prompt)};
    std::string word;
    while (in >> word && static_cast<int>(text.words.size()) < a.token_count - 2) {
      std::transform(word.begin(), word.end(), word.begin(),
                     [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      text.words.push_back(word);
    }
    text.tokens.resize(a.token_count, a.text_dim);
    auto token_vector = [&](const std::string& key) {
      Rng rng(derive_seed(seed, "token:" + key));
      return rng.normal_matrix(1, a.text_dim);
    };
    const int n = static_cast<int>(text.words.size());
    text.tokens.row(0) = token_vector("<bos>").row(0);
    for (int i = 0; i < n; ++i) {
      text.tokens.row(i + 1) = token_vector(text.words[static_cast<std::size_t>(i)]).row(0);
      text.prompt_tokens.push_back(i + 1);
    }
    text.tokens.row(n + 1) = token_vector("<eos>").row(0);
    const Matrix pad = token_vector("<pad>");
    for (int i = n + 2; i < a.token_count; ++i) text.tokens.row(i) = pad.row(0);
    return text;
  }

  [[nodiscard]] Latent encode_image(const RgbImage& image) const override {
    require(image.width >= 1 && image.height >= 1, "cannot encode an empty image");
    const Resolution res = latent_resolution();
    const int C = latent_channels();
    Latent z(res, C);
    const std::int64_t H = image.height, W = image.width, h = res.height, w = res.width;
    for (std::int64_t r = 0; r < h; ++r) {
      for (std::int64_t c = 0; c < w; ++c) {
        double rgb[3] = {0, 0, 0};
        // Pixel y spans [y*h, (y+1)*h) in units where cell r spans [r*H, (r+1)*H).
        for (std::int64_t y = (r * H) / h; y * h < (r + 1) * H && y < H; ++y) {
          const std::int64_t oy = std::min((r + 1) * H, (y + 1) * h) - std::max(r * H, y * h);
          if (oy <= 0) continue;
          for (std::int64_t x = (c * W) / w; x * w < (c + 1) * W && x < W; ++x) {
            const std::int64_t ox = std::min((c + 1) * W, (x + 1) * w) - std::max(c * W, x * w);
            if (ox <= 0) continue;
            for (int ch = 0; ch < 3; ++ch)
              rgb[ch] += static_cast<double>(oy * ox) * image.at(static_cast<int>(y), static_cast<int>(x), ch);
          }
        }
        const double area = static_cast<double>(H * W);
        const Eigen::Index row = r * w + c;
        for (int ch = 0; ch < 3; ++ch) rgb[ch] = rgb[ch] / area / 127.5 - 1.0;
        for (int ch = 0; ch < C; ++ch)
          z.data(row, ch) = ch < 3 ? rgb[ch] : (rgb[0] + rgb[1] + rgb[2]) / 3.0;
      }
    }
    return z;
  }

  [[nodiscard]] RgbImage decode_latent(const Latent& latent, int width, int height) const override {
    require(latent.resolution == latent_resolution(), "latent resolution mismatch");
    RgbImage image(width, height);
    const Resolution res = latent.resolution;
    for (int y = 0; y < height; ++y) {
      const int r = static_cast<int>(static_cast<std::int64_t>(y) * res.height / height);
      for (int x = 0; x < width; ++x) {
        const int c = static_cast<int>(static_cast<std::int64_t>(x) * res.width / width);
        for (int ch = 0; ch < 3; ++ch) {
          const double v = ch < latent.channels() ? latent.data(r * res.width + c, ch) : 0.0;
          image.at(y, x, ch) = static_cast<std::uint8_t>(std::clamp(std::lround((v + 1.0) * 127.5), 0L, 255L));
        }
      }
    }
    return image;
  }

  [[nodiscard]] DenoiseResult denoise(const DenoiseRequest& request) const override { return net_.denoise(request); }

  [[nodiscard]] double evaluate_objective(const DenoiseRequest& request,
                                          const CrossAttentionObjective& objective) const override {
    return net_.evaluate_objective(request, objective);
  }

  [[nodiscard]] ObjectiveGradient objective_gradient(const DenoiseRequest& request,
                                                     const CrossAttentionObjective& objective) const override {
    return net_.objective_gradient(request, objective);
  }

 private:
  ToyDenoiser net_;
  std::vector<BlockInfo> cross_blocks_;
};

}  // namespace harmonpaint
