#pragma once

// Attention steering: a noisy-OR concentration loss over masked per-token
// cross-attention, and gradient descent on the noisy latent to minimize it.

#include "harmonpaint/backend.hpp"
#include "harmonpaint/mask_ops.hpp"

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace harmonpaint {

struct SteerConfig {
  /// Gradient step on the latent. The pipeline multiplies this by
  /// (1 - alpha_bar(t)) at each step; steer_update uses it as given.
  double step_size = 20.0;
  int iterations = 1;
  double epsilon = 1e-6;
  /// Token indices to steer; empty selects every prompt token (no boundary
  /// or padding tokens).
  std::vector<int> tokens;
  /// Cross-attention resolutions (grid height) whose maps enter the loss.
  std::vector<int> resolutions{32, 16};

  bool operator==(const SteerConfig&) const = default;
};

inline void validate(const SteerConfig& cfg) {
  require(std::isfinite(cfg.step_size) && cfg.step_size > 0.0, "steer step size must be positive");
  require(cfg.iterations >= 1, "steer iterations must be >= 1");
  require(cfg.epsilon > 0.0 && cfg.epsilon <= 1e-2, "steer epsilon must lie in (0, 1e-2]");
  require(!cfg.resolutions.empty(), "steer needs at least one cross-attention resolution");
  for (int t : cfg.tokens) require(t >= 0, "steer token indices must be non-negative");
}

/// Arithmetic mean of the maps at each resolution, optionally restricted to
/// the given grid heights. Output order follows first appearance.
inline std::vector<CrossAttentionMap> collect_cross_attention(std::span<const CrossAttentionMap> maps,
                                                              const std::vector<int>& resolutions = {}) {
  require(!maps.empty(), "collect_cross_attention needs at least one map");
  std::vector<CrossAttentionMap> averaged;
  std::vector<int> counts;
  for (const auto& m : maps) {
    if (!resolutions.empty() &&
        std::find(resolutions.begin(), resolutions.end(), m.resolution.height) == resolutions.end())
      continue;
    require(m.weights.rows() == m.resolution.patches(), "cross-attention map does not match its resolution");
    auto it = std::find_if(averaged.begin(), averaged.end(),
                           [&](const CrossAttentionMap& a) { return a.resolution == m.resolution; });
    if (it == averaged.end()) {
      averaged.push_back({m.weights, m.resolution, 0, m.timestep});
      counts.push_back(1);
    } else {
      require(it->weights.cols() == m.weights.cols(), "cross-attention maps at " + to_string(m.resolution) +
                                                          " disagree on token count");
      it->weights += m.weights;
      ++counts[static_cast<std::size_t>(it - averaged.begin())];
    }
  }
  for (std::size_t i = 0; i < averaged.size(); ++i) averaged[i].weights /= static_cast<double>(counts[i]);
  return averaged;
}

/// Column `token` of the averaged map, zeroed outside the mask.
inline Vector masked_token_attention(const CrossAttentionMap& avg, const FlatMask& mf, int token) {
  require(token >= 0 && token < avg.token_count(),
          "token " + std::to_string(token) + " out of range for " + std::to_string(avg.token_count()) + " tokens");
  require(mf.size() == avg.weights.rows(), "mask length does not match the cross-attention map");
  return avg.weights.col(token).cwiseProduct(mf.values);
}

/// -log(max(eps, 1 - prod_j (1 - a_j))) for one token.
inline double steer_token_loss(const Vector& masked, double epsilon) {
  double survive = 1.0;
  for (Eigen::Index j = 0; j < masked.size(); ++j) survive *= 1.0 - masked[j];
  const double hit = 1.0 - survive;
  if (std::isnan(hit)) return hit;
  return hit > epsilon ? -std::log1p(-survive) : -std::log(epsilon);
}

/// d(steer_token_loss)/d(a_j); zero inside the clamped region.
inline Vector steer_token_gradient(const Vector& masked, double epsilon) {
  const Eigen::Index n = masked.size();
  Vector prefix(n + 1), suffix(n + 1);
  prefix[0] = 1.0;
  for (Eigen::Index j = 0; j < n; ++j) prefix[j + 1] = prefix[j] * (1.0 - masked[j]);
  suffix[n] = 1.0;
  for (Eigen::Index j = n; j-- > 0;) suffix[j] = suffix[j + 1] * (1.0 - masked[j]);
  const double hit = 1.0 - prefix[n];
  Vector grad = Vector::Zero(n);
  if (std::isnan(hit)) return Vector::Constant(n, hit);
  if (!(hit > epsilon)) return grad;
  for (Eigen::Index j = 0; j < n; ++j) grad[j] = -prefix[j] * suffix[j + 1] / hit;
  return grad;
}

/// Sum of per-token losses over every supplied masked attention vector.
inline double steer_loss(std::span<const Vector> masked_maps, double epsilon = 1e-6) {
  double total = 0.0;
  for (const auto& m : masked_maps) total += steer_token_loss(m, epsilon);
  return total;
}

/// The steer loss as a function of every cross-attention map of a pass.
/// Per-resolution losses are summed.
class SteerObjective final : public CrossAttentionObjective {
 public:
  SteerObjective(std::map<Resolution, FlatMask> masks, std::vector<int> resolutions, std::vector<int> tokens,
                 double epsilon)
      : masks_(std::move(masks)), resolutions_(std::move(resolutions)), tokens_(std::move(tokens)),
        epsilon_(epsilon) {}

  double evaluate(std::span<const CrossAttentionMap> maps, std::vector<Matrix>* grads) const override {
    if (grads) {
      grads->assign(maps.size(), Matrix());
    }
    std::map<Resolution, std::vector<std::size_t>> groups;
    for (std::size_t b = 0; b < maps.size(); ++b)
      if (selected(maps[b].resolution)) groups[maps[b].resolution].push_back(b);

    double total = 0.0;
    for (const auto& [res, members] : groups) {
      auto mask_it = masks_.find(res);
      require(mask_it != masks_.end(), "no steer mask for resolution " + to_string(res));
      const FlatMask& mf = mask_it->second;

      std::vector<CrossAttentionMap> subset;
      for (auto b : members) subset.push_back(maps[b]);
      const CrossAttentionMap avg = collect_cross_attention(subset).front();
      const double share = 1.0 / static_cast<double>(members.size());

      for (int token : tokens_) {
        const Vector masked = masked_token_attention(avg, mf, token);
        total += steer_token_loss(masked, epsilon_);
        if (!grads) continue;
        const Vector dcol = steer_token_gradient(masked, epsilon_).cwiseProduct(mf.values) * share;
        for (auto b : members) {
          Matrix& g = (*grads)[b];
          if (g.size() == 0) g = Matrix::Zero(maps[b].weights.rows(), maps[b].weights.cols());
          g.col(token) += dcol;
        }
      }
    }
    return total;
  }

  [[nodiscard]] bool selected(Resolution res) const {
    return std::find(resolutions_.begin(), resolutions_.end(), res.height) != resolutions_.end();
  }

 private:
  std::map<Resolution, FlatMask> masks_;
  std::vector<int> resolutions_;
  std::vector<int> tokens_;
  double epsilon_;
};

/// Everything steer_update needs besides the latent.
struct SteerContext {
  const BackendAdapter* backend = nullptr;
  double time = 0.0;
  int step_index = 0;
  const TextEmbedding* text = nullptr;
  const Conditioning* condition = nullptr;
  const HookSet* hooks = nullptr;
  /// Binary masks at every cross-attention resolution.
  const std::map<Resolution, FlatMask>* masks = nullptr;
};

struct SteerOutcome {
  Latent latent;
  std::vector<double> loss_before;  // one entry per completed iteration
  std::vector<double> loss_after;
  bool aborted = false;
  std::string diagnostic;
};

inline std::vector<int> steer_tokens(const SteerConfig& cfg, const TextEmbedding& text) {
  const std::vector<int> tokens = cfg.tokens.empty() ? text.prompt_tokens : cfg.tokens;
  for (int t : tokens)
    require(t >= 0 && t < text.length(), "steer token " + std::to_string(t) + " outside the prompt's " +
                                             std::to_string(text.length()) + " tokens");
  return tokens;
}

inline SteerObjective make_steer_objective(const SteerContext& ctx, const SteerConfig& cfg) {
  return SteerObjective(*ctx.masks, cfg.resolutions, steer_tokens(cfg, *ctx.text), cfg.epsilon);
}

/// Runs cfg.iterations steps of latent <- latent - step_size * grad L_s.
/// A non-finite loss or gradient abandons the update and returns the input
/// latent; a zero loss is a stationary point and stops early.
inline SteerOutcome steer_update(const Latent& latent, const SteerContext& ctx, const SteerConfig& cfg) {
  validate(cfg);
  require(ctx.backend && ctx.text && ctx.condition && ctx.hooks && ctx.masks, "incomplete steer context");
  const SteerObjective objective = make_steer_objective(ctx, cfg);

  SteerOutcome out{latent, {}, {}, false, {}};
  Latent current = latent;
  for (int it = 0; it < cfg.iterations; ++it) {
    DenoiseRequest request{&current, ctx.time, ctx.step_index, ctx.text, ctx.condition, ctx.hooks, {}};
    const ObjectiveGradient g = ctx.backend->objective_gradient(request, objective);
    if (!std::isfinite(g.value) || !g.gradient.data.allFinite()) {
      out.latent = latent;
      out.aborted = true;
      out.diagnostic = "non-finite steer " + std::string(std::isfinite(g.value) ? "gradient" : "loss") +
                       " at step " + std::to_string(ctx.step_index) + ", iteration " + std::to_string(it);
      return out;
    }
    if (g.value == 0.0) break;

    Latent next(current.resolution, current.data - cfg.step_size * g.gradient.data);
    DenoiseRequest after{&next, ctx.time, ctx.step_index, ctx.text, ctx.condition, ctx.hooks, {}};
    out.loss_before.push_back(g.value);
    out.loss_after.push_back(ctx.backend->evaluate_objective(after, objective));
    current = std::move(next);
  }
  out.latent = std::move(current);
  return out;
}

}  // namespace harmonpaint
