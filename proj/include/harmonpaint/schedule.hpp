#pragma once

// Two-stage division of the sampling trajectory. Steps whose continuous time
// lies in [eta*T, T] form the structure stage (masked self-attention and
// steering); the remaining steps form the style stage (key/value injection).

#include "harmonpaint/core.hpp"

#include <string_view>
#include <vector>

namespace harmonpaint {

enum class Stage { structure, style };

inline std::string_view to_string(Stage s) { return s == Stage::structure ? "structure" : "style"; }

/// Default training horizon T of the noise schedule.
inline constexpr double kDefaultHorizon = 1000.0;

/// Continuous time of sampler step k out of n, uniformly spaced from T down
/// towards 0 ("trailing" spacing: T - 1, ..., T/n - 1).
inline double sampler_time(int step, int total_steps, double horizon = kDefaultHorizon) {
  return horizon * static_cast<double>(total_steps - step) / static_cast<double>(total_steps) - 1.0;
}

struct StepRouting {
  int step_index = 0;
  double time = 0.0;
  Stage stage = Stage::structure;
  std::vector<int> sams_layers;
  std::vector<int> makvs_layers;
  bool steer_active = false;

  bool operator==(const StepRouting&) const = default;
};

class StageSchedule {
 public:
  StageSchedule() = default;
  StageSchedule(double eta, int total_steps, double horizon, std::vector<StepRouting> entries)
      : eta_(eta), total_steps_(total_steps), horizon_(horizon), entries_(std::move(entries)) {}

  [[nodiscard]] double eta() const { return eta_; }
  [[nodiscard]] int total_steps() const { return total_steps_; }
  [[nodiscard]] double horizon() const { return horizon_; }
  [[nodiscard]] const std::vector<StepRouting>& entries() const { return entries_; }

  [[nodiscard]] int structure_steps() const {
    int n = 0;
    for (const auto& e : entries_) n += e.stage == Stage::structure ? 1 : 0;
    return n;
  }
  [[nodiscard]] int style_steps() const { return total_steps_ - structure_steps(); }

  bool operator==(const StageSchedule&) const = default;

 private:
  double eta_ = 0.6;
  int total_steps_ = 0;
  double horizon_ = kDefaultHorizon;
  std::vector<StepRouting> entries_;
};

struct ScheduleOptions {
  bool steer_enabled = true;
  /// Steering runs on every `steer_stride`-th structure step (1 = all).
  int steer_stride = 1;
  double horizon = kDefaultHorizon;
};

inline StageSchedule build_schedule(double eta, int total_steps, const std::vector<int>& sams_layers,
                                    const std::vector<int>& makvs_layers, ScheduleOptions options = {}) {
  require(eta > 0.0 && eta < 1.0, "eta must lie in the open interval (0, 1), got " + std::to_string(eta));
  require(total_steps >= 2, "total_steps must be >= 2");
  require(options.steer_stride >= 1, "steer stride must be >= 1");
  require(options.horizon > static_cast<double>(total_steps), "horizon must exceed the number of steps");

  // Step times are at least T/n apart; the slack only absorbs rounding in
  // eta * T so that t == eta T lands in the closed interval.
  const double boundary = eta * options.horizon - 1e-9 * options.horizon;
  std::vector<StepRouting> entries;
  entries.reserve(static_cast<std::size_t>(total_steps));
  for (int k = 0; k < total_steps; ++k) {
    StepRouting e;
    e.step_index = k;
    e.time = sampler_time(k, total_steps, options.horizon);
    e.stage = e.time >= boundary ? Stage::structure : Stage::style;
    if (e.stage == Stage::structure) {
      e.sams_layers = sams_layers;
      e.steer_active = options.steer_enabled && (k % options.steer_stride == 0);
    } else {
      e.makvs_layers = makvs_layers;
    }
    entries.push_back(std::move(e));
  }
  return StageSchedule(eta, total_steps, options.horizon, std::move(entries));
}

inline const StepRouting& mechanisms_at(const StageSchedule& schedule, int step_index) {
  require(step_index >= 0 && step_index < schedule.total_steps(),
          "step index " + std::to_string(step_index) + " outside [0, " + std::to_string(schedule.total_steps()) + ")");
  return schedule.entries()[static_cast<std::size_t>(step_index)];
}

}  // namespace harmonpaint
