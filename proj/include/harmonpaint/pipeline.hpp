#pragma once

// End-to-end inpainting run over a BackendAdapter: schedule, per-step
// interceptor installation, steering, sampling with background blending,
// attention dumps and the run manifest.

#include "harmonpaint/analysis.hpp"
#include "harmonpaint/backend.hpp"
#include "harmonpaint/config.hpp"
#include "harmonpaint/hooks.hpp"
#include "harmonpaint/schedule.hpp"
#include "harmonpaint/steer.hpp"
#include "harmonpaint/toy_denoiser.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace harmonpaint {

/// Binary, flat and soft masks at one attention resolution.
struct MaskLevel {
  BinaryMask binary;
  FlatMask flat;
  SoftMaskVector soft;
};

/// Masks for every resolution a backend exposes, computed once per run.
class MaskPyramid {
 public:
  MaskPyramid(const BinaryMask& pixel_mask, const std::vector<Resolution>& resolutions, double tau) {
    for (Resolution r : resolutions) {
      if (levels_.contains(r)) continue;
      BinaryMask b = resize_mask(pixel_mask, r);
      FlatMask f = flatten_mask(b);
      SoftMaskVector s = soften_mask(f, tau);
      levels_.emplace(r, MaskLevel{std::move(b), std::move(f), std::move(s)});
    }
  }

  [[nodiscard]] const MaskLevel& at(Resolution r) const {
    auto it = levels_.find(r);
    require(it != levels_.end(), "no mask prepared for resolution " + to_string(r));
    return it->second;
  }

  [[nodiscard]] std::map<Resolution, FlatMask> flat_masks() const {
    std::map<Resolution, FlatMask> out;
    for (const auto& [r, level] : levels_) out.emplace(r, level.flat);
    return out;
  }

 private:
  std::map<Resolution, MaskLevel> levels_;
};

/// Hooks for one step: masked self-attention on structure-stage layers,
/// key/value injection on style-stage layers, cross-attention capture while
/// steering is active.
inline HookSet install_interceptors(const BackendAdapter& backend, const StepRouting& route, const MaskPyramid& masks,
                                    const RunConfig& cfg) {
  HookSet hooks;
  const SamsOptions sams_options{cfg.sams_renormalize};
  for (int layer : route.sams_layers) {
    const BlockInfo& block = backend.self_block(layer);
    hooks.install(layer, std::make_shared<SamsHook>(masks.at(block.resolution).soft, sams_options));
  }
  for (int layer : route.makvs_layers) {
    const BlockInfo& block = backend.self_block(layer);
    // install() rejects a layer that already carries a SAMS hook.
    hooks.install(layer, std::make_shared<MakvsHook>(masks.at(block.resolution).flat, StyleStrength(cfg.lambda)));
  }
  hooks.capture_cross = route.steer_active;
  return hooks;
}

struct StepRecord {
  int step_index = 0;
  double time = 0.0;
  Stage stage = Stage::structure;
  std::vector<std::string> hooks;
  bool steer_ran = false;
  std::vector<double> steer_loss_before;
  std::vector<double> steer_loss_after;
  bool steer_aborted = false;
  std::string steer_diagnostic;
};

struct RunManifest {
  RunRequest request;
  std::string backend;
  StageSchedule schedule;
  std::vector<StepRecord> steps;
  std::vector<std::string> dump_files;
  std::string output_image;
  std::map<std::string, double> stage_seconds;  // wall clock, kept out of the manifest text
};

struct InpaintResult {
  RgbImage image;
  Latent final_latent;
  Latent source_latent;
  BinaryMask latent_mask;
  RunManifest manifest;
};

namespace detail {

inline std::vector<Resolution> block_resolutions(const BackendAdapter& backend) {
  std::vector<Resolution> out;
  for (const auto& b : backend.self_attention_blocks()) out.push_back(b.resolution);
  for (const auto& b : backend.cross_attention_blocks()) out.push_back(b.resolution);
  return out;
}

/// Replaces rows outside the latent mask with the source latent noised to
/// signal rate `alpha`; alpha = 1 copies the source rows.
inline void blend_background(Latent& z, const Latent& source, const FlatMask& latent_mask, double alpha,
                             const Matrix& eps) {
  const Latent noised = alpha >= 1.0 ? source : noise_with(source, alpha, eps);
  for (Eigen::Index i = 0; i < z.data.rows(); ++i)
    if (latent_mask.values[i] == 0.0) z.data.row(i) = noised.data.row(i);
}

}  // namespace detail

/// Runs one inpainting generation. Sub-seeds derived from cfg.seed: "noise"
/// (initial latent), "background" (noise for blended background), "text".
inline InpaintResult run_inpaint(const BackendAdapter& backend, const RgbImage& image, const BinaryMask& mask,
                                 const std::string& prompt, const RunConfig& cfg) {
  using clock = std::chrono::steady_clock;
  validate(cfg);
  require(image.width == mask.width() && image.height == mask.height(),
          "image is " + std::to_string(image.width) + "x" + std::to_string(image.height) + " but mask is " +
              std::to_string(mask.width()) + "x" + std::to_string(mask.height()));

  const int block_count = static_cast<int>(backend.self_attention_blocks().size());
  const std::vector<int> sams_layers = cfg.sams_layers.resolve(block_count);
  const std::vector<int> makvs_layers = cfg.makvs_layers.resolve(block_count);
  const StageSchedule schedule = build_schedule(cfg.eta, cfg.steps, sams_layers, makvs_layers,
                                                {cfg.steer_enabled, cfg.steer_stride, backend.horizon()});

  const Resolution latent_res = backend.latent_resolution();
  std::vector<Resolution> resolutions = detail::block_resolutions(backend);
  resolutions.push_back(latent_res);
  const MaskPyramid masks(mask, resolutions, cfg.tau);

  // Style statistics must exist wherever key/value injection will run.
  if (schedule.style_steps() > 0)
    for (int layer : makvs_layers) {
      const MaskLevel& level = masks.at(backend.self_block(layer).resolution);
      if (level.binary.masked_count() == level.binary.resolution().patches())
        throw UnrepresentableStyle("mask covers the whole image at " + to_string(level.binary.resolution()) +
                                   " (layer " + std::to_string(layer) + "); key/value injection has no style source");
    }

  const TextEmbedding text = backend.encode_text(prompt, derive_seed(cfg.seed, "text"));
  const bool any_steer = std::any_of(schedule.entries().begin(), schedule.entries().end(),
                                     [](const StepRouting& e) { return e.steer_active; });
  if (any_steer) {
    (void)steer_tokens(cfg.steer, text);
    bool found = false;
    for (const auto& b : backend.cross_attention_blocks())
      found = found || std::find(cfg.steer.resolutions.begin(), cfg.steer.resolutions.end(),
                                 b.resolution.height) != cfg.steer.resolutions.end();
    require(found, "no cross-attention blocks at steer resolutions " +
                       detail::format_int_list(cfg.steer.resolutions));
  }

  const Latent source = backend.encode_image(image);
  const MaskLevel& latent_level = masks.at(latent_res);
  Conditioning condition{Latent(latent_res, Matrix(latent_level.flat.values)), source};
  for (Eigen::Index i = 0; i < source.data.rows(); ++i)
    if (latent_level.flat.values[i] != 0.0) condition.masked_image.data.row(i).setZero();

  const Matrix background_eps = seeded_noise(source, derive_seed(cfg.seed, "background"));
  Latent z(latent_res, seeded_noise(source, derive_seed(cfg.seed, "noise")));
  detail::blend_background(z, source, latent_level.flat, backend.alpha_bar(schedule.entries().front().time),
                           background_eps);

  const std::map<Resolution, FlatMask> flat_masks = masks.flat_masks();
  std::optional<DumpWriter> dumps;
  if (!cfg.dump_dir.empty()) dumps.emplace(cfg.dump_dir);

  InpaintResult result;
  RunManifest& manifest = result.manifest;
  manifest.request.prompt = prompt;
  manifest.request.config = cfg;
  manifest.backend = backend.name();
  manifest.schedule = schedule;

  for (const StepRouting& route : schedule.entries()) {
    const auto started = clock::now();
    const HookSet hooks = install_interceptors(backend, route, masks, cfg);
    StepRecord record{route.step_index, route.time, route.stage, hooks.log(), false, {}, {}, false, {}};

    if (route.steer_active) {
      SteerConfig steer = cfg.steer;
      steer.step_size = cfg.steer.step_size * (1.0 - backend.alpha_bar(route.time));
      const SteerContext ctx{&backend, route.time, route.step_index, &text, &condition, &hooks, &flat_masks};
      SteerOutcome outcome = steer_update(z, ctx, steer);
      record.steer_ran = true;
      record.steer_loss_before = std::move(outcome.loss_before);
      record.steer_loss_after = std::move(outcome.loss_after);
      record.steer_aborted = outcome.aborted;
      record.steer_diagnostic = std::move(outcome.diagnostic);
      z = std::move(outcome.latent);
    }

    DenoiseRequest request{&z, route.time, route.step_index, &text, &condition, &hooks, {}};
    const bool dump_now = dumps.has_value() && route.step_index % cfg.dump_stride == 0;
    if (dump_now) {
      request.capture.cross = true;
      std::set<int> layers(sams_layers.begin(), sams_layers.end());
      layers.insert(makvs_layers.begin(), makvs_layers.end());
      request.capture.self_layers.assign(layers.begin(), layers.end());
    }
    DenoiseResult denoised = backend.denoise(request);
    if (dump_now)
      for (const auto& capture : denoised.captures)
        manifest.dump_files.push_back(dumps->write(make_dump_record(capture)));

    const bool last = route.step_index + 1 == schedule.total_steps();
    const double t_next = last ? -1.0 : schedule.entries()[static_cast<std::size_t>(route.step_index + 1)].time;
    z = backend.sampler_step(z, denoised.noise_prediction, route.time, t_next);
    detail::blend_background(z, source, latent_level.flat, last ? 1.0 : backend.alpha_bar(t_next), background_eps);

    manifest.stage_seconds[std::string(to_string(route.stage))] +=
        std::chrono::duration<double>(clock::now() - started).count();
    manifest.steps.push_back(std::move(record));
  }
  if (dumps) dumps->finish();

  // Pixels outside the mask are pasted back from the input.
  result.image = backend.decode_latent(z, image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      if (!mask.at(y, x))
        for (int c = 0; c < 3; ++c) result.image.at(y, x, c) = image.at(y, x, c);

  result.final_latent = std::move(z);
  result.source_latent = source;
  result.latent_mask = latent_level.binary;
  return result;
}

/// Backend named by the configuration. Only the toy backend ships with this
/// library; an external adapter has to be supplied by the caller.
inline std::unique_ptr<BackendAdapter> make_backend(const RunConfig& cfg) {
  if (cfg.backend == BackendKind::external)
    throw std::runtime_error("backend 'external' has no adapter registered in this build");
  ToyArchitecture arch;
  arch.latent = Resolution{cfg.latent_size, cfg.latent_size};
  arch.parameter_seed = cfg.seed;
  return std::make_unique<ToyBackend>(arch);
}

namespace detail {

inline std::string join_doubles(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + format_double(values[i]);
  return out;
}

inline std::string join_strings(const std::vector<std::string>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + values[i];
  return out;
}

}  // namespace detail

/// Key-value text form. The configuration block comes first with the same
/// keys as a config file, so the manifest can be passed back as --config.
/// Wall-clock timings are written separately (see write_timing).
inline std::string format_manifest(const RunManifest& m) {
  std::ostringstream out;
  out << "# harmonpaint run manifest\n";
  out << "manifest.format = 1\n";
  out << "manifest.backend = " << m.backend << "\n";
  for (const auto& [key, value] : config_entries(m.request)) out << key << " = " << value << "\n";
  out << "schedule.eta = " << detail::format_double(m.schedule.eta()) << "\n";
  out << "schedule.total_steps = " << m.schedule.total_steps() << "\n";
  out << "schedule.structure_steps = " << m.schedule.structure_steps() << "\n";
  out << "schedule.style_steps = " << m.schedule.style_steps() << "\n";
  for (const auto& e : m.schedule.entries()) {
    out << "schedule.step." << e.step_index << " = time=" << detail::format_double(e.time)
        << " stage=" << to_string(e.stage) << " sams=" << detail::format_int_list(e.sams_layers)
        << " makvs=" << detail::format_int_list(e.makvs_layers) << " steer=" << (e.steer_active ? 1 : 0) << "\n";
  }
  for (const auto& s : m.steps) {
    const std::string p = "step." + std::to_string(s.step_index) + ".";
    out << p << "stage = " << to_string(s.stage) << "\n";
    out << p << "hooks = " << detail::join_strings(s.hooks) << "\n";
    if (s.steer_ran) {
      out << p << "steer_loss_before = " << detail::join_doubles(s.steer_loss_before) << "\n";
      out << p << "steer_loss_after = " << detail::join_doubles(s.steer_loss_after) << "\n";
      out << p << "steer_aborted = " << (s.steer_aborted ? "true" : "false") << "\n";
      if (!s.steer_diagnostic.empty()) out << p << "steer_diagnostic = " << s.steer_diagnostic << "\n";
    }
  }
  out << "dump.count = " << m.dump_files.size() << "\n";
  for (std::size_t i = 0; i < m.dump_files.size(); ++i) out << "dump." << i << " = " << m.dump_files[i] << "\n";
  if (!m.output_image.empty()) out << "result.image = " << m.output_image << "\n";
  return out.str();
}

inline void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << format_manifest(m);
}

inline void write_timing(const std::filesystem::path& path, const RunManifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write timing file " + path.string());
  for (const auto& [stage, seconds] : m.stage_seconds) out << "seconds." << stage << " = " << seconds << "\n";
}

/// Reads the run request (configuration snapshot) back from a manifest.
inline RunRequest read_manifest_request(const std::filesystem::path& path) {
  RunRequest request;
  apply_config_file(request, path);
  return request;
}

/// Per-step key/value records of a manifest, e.g. "step.3.hooks".
inline std::map<std::string, std::string> read_manifest_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::map<std::string, std::string> out;
  for (auto& [k, v] : parse_key_values(in, path.string())) out[k] = v;
  return out;
}

}  // namespace harmonpaint
