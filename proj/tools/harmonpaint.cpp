// harmonpaint command line: run, ablate, analyze.
//
// Exit status: 0 success, 2 invalid arguments or configuration, 1 runtime
// failure (unreadable files, corrupt dumps, unsupported backend).

#include "harmonpaint/harmonpaint.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace harmonpaint;

namespace {

struct RunFlags {
  std::string config;
  // Raw text per configuration key; applied after the config file.
  std::map<std::string, std::optional<std::string>> values;
  bool no_steer = false;

};

std::string flag_for(const std::string& key) {
  if (key == "steer_enabled") return "--no-steer";
  std::string flag = "--" + key;
  for (char& c : flag)
    if (c == '_') c = '-';
  return flag;
}

void add_run_flags(CLI::App& cmd, RunFlags& flags) {
  cmd.add_option("--config", flags.config, "key = value configuration file (a run manifest also works)");
  const std::vector<std::pair<std::string, std::string>> options = {
      {"image", "input RGB PNG"},
      {"mask", "mask PNG (>= 128 marks the region to fill)"},
      {"prompt", "text prompt"},
      {"output", "output directory"},
      {"tau", "soft-mask smoothing, [0, 1)"},
      {"lambda", "style strength for key/value injection, >= 0"},
      {"eta", "stage split, (0, 1)"},
      {"steps", "sampler steps"},
      {"seed", "master seed"},
      {"backend", "toy or external"},
      {"dump_dir", "write attention dumps here"},
      {"dump_stride", "dump every Nth step"},
      {"sams_layers", "masked self-attention layers, e.g. 2-6, 'last:4' or 'none'"},
      {"makvs_layers", "key/value injection layers, e.g. last:8"},
      {"sams_renormalize", "renormalize masked self-attention rows (true/false)"},
      {"steer_iters", "steer iterations per step"},
      {"steer_step_size", "steer step size (scaled by 1 - alpha_bar)"},
      {"steer_epsilon", "steer loss clamp"},
      {"steer_tokens", "token indices to steer, or 'all'"},
      {"steer_resolutions", "cross-attention grid heights used by the steer loss"},
      {"steer_stride", "steer every Nth structure step"},
      {"guidance_scale", "classifier-free guidance (external backends only)"},
      {"latent_size", "toy latent grid size"},
  };
  for (const auto& [key, help] : options) {
    auto& slot = flags.values[key];
    cmd.add_option_function<std::string>(flag_for(key), [&slot](const std::string& v) { slot = v; }, help);
  }
  cmd.add_flag("--no-steer", flags.no_steer, "disable the attention steer loss");
}

/// Defaults, then the config file, then flags.
RunRequest resolve_request(const RunFlags& flags) {
  RunRequest request;
  if (!flags.config.empty()) apply_config_file(request, flags.config);
  for (const auto& [key, value] : flags.values)
    if (value) apply_setting(request, key, *value);
  if (flags.no_steer) request.config.steer_enabled = false;
  validate(request.config);
  if (request.image.empty()) throw ConfigError("image", "is required");
  if (request.mask.empty()) throw ConfigError("mask", "is required");
  if (request.prompt.empty()) throw ConfigError("prompt", "is required");
  return request;
}

struct Inputs {
  RgbImage image;
  BinaryMask mask;
};

Inputs load_inputs(const RunRequest& request) {
  RgbImage image = read_rgb_png(request.image);
  BinaryMask mask = mask_from_gray(read_gray_png(request.mask));
  return {std::move(image), std::move(mask)};
}

void save_run(const fs::path& dir, InpaintResult& result, const RunRequest& request) {
  fs::create_directories(dir);
  const fs::path image = dir / "output.png";
  write_png(image, result.image);
  result.manifest.request = request;
  result.manifest.output_image = image.string();
  write_manifest(dir / "manifest.txt", result.manifest);
  write_timing(dir / "timing.txt", result.manifest);
}

int report(const ConfigError& e) {
  std::cerr << "error: " << flag_for(e.field()) << ": " << e.detail() << "\n";
  return 2;
}

template <typename Body>
int guarded(Body&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    return report(e);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int cmd_run(const RunFlags& flags) {
  return guarded([&] {
    const RunRequest request = resolve_request(flags);
    const Inputs inputs = load_inputs(request);
    const auto backend = make_backend(request.config);
    InpaintResult result = run_inpaint(*backend, inputs.image, inputs.mask, request.prompt, request.config);
    save_run(request.output, result, request);
    std::cout << "wrote " << (fs::path(request.output) / "output.png").string() << " ("
              << result.manifest.schedule.structure_steps() << " structure + "
              << result.manifest.schedule.style_steps() << " style steps)\n";
    return 0;
  });
}

int cmd_ablate(const RunFlags& flags) {
  return guarded([&] {
    const RunRequest request = resolve_request(flags);
    const Inputs inputs = load_inputs(request);
    const auto backend = make_backend(request.config);
    AblationResult result = run_ablation(*backend, inputs.image, inputs.mask, request.prompt, request.config);
    const auto variants = ablation_variants(request.config);
    for (std::size_t i = 0; i < variants.size(); ++i) {
      RunRequest variant = request;
      variant.config = result.runs[i].manifest.request.config;
      variant.output = (fs::path(request.output) / variants[i].name).string();
      save_run(variant.output, result.runs[i], variant);
    }
    const fs::path table = fs::path(request.output) / "ablation.tsv";
    std::ofstream out(table, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + table.string());
    out << format_ablation_table(result.rows);
    std::cout << format_ablation_table(result.rows);
    return 0;
  });
}

struct AnalyzeFlags {
  std::string dump;
  std::string out;
  std::optional<int> layer;
  std::optional<int> step;
  int scale = 4;
};

int cmd_analyze(const AnalyzeFlags& flags) {
  return guarded([&] {
    if (flags.scale < 1) throw ConfigError("scale", "must be >= 1");
    const fs::path out_dir = flags.out.empty() ? fs::path(flags.dump) / "pca" : fs::path(flags.out);
    const std::vector<DumpRecord> records = read_dump(flags.dump);
    fs::create_directories(out_dir);
    std::ofstream report(out_dir / "pca_report.txt", std::ios::trunc);
    if (!report) throw std::runtime_error("cannot write " + (out_dir / "pca_report.txt").string());
    report << "# file layer step kind resolution variance_1 variance_2 variance_3 degenerate\n";
    int written = 0;
    for (const auto& r : records) {
      if (r.kind == MapKind::cross) continue;
      if (flags.layer && r.layer_index != *flags.layer) continue;
      if (flags.step && r.timestep != *flags.step) continue;
      const PcaImage pca = pca_rgb(r.matrix(), r.resolution);
      std::string name = dump_filename(r);
      name = name.substr(0, name.size() - 5) + "_pca.png";
      write_png(out_dir / name, pca_to_image(pca, flags.scale));
      report << name << ' ' << r.layer_index << ' ' << r.timestep << ' ' << to_string(r.kind) << ' '
             << to_string(r.resolution);
      for (double v : pca.explained_variance) report << ' ' << detail::format_double(v);
      std::string flags_text;
      for (int c = 0; c < 3; ++c)
        if (pca.degenerate[static_cast<std::size_t>(c)]) flags_text += (flags_text.empty() ? "" : ",") + std::to_string(c + 1);
      report << ' ' << (flags_text.empty() ? "none" : flags_text) << '\n';
      ++written;
    }
    std::cout << "wrote " << written << " PCA image(s) to " << out_dir.string() << "\n";
    return 0;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"harmonpaint: training-free attention-level inpainting"};
  app.require_subcommand(1);

  RunFlags run_flags, ablate_flags;
  auto* run = app.add_subcommand("run", "inpaint one image");
  add_run_flags(*run, run_flags);
  auto* ablate = app.add_subcommand("ablate", "baseline, +sams, +sams+steer and full runs on one seed");
  add_run_flags(*ablate, ablate_flags);

  AnalyzeFlags analyze_flags;
  auto* analyze = app.add_subcommand("analyze", "PCA images of dumped self-attention maps");
  analyze->add_option("--dump", analyze_flags.dump, "dump directory from a previous run")->required();
  analyze->add_option("--out", analyze_flags.out, "output directory (default DUMP/pca)");
  analyze->add_option("--layer", analyze_flags.layer, "only this layer");
  analyze->add_option("--step", analyze_flags.step, "only this sampler step");
  analyze->add_option("--scale", analyze_flags.scale, "pixel upscaling of the PCA images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*run) return cmd_run(run_flags);
  if (*ablate) return cmd_ablate(ablate_flags);
  return cmd_analyze(analyze_flags);
}
