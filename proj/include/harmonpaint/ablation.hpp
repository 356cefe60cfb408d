#pragma once

// Mechanism ablation: four runs sharing one seed, compared against the
// mechanism-free baseline inside the masked region.

#include "harmonpaint/pipeline.hpp"

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace harmonpaint {

struct AblationVariant {
  std::string name;
  RunConfig config;
};

/// baseline, +sams, +sams+steer, full (in that order).
inline std::vector<AblationVariant> ablation_variants(const RunConfig& base) {
  RunConfig baseline = base;
  baseline.sams_layers = LayerSelection::none();
  baseline.makvs_layers = LayerSelection::none();
  baseline.steer_enabled = false;

  RunConfig sams = baseline;
  sams.sams_layers = base.sams_layers;

  RunConfig sams_steer = sams;
  sams_steer.steer_enabled = true;

  RunConfig full = base;
  full.steer_enabled = true;
  return {{"baseline", baseline}, {"sams", sams}, {"sams+steer", sams_steer}, {"full", full}};
}

struct AblationRow {
  std::string name;
  std::uint64_t seed = 0;
  int structure_steps = 0;
  int style_steps = 0;
  int steer_updates = 0;
  double steer_loss_first = 0.0;  // first recorded loss before an update, 0 without steering
  double steer_loss_last = 0.0;   // last recorded loss after an update
  double masked_linf = 0.0;       // final latent vs baseline, masked rows only
  double masked_l2 = 0.0;
};

struct AblationResult {
  std::vector<InpaintResult> runs;
  std::vector<AblationRow> rows;
};

inline AblationRow summarize_variant(const std::string& name, const InpaintResult& run, const InpaintResult& baseline) {
  const RunManifest& m = run.manifest;
  AblationRow row{name, m.request.config.seed, m.schedule.structure_steps(), m.schedule.style_steps(), 0, 0.0, 0.0,
                  0.0, 0.0};
  bool first = true;
  for (const auto& s : m.steps) {
    if (!s.steer_ran || s.steer_loss_before.empty()) continue;
    ++row.steer_updates;
    if (first) row.steer_loss_first = s.steer_loss_before.front();
    first = false;
    row.steer_loss_last = s.steer_loss_after.back();
  }
  const Matrix delta = run.final_latent.data - baseline.final_latent.data;
  const auto mask = run.latent_mask.values();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < delta.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    row.masked_linf = std::max(row.masked_linf, delta.row(i).cwiseAbs().maxCoeff());
    sum += delta.row(i).squaredNorm();
  }
  row.masked_l2 = std::sqrt(sum);
  return row;
}

inline AblationResult run_ablation(const BackendAdapter& backend, const RgbImage& image, const BinaryMask& mask,
                                   const std::string& prompt, const RunConfig& base) {
  AblationResult out;
  const auto variants = ablation_variants(base);
  for (const auto& v : variants) {
    RunConfig cfg = v.config;
    if (!cfg.dump_dir.empty()) cfg.dump_dir = (std::filesystem::path(cfg.dump_dir) / v.name).string();
    out.runs.push_back(run_inpaint(backend, image, mask, prompt, cfg));
  }
  for (std::size_t i = 0; i < variants.size(); ++i)
    out.rows.push_back(summarize_variant(variants[i].name, out.runs[i], out.runs.front()));
  return out;
}

inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "variant\tseed\tstructure_steps\tstyle_steps\tsteer_updates\tsteer_loss_first\tsteer_loss_last"
         "\tmasked_linf\tmasked_l2\n";
  for (const auto& r : rows)
    out << r.name << '\t' << r.seed << '\t' << r.structure_steps << '\t' << r.style_steps << '\t' << r.steer_updates
        << '\t' << detail::format_double(r.steer_loss_first) << '\t' << detail::format_double(r.steer_loss_last)
        << '\t' << detail::format_double(r.masked_linf) << '\t' << detail::format_double(r.masked_l2) << '\n';
  return out.str();
}

}  // namespace harmonpaint
