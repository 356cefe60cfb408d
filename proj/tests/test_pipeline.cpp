#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace harmonpaint;

namespace {

struct Inputs {
  RgbImage image = support::gradient_image(32, 32);
  BinaryMask mask = support::rect_mask(32, 32, 8, 6, 24, 22);
  std::string prompt = "a red rabbit";
};

RunConfig plain(RunConfig cfg) {
  cfg.sams_layers = LayerSelection::none();
  cfg.makvs_layers = LayerSelection::none();
  cfg.steer_enabled = false;
  return cfg;
}

/// Hook-free DDIM loop written against the backend interface only.
Latent vanilla_sampler(const BackendAdapter& b, const Inputs& in, const RunConfig& cfg) {
  const Resolution res = b.latent_resolution();
  const Latent source = b.encode_image(in.image);
  const BinaryMask small = resize_mask(in.mask, res);
  Conditioning cond{Latent(res, 1), source};
  for (int i = 0; i < res.patches(); ++i) {
    const bool masked = small.values()[static_cast<std::size_t>(i)] != 0;
    cond.mask.data(i, 0) = masked ? 1.0 : 0.0;
    if (masked) cond.masked_image.data.row(i).setZero();
  }
  const TextEmbedding text = b.encode_text(in.prompt, derive_seed(cfg.seed, "text"));
  Rng noise_rng(derive_seed(cfg.seed, "noise")), bg_rng(derive_seed(cfg.seed, "background"));
  Matrix z = noise_rng.normal_matrix(res.patches(), b.latent_channels());
  const Matrix bg = bg_rng.normal_matrix(res.patches(), b.latent_channels());
  const int n = cfg.steps;
  const double T = b.horizon();
  auto time = [&](int k) { return T * (n - k) / n - 1.0; };
  auto blend = [&](double a) {
    for (int i = 0; i < res.patches(); ++i)
      if (!small.values()[static_cast<std::size_t>(i)])
        z.row(i) = std::sqrt(a) * source.data.row(i) + std::sqrt(1.0 - a) * bg.row(i);
  };
  blend(b.alpha_bar(time(0)));
  const HookSet none;
  for (int k = 0; k < n; ++k) {
    const Latent zl(res, z);
    const Matrix eps = b.denoise({&zl, time(k), k, &text, &cond, &none, {}}).noise_prediction.data;
    const double a = b.alpha_bar(time(k));
    const double a_next = k + 1 < n ? b.alpha_bar(time(k + 1)) : 1.0;
    const Matrix x0 = (z - std::sqrt(1.0 - a) * eps) / std::sqrt(a);
    z = std::sqrt(a_next) * x0 + std::sqrt(1.0 - a_next) * eps;
    blend(a_next);
  }
  return Latent(res, z);
}

InpaintResult run(const RunConfig& cfg, const Inputs& in = {}) {
  return run_inpaint(*make_backend(cfg), in.image, in.mask, in.prompt, cfg);
}

}  // namespace

TEST(Pipeline, SameSeedIsBitIdentical) {
  const RunConfig cfg = support::small_config();
  const InpaintResult a = run(cfg), b = run(cfg);
  EXPECT_EQ(a.image.pixels, b.image.pixels);
  EXPECT_TRUE(a.final_latent == b.final_latent);
  EXPECT_EQ(format_manifest(a.manifest), format_manifest(b.manifest));
  RunConfig other = cfg;
  other.seed = 12;
  EXPECT_FALSE(run(other).final_latent == a.final_latent);
}

TEST(Pipeline, NoMechanismsMatchesVanillaSampler) {
  const RunConfig cfg = plain(support::small_config(16, 8));
  const Inputs in;
  const InpaintResult r = run(cfg, in);
  const Latent expected = vanilla_sampler(*make_backend(cfg), in, cfg);
  EXPECT_LE(support::max_abs(r.final_latent.data - expected.data), 1e-12);
  for (const auto& s : r.manifest.steps) EXPECT_TRUE(s.hooks.empty());
}

TEST(Pipeline, DefaultScheduleAndExclusiveHooks) {
  const RunConfig cfg = support::small_config(16, 50);
  const InpaintResult r = run(cfg);
  EXPECT_EQ(r.manifest.schedule.structure_steps(), 20);
  EXPECT_EQ(r.manifest.schedule.style_steps(), 30);
  const std::string text = format_manifest(r.manifest);
  EXPECT_NE(text.find("schedule.structure_steps = 20\n"), std::string::npos);
  EXPECT_NE(text.find("schedule.style_steps = 30\n"), std::string::npos);
  for (const auto& s : r.manifest.steps) {
    bool sams = false, makvs = false;
    for (const auto& h : s.hooks) {
      sams = sams || h.rfind("sams@", 0) == 0;
      makvs = makvs || h.rfind("makvs@", 0) == 0;
    }
    EXPECT_FALSE(sams && makvs) << "step " << s.step_index;
    EXPECT_EQ(sams, s.step_index < 20);
    EXPECT_EQ(makvs, s.step_index >= 20);
    EXPECT_EQ(s.steer_ran, s.step_index < 20);
  }
}

TEST(Pipeline, BackgroundIsPreserved) {
  const RunConfig cfg = support::small_config();
  const Inputs in;
  const InpaintResult r = run(cfg, in);
  const auto mask = r.latent_mask.values();
  for (Eigen::Index i = 0; i < r.final_latent.data.rows(); ++i)
    if (!mask[static_cast<std::size_t>(i)]) {
      EXPECT_TRUE(r.final_latent.data.row(i) == r.source_latent.data.row(i));
    }
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      if (!in.mask.at(y, x)) {
        for (int c = 0; c < 3; ++c) EXPECT_EQ(r.image.at(y, x, c), in.image.at(y, x, c));
      }
}

TEST(Pipeline, SamsChangesMaskedRegion) {
  RunConfig sams = plain(support::small_config());
  sams.sams_layers = LayerSelection::indices({2, 3, 4, 5, 6});
  const InpaintResult a = run(sams), b = run(plain(support::small_config()));
  const auto mask = a.latent_mask.values();
  double linf = 0.0;
  for (Eigen::Index i = 0; i < a.final_latent.data.rows(); ++i)
    if (mask[static_cast<std::size_t>(i)])
      linf = std::max(linf, (a.final_latent.data.row(i) - b.final_latent.data.row(i)).cwiseAbs().maxCoeff());
  EXPECT_GT(linf, 1e-6);
}

TEST(Pipeline, FullMaskFailsBeforeSampling) {
  Inputs in;
  in.mask = support::rect_mask(32, 32, 0, 0, 32, 32);
  try {
    (void)run(support::small_config(), in);
    FAIL() << "expected UnrepresentableStyle";
  } catch (const UnrepresentableStyle& e) {
    EXPECT_NE(std::string(e.what()).find("whole image"), std::string::npos);
  }
  // Without a style stage there is nothing to inject.
  RunConfig no_style = support::small_config();
  no_style.makvs_layers = LayerSelection::none();
  EXPECT_NO_THROW((void)run(no_style, in));
}

TEST(Pipeline, MismatchedMaskRejected) {
  Inputs in;
  in.mask = support::rect_mask(16, 32, 0, 0, 4, 4);
  EXPECT_THROW((void)run(support::small_config(), in), InvalidArgument);
}

TEST(Pipeline, ManifestReproducesRun) {
  const auto dir = support::temp_dir("manifest_rerun");
  RunConfig cfg = support::small_config(16, 6);
  cfg.tau = 0.2;
  cfg.sams_layers = LayerSelection::indices({1, 2});
  const InpaintResult a = run(cfg);
  EXPECT_EQ(a.manifest.request.config, cfg);
  write_manifest(dir / "manifest.txt", a.manifest);
  const RunRequest back = read_manifest_request(dir / "manifest.txt");
  EXPECT_EQ(back.config, cfg);
  EXPECT_EQ(back.prompt, "a red rabbit");
  const InpaintResult b = run(back.config);
  EXPECT_EQ(a.image.pixels, b.image.pixels);
  EXPECT_EQ(format_manifest(a.manifest), format_manifest(b.manifest));
  const auto records = read_manifest_records(dir / "manifest.txt");
  EXPECT_EQ(records.at("step.0.hooks"), "sams@1,sams@2,capture-cross");
  EXPECT_EQ(records.at("schedule.total_steps"), "6");
}

TEST(Pipeline, DumpsFollowStride) {
  const auto dir = support::temp_dir("pipeline_dumps");
  RunConfig cfg = support::small_config(16, 6);
  cfg.dump_dir = dir.string();
  cfg.dump_stride = 5;
  const InpaintResult r = run(cfg);
  const auto records = read_dump(dir);
  ASSERT_EQ(records.size(), r.manifest.dump_files.size());
  ASSERT_FALSE(records.empty());
  for (const auto& rec : records) EXPECT_TRUE(rec.timestep == 0 || rec.timestep == 5);
}

TEST(Interceptors, PerStageInstallation) {
  const RunConfig cfg = support::small_config();
  const auto backend = make_backend(cfg);
  const MaskPyramid masks(support::rect_mask(32, 32, 8, 8, 24, 24), detail::block_resolutions(*backend), cfg.tau);
  const StageSchedule s = build_schedule(0.6, 10, {2, 3}, {15, 16});
  const HookSet structure = install_interceptors(*backend, s.entries().front(), masks, cfg);
  EXPECT_EQ(structure.log(), (std::vector<std::string>{"sams@2", "sams@3", "capture-cross"}));
  const HookSet style = install_interceptors(*backend, s.entries().back(), masks, cfg);
  EXPECT_EQ(style.log(), (std::vector<std::string>{"makvs@15", "makvs@16"}));
  const StageSchedule empty = build_schedule(0.6, 10, {}, {}, {false, 1, kDefaultHorizon});
  EXPECT_TRUE(install_interceptors(*backend, empty.entries().front(), masks, cfg).log().empty());
}

TEST(Ablation, FourRunsSharingOneSeed) {
  const Inputs in;
  const RunConfig cfg = support::small_config(16, 10);
  const AblationResult a = run_ablation(*make_backend(cfg), in.image, in.mask, in.prompt, cfg);
  ASSERT_EQ(a.rows.size(), 4u);
  const std::vector<std::string> names{"baseline", "sams", "sams+steer", "full"};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a.rows[i].name, names[i]);
    EXPECT_EQ(a.rows[i].seed, cfg.seed);
  }
  for (const auto& s : a.runs[0].manifest.steps) EXPECT_TRUE(s.hooks.empty());
  EXPECT_EQ(a.rows[0].masked_linf, 0.0);
  EXPECT_EQ(a.rows[1].steer_updates, 0);
  EXPECT_GT(a.rows[2].steer_updates, 0);
  EXPECT_GT(a.rows[3].masked_linf, 0.0);
  const std::string table = format_ablation_table(a.rows);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 5);
}
