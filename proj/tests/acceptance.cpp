// Acceptance checks, one per criterion. Prints one PASS/FAIL line per
// criterion run; exit status is nonzero if any selected criterion fails.
//
//   harmonpaint_acceptance [--criterion N]

#include "oracles.hpp"
#include "test_support.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

using namespace harmonpaint;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  std::vector<std::string> info;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Resolution random_resolution(Rng& rng, int max_patches) {
  for (;;) {
    const int h = 1 + static_cast<int>(rng.uniform() * 32);
    const int w = 1 + static_cast<int>(rng.uniform() * 32);
    if (h * w <= max_patches) return {h, w};
  }
}

int random_int(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.uniform() * (hi - lo + 1)); }

/// Mask with at least one masked and one unmasked patch (for HW >= 2).
BinaryMask mixed_mask(Resolution r, Rng& rng) {
  for (;;) {
    const BinaryMask m = support::random_mask(r, rng, rng.uniform(0.15, 0.85));
    const int masked = m.masked_count();
    if (r.patches() < 2 || (masked > 0 && masked < r.patches())) return m;
  }
}

std::vector<int> to_ints(const FlatMask& f) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < f.size(); ++i) out.push_back(static_cast<int>(f.values[i]));
  return out;
}

struct Inputs {
  RgbImage image = support::gradient_image(32, 32);
  BinaryMask mask = support::rect_mask(32, 32, 8, 6, 24, 22);
  std::string prompt = "a red rabbit";
};

Outcome soft_mask_exactness() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1001);
  double worst = 0.0;
  bool identity = true;
  for (int c = 0; c < 1000; ++c) {
    const Resolution r = random_resolution(rng, 1024);
    const FlatMask mf = flatten_mask(support::random_mask(r, rng, rng.uniform()));
    const double tau = c % 10 == 0 ? 0.0 : rng.uniform(0.0, 0.999);
    const SoftMaskVector s = soften_mask(mf, tau);
    const long double hw = r.patches();
    for (Eigen::Index i = 0; i < mf.size(); ++i) {
      const long double expected = (1.0L - tau) * mf.values[i] + tau / hw;
      worst = std::max(worst, static_cast<double>(std::abs(expected - static_cast<long double>(s.values[i]))));
    }
    identity = identity && soften_mask(mf, 0.0).values == mf.values;
  }
  const double elapsed = seconds_since(t0);
  o.check(worst <= 1e-12, "max error " + fmt(worst) + " > 1e-12");
  o.check(identity, "tau = 0 is not the identity");
  o.check(elapsed < 1.0, "runtime " + fmt(elapsed) + " s >= 1 s");
  if (o.pass) o.detail = "1000 cases, max error " + fmt(worst) + ", tau=0 exact, " + fmt(elapsed) + " s";
  return o;
}

Outcome sams_block_independence() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  ToyArchitecture arch;  // default 32x32 latent
  arch.parameter_seed = 0;
  const ToyDenoiser net(arch);
  const std::vector<int> layers = RunConfig{}.sams_layers.resolve(static_cast<int>(net.blocks().size()));
  Rng rng(2002);
  double worst = 0.0, worst_renorm = 0.0;
  for (int c = 0; c < 50; ++c) {
    const int layer = layers[static_cast<std::size_t>(c) % layers.size()];
    const Resolution r = net.blocks()[static_cast<std::size_t>(layer - 1)].resolution;
    const FlatMask mf = flatten_mask(mixed_mask(r, rng));
    const SoftMaskVector soft = soften_mask(mf, 0.0);
    const Matrix h = rng.normal_matrix(r.patches(), arch.model_dim);
    Matrix h2 = h;
    for (int i = 0; i < r.patches(); ++i)
      if (mf.values[i] == 0.0) h2.row(i) = rng.normal_matrix(1, arch.model_dim, 3.0).row(0);
    for (bool renorm : {false, true}) {
      const SamsHook hook(soft, SamsOptions{renorm});
      const Matrix a = net.self_attention_output(layer, h, &hook);
      const Matrix b = net.self_attention_output(layer, h2, &hook);
      double d = 0.0;
      for (int i = 0; i < r.patches(); ++i)
        if (mf.values[i] != 0.0) d = std::max(d, (a.row(i) - b.row(i)).cwiseAbs().maxCoeff());
      (renorm ? worst_renorm : worst) = std::max(renorm ? worst_renorm : worst, d);
    }
  }
  const double elapsed = seconds_since(t0);
  o.info.push_back("default (no renormalization): max masked-row change " + fmt(worst));
  o.info.push_back("with sams_renormalize: max masked-row change " + fmt(worst_renorm));
  o.check(worst <= 1e-6, "50 cases, max masked-row change " + fmt(worst) + " > 1e-6 (unmasked keys still enter "
                         "the softmax denominator of masked rows)");
  o.check(elapsed < 30.0, "runtime " + fmt(elapsed) + " s >= 30 s");
  if (o.pass) o.detail = "50 cases, max masked-row change " + fmt(worst) + ", " + fmt(elapsed) + " s";
  return o;
}

Outcome sams_row_mass() {
  Outcome o;
  Rng rng(3003);
  double worst = 0.0;
  for (int c = 0; c < 200; ++c) {
    const Resolution r = random_resolution(rng, 256);
    const int n = r.patches();
    const Matrix a = softmax_rows(rng.normal_matrix(n, n, rng.uniform(0.1, 4.0)));
    const FlatMask mf = flatten_mask(support::random_mask(r, rng, rng.uniform()));
    const Matrix post = apply_sams_weights(a, soften_mask(mf, 0.0));
    for (int i = 0; i < n; ++i) {
      if (mf.values[i] == 0.0) continue;
      long double within = 0.0L, row = 0.0L;
      for (int j = 0; j < n; ++j) {
        within += mf.values[j] * a(i, j);
        row += post(i, j);
      }
      worst = std::max(worst, static_cast<double>(std::abs(within - row)));
    }
  }
  o.check(worst <= 1e-6, "max deviation " + fmt(worst) + " > 1e-6");
  if (o.pass) o.detail = "200 maps up to HW=256, max deviation " + fmt(worst);
  return o;
}

Outcome makvs_duplication() {
  Outcome o;
  Rng rng(4004);
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    const int n = random_int(rng, 1, 256), d = random_int(rng, 1, 32);
    const Matrix q = rng.normal_matrix(n, d), k = rng.normal_matrix(n, d), v = rng.normal_matrix(n, d);
    const FlatMask empty{{1, n}, Vector::Zero(n)};
    const Matrix out = makvs_attention(q, KVPair{k, v, empty.source, 0}, empty, StyleStrength(1.0));
    worst = std::max(worst, support::max_abs(out - oracle::plain_attention(q, k, v)));
  }
  o.check(worst <= 1e-6, "max deviation " + fmt(worst) + " > 1e-6");
  if (o.pass) o.detail = "100 instances, max deviation " + fmt(worst);
  return o;
}

Outcome makvs_oracle() {
  Outcome o;
  Rng rng(5005);
  double worst = 0.0, worst_naive = 0.0;
  for (int c = 0; c < 100; ++c) {
    const int n = random_int(rng, 2, 128), d = random_int(rng, 1, 32);
    const Matrix q = rng.normal_matrix(n, d), k = rng.normal_matrix(n, d), v = rng.normal_matrix(n, d);
    FlatMask mf{{1, n}, Vector::Zero(n)};
    double lambda = rng.uniform(0.0, 3.0);
    if (c < 10) {
      lambda = 0.0;
      mf = flatten_mask(mixed_mask({1, n}, rng));
    } else if (c < 20) {
      mf.values.setOnes();
      mf.values[random_int(rng, 0, n - 1)] = 0.0;  // all but one masked
    } else {
      mf = flatten_mask(mixed_mask({1, n}, rng));
    }
    const KVPair kv{k, v, mf.source, 0};
    worst = std::max(worst, support::max_abs(makvs_attention(q, kv, mf, StyleStrength(lambda)) -
                                             oracle::makvs(q, k, v, to_ints(mf), lambda)));
    worst_naive = std::max(worst_naive, support::max_abs(makvs_attention_naive(q, kv, mf) -
                                                         oracle::makvs_naive(q, k, v, to_ints(mf))));
  }
  bool raised = false, raised_naive = false;
  const Matrix x = rng.normal_matrix(4, 3);
  const FlatMask all{{2, 2}, Vector::Ones(4)};
  try {
    (void)makvs_attention(x, KVPair{x, x, all.source, 0}, all, StyleStrength(1.4));
  } catch (const UnrepresentableStyle&) {
    raised = true;
  }
  try {
    (void)makvs_attention_naive(x, KVPair{x, x, all.source, 0}, all);
  } catch (const UnrepresentableStyle&) {
    raised_naive = true;
  }
  o.check(worst <= 1e-6, "makvs_attention max deviation " + fmt(worst));
  o.check(worst_naive <= 1e-6, "makvs_attention_naive max deviation " + fmt(worst_naive));
  o.check(raised && raised_naive, "all-masked input did not raise UnrepresentableStyle");
  if (o.pass)
    o.detail = "100 instances, max deviation " + fmt(worst) + " (naive " + fmt(worst_naive) +
               "), all-masked raises UnrepresentableStyle";
  return o;
}

Outcome steer_correctness() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const double eps = 1e-6;
  const double concentrated = steer_token_loss((Vector(3) << 0.0, 1.0, 0.0).finished(), eps);
  const double split = steer_token_loss((Vector(2) << 0.5, 0.5).finished(), eps);
  const double leak = steer_token_loss(Vector::Zero(4), eps);
  o.check(std::abs(concentrated) <= 1e-9, "concentration loss " + fmt(concentrated));
  o.check(std::abs(split - 0.287682072451781) <= 1e-9, "two-patch loss " + fmt(split));
  o.check(std::abs(leak - (-std::log(eps))) <= 1e-9, "leakage loss " + fmt(leak));
  o.check(std::abs(split - oracle::steer_loss({0.5, 0.5}, eps)) <= 1e-9, "oracle disagreement");

  ToyArchitecture arch;
  arch.latent = {8, 8};
  arch.parameter_seed = 77;
  const ToyBackend backend(arch);
  const Latent source = backend.encode_image(support::gradient_image(32, 32));
  const TextEmbedding text = backend.encode_text("a red rabbit", 5);
  const BinaryMask pixel = support::rect_mask(32, 32, 8, 8, 24, 24);
  std::map<Resolution, FlatMask> masks;
  for (const auto& b : backend.cross_attention_blocks())
    if (!masks.contains(b.resolution)) masks.emplace(b.resolution, flatten_mask(resize_mask(pixel, b.resolution)));
  const Conditioning cond{Latent(arch.latent, Matrix(masks.at(arch.latent).values)), source};
  const HookSet hooks;
  const SteerObjective objective(masks, {8, 4}, text.prompt_tokens, eps);

  double worst = 0.0;
  for (std::uint64_t seed : {9u, 10u}) {
    const Latent z = noise_latent(source, 700, seed);
    const DenoiseRequest req{&z, 700, 0, &text, &cond, &hooks, {}};
    const ObjectiveGradient g = backend.objective_gradient(req, objective);
    Matrix fd(g.gradient.data.rows(), g.gradient.data.cols());
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < fd.size(); ++i) {
      Latent p = z, m = z;
      p.data.data()[i] += h;
      m.data.data()[i] -= h;
      DenoiseRequest rp = req, rm = req;
      rp.latent = &p;
      rm.latent = &m;
      fd.data()[i] = (backend.evaluate_objective(rp, objective) - backend.evaluate_objective(rm, objective)) / (2 * h);
    }
    worst = std::max(worst, (g.gradient.data - fd).norm() / fd.norm());
  }
  const double elapsed = seconds_since(t0);
  o.check(worst <= 1e-4, "gradient relative error " + fmt(worst) + " > 1e-4");
  o.check(elapsed < 120.0, "runtime " + fmt(elapsed) + " s >= 120 s");
  if (o.pass)
    o.detail = "hand cases exact to 1e-9, 8x8 gradient relative error " + fmt(worst) + ", " + fmt(elapsed) + " s";
  return o;
}

Outcome schedule_split() {
  Outcome o;
  const RunConfig defaults;
  const std::vector<int> sams = defaults.sams_layers.resolve(16), makvs = defaults.makvs_layers.resolve(16);
  const StageSchedule s = build_schedule(0.6, 50, sams, makvs);
  o.check(s.structure_steps() == 20 && s.style_steps() == 30,
          "split " + std::to_string(s.structure_steps()) + "/" + std::to_string(s.style_steps()));

  // Hook logs of an actual run.
  RunConfig cfg = support::small_config(16, 50);
  const Inputs in;
  const InpaintResult run = run_inpaint(*make_backend(cfg), in.image, in.mask, in.prompt, cfg);
  int co_active = 0;
  for (const auto& step : run.manifest.steps) {
    bool has_sams = false, has_makvs = false;
    for (const auto& h : step.hooks) {
      has_sams = has_sams || h.rfind("sams@", 0) == 0;
      has_makvs = has_makvs || h.rfind("makvs@", 0) == 0;
    }
    co_active += has_sams && has_makvs;
  }
  o.check(co_active == 0, std::to_string(co_active) + " steps with both mechanisms");
  o.check(run.manifest.schedule.structure_steps() == 20, "run manifest split differs");

  // Closed interval [eta T, T] decided in integers: with eta = a/1000 and
  // T = 1000, t_k = 1000 (N - k) / N - 1 >= a  <=>  1000 (N - k) - N >= a N.
  Rng rng(7007);
  int mismatches = 0, boundary_hits = 0;
  for (int c = 0; c < 200; ++c) {
    const int a = random_int(rng, 1, 999);
    const int n = random_int(rng, 2, 200);
    const StageSchedule sc = build_schedule(a / 1000.0, n, sams, makvs);
    for (int k = 0; k < n; ++k) {
      const long long lhs = 1000LL * (n - k) - n, rhs = static_cast<long long>(a) * n;
      boundary_hits += lhs == rhs;
      const Stage expected = lhs >= rhs ? Stage::structure : Stage::style;
      mismatches += sc.entries()[static_cast<std::size_t>(k)].stage != expected;
    }
  }
  o.check(mismatches == 0, std::to_string(mismatches) + " step assignments disagree with the integer rule");
  if (o.pass)
    o.detail = "20/30 split, no co-active steps, 200 (eta, steps) pairs agree (" + std::to_string(boundary_hits) +
               " exact-boundary steps)";
  return o;
}

Outcome determinism_and_background() {
  Outcome o;
  const Inputs in;
  const RunConfig cfg = support::small_config(16, 12);
  const auto backend = make_backend(cfg);
  const InpaintResult a = run_inpaint(*backend, in.image, in.mask, in.prompt, cfg);
  const InpaintResult b = run_inpaint(*make_backend(cfg), in.image, in.mask, in.prompt, cfg);
  o.check(a.final_latent == b.final_latent, "final latents differ");
  o.check(a.image.pixels == b.image.pixels, "images differ");
  o.check(format_manifest(a.manifest) == format_manifest(b.manifest), "manifests differ");
  const auto mask = a.latent_mask.values();
  int moved = 0, unmasked = 0;
  for (Eigen::Index i = 0; i < a.final_latent.data.rows(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) continue;
    ++unmasked;
    moved += !(a.final_latent.data.row(i) == a.source_latent.data.row(i));
  }
  o.check(unmasked > 0 && moved == 0, std::to_string(moved) + " unmasked latent rows differ from the source");
  if (o.pass)
    o.detail = "two runs bit-identical, " + std::to_string(unmasked) + " unmasked latent rows equal the source exactly";
  return o;
}

Outcome pca_diagnostics() {
  Outcome o;
  Rng rng(9009);
  std::vector<std::pair<Matrix, Resolution>> maps;
  for (int c = 0; c < 4; ++c) {
    const Resolution r = c == 0 ? Resolution{16, 16} : random_resolution(rng, 256);
    if (r.patches() < 3) continue;
    maps.emplace_back(softmax_rows(rng.normal_matrix(r.patches(), r.patches(), rng.uniform(0.5, 3.0))), r);
  }
  // Maps captured from a toy run, via the dump format.
  const auto dir = support::temp_dir("acceptance_dump");
  RunConfig cfg = support::small_config(16, 6);
  cfg.dump_dir = dir.string();
  const Inputs in;
  const InpaintResult run = run_inpaint(*make_backend(cfg), in.image, in.mask, in.prompt, cfg);
  const std::vector<DumpRecord> records = read_dump(dir);
  int self_maps = 0;
  for (const auto& r : records)
    if (r.kind != MapKind::cross && self_maps < 4 && r.resolution.patches() >= 16) {
      maps.emplace_back(r.matrix(), r.resolution);
      ++self_maps;
    }

  double ortho = 0.0, eig = 0.0, vec = 0.0;
  bool ordered = true;
  for (const auto& [m, r] : maps) {
    const PcaImage p = pca_rgb(m, r);
    ortho = std::max(ortho, support::max_abs(p.components * p.components.transpose() - Matrix::Identity(3, 3)));
    ordered = ordered && p.explained_variance[0] >= p.explained_variance[1] &&
              p.explained_variance[1] >= p.explained_variance[2];
    const auto [values, vectors] = oracle::jacobi_eigen(oracle::row_covariance(m));
    for (int c = 0; c < 3; ++c) {
      eig = std::max(eig, std::abs(p.explained_variance[static_cast<std::size_t>(c)] - values[static_cast<std::size_t>(c)]));
      const Vector a = p.components.row(c).transpose(), b = vectors.col(c);
      vec = std::max(vec, std::min((a - b).cwiseAbs().maxCoeff(), (a + b).cwiseAbs().maxCoeff()));
    }
  }
  o.check(ortho <= 1e-6, "orthonormality error " + fmt(ortho));
  o.check(ordered, "variances not nonincreasing");
  o.check(eig <= 1e-5 && vec <= 1e-5, "eigensolver disagreement: values " + fmt(eig) + ", vectors " + fmt(vec));

  // Round trip: rewrite the records and compare bytes and values.
  const auto copy = support::temp_dir("acceptance_dump_copy");
  write_dump(copy, records);
  const std::vector<DumpRecord> again = read_dump(copy);
  bool exact = again == records && !records.empty();
  for (std::size_t i = 0; exact && i < records.size(); ++i) {
    std::ifstream f1(dir / run.manifest.dump_files[i], std::ios::binary), f2(copy / dump_filename(records[i]), std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    exact = b1 == b2;
  }
  o.check(exact, "dump round trip is not bit-exact");
  if (o.pass)
    o.detail = std::to_string(maps.size()) + " maps: orthonormality " + fmt(ortho) + ", eigenvalues " + fmt(eig) +
               ", eigenvectors " + fmt(vec) + "; " + std::to_string(records.size()) + " dump records round-trip";
  return o;
}

Outcome ablation_harness() {
  Outcome o;
  const Inputs in;
  int updates = 0, increases = 0;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    RunConfig cfg = support::small_config(16, 10);
    cfg.seed = seed;
    const AblationResult a = run_ablation(*make_backend(cfg), in.image, in.mask, in.prompt, cfg);
    const std::vector<std::string> names{"baseline", "sams", "sams+steer", "full"};
    bool shape = a.rows.size() == 4 && a.runs.size() == 4;
    for (std::size_t i = 0; shape && i < 4; ++i)
      shape = a.rows[i].name == names[i] && a.rows[i].seed == seed && a.runs[i].manifest.request.config.seed == seed;
    o.check(shape, "variant set or seeds wrong (seed " + std::to_string(seed) + ")");

    std::istringstream table(format_ablation_table(a.rows));
    std::string line;
    int lines = 0;
    bool columns = true;
    while (std::getline(table, line)) {
      ++lines;
      columns = columns && std::count(line.begin(), line.end(), '\t') == 8;
    }
    o.check(lines == 5 && columns, "delta table malformed");

    for (const auto& s : a.runs.front().manifest.steps)
      o.check(s.hooks.empty(), "baseline step " + std::to_string(s.step_index) + " has hooks");
    for (const auto& s : a.runs.back().manifest.steps)
      for (std::size_t i = 0; i < s.steer_loss_before.size(); ++i) {
        ++updates;
        increases += s.steer_loss_after[i] > s.steer_loss_before[i];
      }
  }
  o.check(updates > 0, "full run recorded no steer updates");
  o.check(increases == 0, std::to_string(increases) + " of " + std::to_string(updates) + " steer updates increased the loss");
  if (o.pass)
    o.detail = "3 seeds x 4 variants, empty baseline hook log, " + std::to_string(updates) +
               " steer updates all nonincreasing";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"harmonpaint acceptance checks"};
  int only = 0;
  app.add_option("--criterion", only, "run a single criterion (1-10)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::function<Outcome()>> criteria = {
      soft_mask_exactness, sams_block_independence, sams_row_mass,       makvs_duplication, makvs_oracle,
      steer_correctness,   schedule_split,          determinism_and_background, pca_diagnostics, ablation_harness};
  bool all = true;
  for (int n = 1; n <= 10; ++n) {
    if (only != 0 && n != only) continue;
    Outcome o;
    try {
      o = criteria[static_cast<std::size_t>(n - 1)]();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    for (const auto& line : o.info) std::cout << "INFO criterion " << n << ": " << line << "\n";
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << ": " << o.detail << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
