#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <fmt/format.h>
#include <json.hpp>

#include "avatarforge/checkpoint.hpp"
#include "avatarforge/checks.hpp"
#include "avatarforge/config.hpp"
#include "avatarforge/error.hpp"
#include "avatarforge/mesh_io.hpp"
#include "avatarforge/mini_rig.hpp"
#include "avatarforge/pipeline.hpp"
#include "avatarforge/synth.hpp"
#include "avatarforge/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace avatarforge;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Bad invocations: missing inputs, invalid flags or configs.
struct UsageError {
  std::string message;
};

void require_file(const fs::path& path, const char* flag) {
  if (!fs::is_regular_file(path)) throw UsageError{fmt::format("{}: no such file '{}'", flag, path.string())};
}

void require_dir(const fs::path& path, const char* flag) {
  if (!fs::is_directory(path)) throw UsageError{fmt::format("{}: no such directory '{}'", flag, path.string())};
}

int thread_cap() {
  const char* env = std::getenv("AVATARFORGE_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024)
    throw UsageError{fmt::format("AVATARFORGE_THREADS must be a positive integer, got '{}'", env)};
  return static_cast<int>(n);
}

Config resolve_config(const std::string& profile, const std::string& config_path) {
  Config base = default_config(profile_from_name(profile));
  if (config_path.empty()) return base;
  require_file(config_path, "--config");
  return load_config(config_path, base);
}

void write_run_json(const fs::path& dir, const std::string& command, const json& args, const Config* config) {
  fs::create_directories(dir);
  json run{{"command", command}, {"args", args}, {"threads", thread_cap()}};
  if (config != nullptr) run["config"] = json::parse(config_to_json(*config));
  std::ofstream f(dir / "run.json");
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", (dir / "run.json").string()));
  f << run.dump(2) << '\n';
}

/// Parent directory of a file path, "." when there is none.
fs::path parent_or_cwd(const fs::path& file) {
  return file.has_parent_path() ? file.parent_path() : fs::path(".");
}

// synth ------------------------------------------------------------------------------------------

struct SynthArgs {
  std::uint64_t seed = 0;
  std::string profile = "desk";
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  const Config config = default_config(profile_from_name(a.profile));
  SynthOptions options;
  options.resolution = config.dims.image_resolution;
  options.texture_resolution = config.dims.texture_resolution;
  const RiggedMesh rig = make_mini_rig(profile_from_name(a.profile));
  const SyntheticSubject subject = make_synthetic_subject(a.seed, rig, options);
  save_subject(subject, a.out);
  write_run_json(a.out, "synth", {{"seed", a.seed}, {"profile", a.profile}, {"out", a.out}}, &config);
  std::printf("synth: seed=%llu profile=%s vertices=%ld faces=%ld resolution=%d out=%s\n",
              static_cast<unsigned long long>(a.seed), a.profile.c_str(),
              static_cast<long>(subject.gt_mesh.num_vertices()), static_cast<long>(subject.gt_mesh.num_faces()),
              options.resolution, a.out.c_str());
  return 0;
}

// train ------------------------------------------------------------------------------------------

struct TrainArgs {
  std::string subject;
  std::string config;
  std::string profile = "desk";
  std::optional<long> steps;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  require_dir(a.subject, "--subject");
  Config config = resolve_config(a.profile, a.config);
  if (a.steps) {
    if (*a.steps < 0) throw UsageError{"--steps must be >= 0"};
    config.train.steps = *a.steps;
  }
  validate(config);
  const SyntheticSubject subject = load_subject(a.subject);
  if (subject.input_image.height != config.dims.image_resolution)
    throw UsageError{fmt::format("subject resolution {} does not match config image_resolution {}",
                                 subject.input_image.height, config.dims.image_resolution)};

  const fs::path out_dir = parent_or_cwd(a.out);
  write_run_json(out_dir, "train",
                 {{"subject", a.subject}, {"config", a.config}, {"profile", a.profile}, {"steps", config.train.steps},
                  {"out", a.out}},
                 &config);

  auto blocks = Blocks::create(config);
  TrainOptions options;
  options.steps = config.train.steps;
  options.snapshot_every = config.train.snapshot_every;
  options.snapshot_dir = out_dir / "snapshots";
  const TrainResult result = train_overfit(subject, *blocks, config, options);
  ad::save_checkpoint(blocks->params, a.out);
  write_metrics_csv(result.metrics, out_dir / "metrics.csv");

  const MetricsRow& first = result.metrics.front();
  const MetricsRow& last = result.metrics.back();
  std::printf("train: steps=%ld L_img %.6f -> %.6f L_total %.6f -> %.6f psnr %.2f -> %.2f out=%s\n",
              config.train.steps, first.l_img, last.l_img, first.l_total, last.l_total, result.initial_psnr,
              result.final_psnr, a.out.c_str());
  return 0;
}

// infer ------------------------------------------------------------------------------------------

struct InferArgs {
  std::string image;
  std::string params;
  std::string checkpoint;
  std::string config;
  std::string profile = "desk";
  std::string out;
};

int cmd_infer(const InferArgs& a) {
  require_file(a.image, "--image");
  require_file(a.params, "--params");
  require_file(a.checkpoint, "--checkpoint");
  const Config config = resolve_config(a.profile, a.config);
  const Image image = load_image(a.image);
  if (image.height != config.dims.image_resolution || image.width != config.dims.image_resolution ||
      image.channels != 3)
    throw UsageError{fmt::format("--image must be {0}x{0}x3, got {1}x{2}x{3}", config.dims.image_resolution,
                                 image.height, image.width, image.channels)};
  const PoseParams params = load_params(a.params);
  const RiggedMesh rig = make_mini_rig(profile_from_name(config.profile));

  auto blocks = Blocks::create(config);
  ad::load_checkpoint(blocks->params, a.checkpoint);

  const fs::path out(a.out);
  write_run_json(out,
                 "infer",
                 {{"image", a.image}, {"params", a.params}, {"checkpoint", a.checkpoint}, {"config", a.config},
                  {"profile", a.profile}, {"out", a.out}},
                 &config);

  ad::NoGradGuard no_grad;
  const RunOutput result = run(image, params, rig, *blocks, config);
  const IterationRecord& final_record = result.records.back();
  save_mesh(final_record.mesh, out / "mesh.obj");
  save_image(final_record.texture, out / "texture.png");
  save_image(final_record.texture, out / "texture.pfm");
  save_params(params, out / "params.json");
  for (std::size_t t = 0; t < result.renders.size(); ++t) {
    const Image render = tensor_to_image(result.renders[t].image);
    save_image(render, out / fmt::format("render_t{}.png", t));
    save_image(render, out / fmt::format("render_t{}.pfm", t));
  }
  std::printf("infer: iterations=%d vertices=%ld faces=%ld out=%s\n", config.iterations,
              static_cast<long>(final_record.mesh.num_vertices()), static_cast<long>(final_record.mesh.num_faces()),
              a.out.c_str());
  return 0;
}

// render -----------------------------------------------------------------------------------------

struct RenderArgs {
  std::string mesh;
  std::string texture;
  std::string params;
  int frames = 8;
  int resolution = 128;
  bool dump_gbuffer = false;
  std::string out;
};

/// Frame f of k blends the given parameters toward a fixed expression/pose target with weight f / (k - 1);
/// frame 0 reproduces the parameters exactly.
PoseParams frame_params(const PoseParams& base, int frame, int frames) {
  static const double kExprTarget[] = {0.8, -0.5, 0.6, -0.4};
  static const Eigen::Vector3d kRotationTarget[] = {
      {0.0, 0.0, 0.0}, {0.0, 0.25, 0.05}, {0.15, 0.0, 0.0}, {0.0, 0.1, 0.0}};
  if (frame == 0) return base;
  const double s = frames > 1 ? static_cast<double>(frame) / (frames - 1) : 0.0;
  PoseParams p = base;
  for (Eigen::Index k = 0; k < p.expr_coeffs.size(); ++k) p.expr_coeffs[k] += s * kExprTarget[k % 4];
  for (std::size_t j = 0; j < p.joint_rotations.size() && j < 4; ++j) p.joint_rotations[j] += s * kRotationTarget[j];
  return p;
}

void dump_gbuffer(const RasterMap& rmap, const fs::path& dir, int frame) {
  Image depth(rmap.height, rmap.width, 1), normals(rmap.height, rmap.width, 3), uv(rmap.height, rmap.width, 3);
  for (int y = 0; y < rmap.height; ++y) {
    for (int x = 0; x < rmap.width; ++x) {
      if (!rmap.covered(y, x)) continue;
      const std::size_t i = rmap.index(y, x);
      depth.at(y, x) = rmap.depth[i];
      for (int c = 0; c < 3; ++c) normals.at(y, x, c) = rmap.normal[i][c];
      uv.at(y, x, 0) = rmap.uv[i].x();
      uv.at(y, x, 1) = rmap.uv[i].y();
      uv.at(y, x, 2) = 1.0;
    }
  }
  save_image(depth, dir / fmt::format("depth_{:04d}.pfm", frame));
  save_image(normals, dir / fmt::format("normals_{:04d}.pfm", frame));
  save_image(uv, dir / fmt::format("uv_{:04d}.pfm", frame));
  save_image(render_mask(rmap), dir / fmt::format("mask_{:04d}.png", frame));
  save_image(part_labels_to_index(render_parts(rmap)), dir / fmt::format("parts_{:04d}.pfm", frame));
}

int cmd_render(const RenderArgs& a) {
  require_file(a.mesh, "--mesh");
  require_file(rig_sidecar_path(a.mesh), "--mesh (rig sidecar)");
  require_file(a.texture, "--texture");
  require_file(a.params, "--params");
  if (a.frames < 1) throw UsageError{"--frames must be >= 1"};
  if (a.resolution < 1) throw UsageError{"--resolution must be >= 1"};
  const RiggedMesh mesh = load_mesh(a.mesh);
  const Image texture = load_image(a.texture);
  const PoseParams params = load_params(a.params);
  check_params(mesh, params);

  const fs::path out(a.out);
  write_run_json(out, "render",
                 {{"mesh", a.mesh}, {"texture", a.texture}, {"params", a.params}, {"frames", a.frames},
                  {"resolution", a.resolution}, {"dump_gbuffer", a.dump_gbuffer}, {"out", a.out}},
                 nullptr);
  std::size_t covered = 0;
  for (int f = 0; f < a.frames; ++f) {
    const Render r = render_mesh(mesh, texture, frame_params(params, f, a.frames), a.resolution);
    const Image frame = tensor_to_image(r.image);
    save_image(frame, out / fmt::format("frame_{:04d}.png", f));
    save_image(frame, out / fmt::format("frame_{:04d}.pfm", f));
    if (a.dump_gbuffer) dump_gbuffer(r.rmap, out, f);
    covered += r.rmap.covered_count();
  }
  std::printf("render: frames=%d resolution=%d covered_pixels=%zu out=%s\n", a.frames, a.resolution, covered,
              a.out.c_str());
  return 0;
}

// check ------------------------------------------------------------------------------------------

struct CheckArgs {
  std::string suite = "all";
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_check(const CheckArgs& a) {
  std::vector<SuiteReport> reports;
  if (a.suite == "grad" || a.suite == "all") reports.push_back(run_grad_suite(a.seed));
  if (a.suite == "geometry" || a.suite == "all") reports.push_back(run_geometry_suite(a.seed));
  if (a.suite == "roundtrip" || a.suite == "all") reports.push_back(run_roundtrip_suite(a.seed));

  json summary = json::array();
  bool pass = true;
  for (const auto& r : reports) {
    for (const auto& line : r.lines)
      std::printf("[%s] %s/%s: %s\n", line.pass ? "PASS" : "FAIL", r.suite.c_str(), line.name.c_str(),
                  line.detail.c_str());
    std::printf("%s: %s (%zu failures, %.1fs)\n", r.suite.c_str(), r.pass() ? "PASS" : "FAIL", r.failures(),
                r.seconds);
    summary.push_back({{"suite", r.suite}, {"pass", r.pass()}, {"failures", r.failures()}});
    pass = pass && r.pass();
  }
  if (!a.out.empty())
    write_run_json(a.out, "check", {{"suite", a.suite}, {"seed", a.seed}, {"out", a.out}, {"reports", summary}},
                   nullptr);
  return pass ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"avatarforge: single-image head avatar reconstruction"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic subject bundle");
  s->add_option("--seed", synth.seed, "Subject seed");
  s->add_option("--profile", synth.profile, "desk | paper")->check(CLI::IsMember({"desk", "paper"}));
  s->add_option("--out", synth.out, "Output directory")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Overfit the network to one subject");
  t->add_option("--subject", train.subject, "Subject directory from `synth`")->required();
  t->add_option("--config", train.config, "JSON config overriding the profile defaults");
  t->add_option("--profile", train.profile, "desk | paper")->check(CLI::IsMember({"desk", "paper"}));
  t->add_option("--steps", train.steps, "Optimizer steps (overrides the config)");
  t->add_option("--out", train.out, "Checkpoint path (weights.bin)")->required();

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Reconstruct a textured mesh from one image");
  i->add_option("--image", infer.image, "Input image (.png or .pfm)")->required();
  i->add_option("--params", infer.params, "Pose/camera parameters JSON")->required();
  i->add_option("--checkpoint", infer.checkpoint, "weights.bin from `train`")->required();
  i->add_option("--config", infer.config, "JSON config the checkpoint was trained with");
  i->add_option("--profile", infer.profile, "desk | paper")->check(CLI::IsMember({"desk", "paper"}));
  i->add_option("--out", infer.out, "Output directory")->required();

  RenderArgs render;
  auto* r = app.add_subcommand("render", "Animate a reconstructed avatar");
  r->add_option("--mesh", render.mesh, "OBJ with rig sidecar")->required();
  r->add_option("--texture", render.texture, "Texture image (.png or .pfm)")->required();
  r->add_option("--params", render.params, "Pose/camera parameters JSON")->required();
  r->add_option("--frames", render.frames, "Frame count");
  r->add_option("--resolution", render.resolution, "Output resolution");
  r->add_flag("--dump-gbuffer", render.dump_gbuffer, "Also write depth, normal, uv, mask and part buffers");
  r->add_option("--out", render.out, "Output directory")->required();

  CheckArgs check;
  auto* c = app.add_subcommand("check", "Run the verification suites");
  c->add_option("--suite", check.suite, "grad | geometry | roundtrip | all")
      ->check(CLI::IsMember({"grad", "geometry", "roundtrip", "all"}));
  c->add_option("--seed", check.seed, "Fixture seed");
  c->add_option("--out", check.out, "Directory for run.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    Eigen::setNbThreads(thread_cap());
    if (s->parsed()) return cmd_synth(synth);
    if (t->parsed()) return cmd_train(train);
    if (i->parsed()) return cmd_infer(infer);
    if (r->parsed()) return cmd_render(render);
    if (c->parsed()) return cmd_check(check);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.message.c_str());
    return kExitUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.code() == ErrorCode::kConfig ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
