#include <doctest.h>

#include <cmath>

#include "avatarforge/checkpoint.hpp"
#include "avatarforge/config.hpp"
#include "avatarforge/error.hpp"
#include "avatarforge/mini_rig.hpp"
#include "avatarforge/pipeline.hpp"
#include "avatarforge/synth.hpp"
#include "avatarforge/train.hpp"
#include "helpers.hpp"

using namespace avatarforge;

namespace {

/// Shared desk-profile fixture: the mini-rig, subject 0 and freshly initialized blocks.
struct Fixture {
  RiggedMesh rig = make_mini_rig(Profile::kDesk);
  SyntheticSubject subject = make_synthetic_subject(0, rig);
  Config config = default_config(Profile::kDesk);
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void fill(ad::Tensor& t, double v) { std::fill(t.mutable_values().begin(), t.mutable_values().end(), v); }

Points clip_one(Part part, const Eigen::RowVector3d& d) {
  Points p(1, 3);
  p.row(0) = d;
  return clip_deformation(p, {part}, ClipRanges{});
}

}  // namespace

TEST_CASE("clip examples") {
  CHECK(clip_one(Part::kHair, {0.1, 0.0, 0.0}) == Points(Eigen::RowVector3d(0.08, 0.0, 0.0)));
  CHECK(clip_one(Part::kEyelid, {0.3, -0.2, 0.01}).isZero(0.0));
  CHECK(clip_one(Part::kEyeball, {-0.01, 0.0, 0.5}).isZero(0.0));
  CHECK(clip_one(Part::kFace, {0.001, -0.002, 0.0}) == Points(Eigen::RowVector3d(0.001, -0.002, 0.0)));

  const ClipRanges d;
  CHECK(d.for_part(Part::kHair) == 0.08);
  CHECK(d.for_part(Part::kNeck) == 0.02);
  CHECK(d.for_part(Part::kFace) == 0.003);
  CHECK(d.for_part(Part::kEyeball) == 0.0);
  CHECK(d.for_part(Part::kEyelid) == 0.0);
  CHECK_THROWS_AS(d.for_part(static_cast<Part>(17)), Error);
}

TEST_CASE("config JSON round-trip, unknown fields and invalid values") {
  Config c = default_config(Profile::kDesk);
  c.gamma = 0.5;
  c.delta.hair = 0.05;
  c.dims.attention_layers = 1;
  const Config back = config_from_json(config_to_json(c), default_config(Profile::kDesk));
  CHECK(config_to_json(back) == config_to_json(c));

  auto code = [](const std::string& text) {
    try {
      config_from_json(text, default_config(Profile::kDesk));
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kParse;
  };
  CHECK(code(R"({"gama": 0.8})") == ErrorCode::kConfig);
  CHECK(code(R"({"dims": {"width": 3}})") == ErrorCode::kConfig);
  CHECK(code(R"({"gamma": 0})") == ErrorCode::kConfig);
  CHECK(code(R"({"iterations": 0})") == ErrorCode::kConfig);
  CHECK(code(R"({"dims": {"image_resolution": 100}})") == ErrorCode::kConfig);
  CHECK(code("{not json") == ErrorCode::kConfig);

  const Config paper = default_config(Profile::kPaper);
  CHECK(paper.iterations == 2);
  CHECK(paper.gamma == 0.8);
  CHECK(paper.lambda.part == 0.5);
  CHECK(paper.lambda.lap == 2.0);
  CHECK(paper.train.lr == 2e-4);
}

TEST_CASE("feature shapes at the desk profile, and no-attention vertex features") {
  const Fixture& fx = fixture();
  const auto blocks = Blocks::create(fx.config);
  const ad::Tensor image = image_to_tensor(fx.subject.input_image);
  const Features f = extract_features(image, fx.rig.vertices, *blocks, fx.config);
  CHECK(f.f_i.shape() == ad::Shape{256, 64});
  CHECK(f.f_v.shape() == ad::Shape{static_cast<int>(fx.rig.num_vertices()), 64});
  CHECK(f.f_t.shape() == ad::Shape{256, 64});

  const Features again = extract_features(image, fx.rig.vertices, *blocks, fx.config);
  CHECK(std::equal(f.f_v.values().begin(), f.f_v.values().end(), again.f_v.values().begin()));

  Config flat = fx.config;
  flat.dims.attention_layers = 0;
  const auto plain = Blocks::create(flat);
  const Features g = extract_features(image, fx.rig.vertices, *plain, flat);
  const ad::Tensor pts = ad::Tensor::constant(
      {static_cast<int>(fx.rig.num_vertices()), 3},
      std::vector<double>(fx.rig.vertices.data(), fx.rig.vertices.data() + fx.rig.vertices.size()));
  const ad::Tensor direct = plain->vertex_embed(nn::positional_encoding(pts, flat.dims.n_freq));
  CHECK(std::equal(g.f_v.values().begin(), g.f_v.values().end(), direct.values().begin()));
}

TEST_CASE("a zero displacement head leaves the geometry at its start") {
  const Fixture& fx = fixture();
  auto blocks = Blocks::create(fx.config);
  fill(blocks->dv_head.weight, 0.0);
  fill(blocks->dv_head.bias, 0.0);
  ad::NoGradGuard no_grad;
  const RunOutput out = run(fx.subject.input_image, fx.subject.pose_params, fx.rig, *blocks, fx.config);
  for (const auto& rec : out.records) {
    CHECK(rec.mesh.vertices == out.records[0].mesh.vertices);
    CHECK(rec.displacement.isZero(0.0));
  }
}

TEST_CASE("a closed texture update gate keeps the texture") {
  const Fixture& fx = fixture();
  auto blocks = Blocks::create(fx.config);
  fill(blocks->tex_gru.z.bias, -60.0);
  ad::NoGradGuard no_grad;
  const RunOutput out = run(fx.subject.input_image, fx.subject.pose_params, fx.rig, *blocks, fx.config);
  const Image& t0 = out.records[0].texture;
  for (std::size_t t = 1; t < out.records.size(); ++t) {
    double diff = 0.0;
    for (std::size_t i = 0; i < t0.data.size(); ++i)
      diff = std::max(diff, std::abs(out.records[t].texture.data[i] - t0.data[i]));
    CHECK(diff <= 1e-6);
  }
}

TEST_CASE("run output: valid meshes, bounded displacement, textures in (0, 1)") {
  const Fixture& fx = fixture();
  Config strong = fx.config;
  strong.dv_head_gain = 1.0;  // large raw offsets exercise the clamp
  auto blocks = Blocks::create(strong);
  ad::NoGradGuard no_grad;
  const RunOutput out = run(fx.subject.input_image, fx.subject.pose_params, fx.rig, *blocks, strong);
  REQUIRE(out.records.size() == static_cast<std::size_t>(strong.iterations) + 1);
  REQUIRE(out.renders.size() == out.records.size());
  for (const auto& rec : out.records) {
    CHECK_FALSE(find_invariant_violation(rec.mesh).has_value());
    CHECK(is_edge_manifold(rec.mesh.faces));
    CHECK(is_consistently_oriented(rec.mesh.faces));
    for (Eigen::Index v = 0; v < rec.displacement.rows(); ++v)
      CHECK(rec.displacement.row(v).cwiseAbs().maxCoeff() <=
            strong.delta.for_part(rec.mesh.part_labels[static_cast<std::size_t>(v)]));
    for (double x : rec.texture.data) {
      CHECK(x > 0.0);
      CHECK(x < 1.0);
    }
  }
}

TEST_CASE("error features reach their convolution weights") {
  const Fixture& fx = fixture();
  auto blocks = Blocks::create(fx.config);
  const RunOutput out = run(fx.subject.input_image, fx.subject.pose_params, fx.rig, *blocks, fx.config);
  const ErrorFeatures e = error_features(image_to_tensor(fx.subject.input_image), out.renders[0],
                                         out.records[0].mesh, fx.subject.pose_params.camera, *blocks, fx.config);
  CHECK(e.f_d2v.dim(0) == static_cast<int>(out.records[0].mesh.num_vertices()));
  ad::backward(ad::sum(e.f_d2v));
  double reach = 0.0;
  for (double g : blocks->err_phi1.kernel.grad()) reach = std::max(reach, std::abs(g));
  CHECK(reach > 0.0);

  // Vertices whose texel is not visible get an all-zero row.
  const int g = fx.config.dims.texture_grid();
  std::size_t zero_rows = 0;
  const int c = e.f_d2v.dim(1);
  for (int v = 0; v < e.f_d2v.dim(0); ++v) {
    const double u = out.records[0].mesh.uv(v, 0), w = out.records[0].mesh.uv(v, 1);
    const int tx = std::min(g - 1, static_cast<int>(u * g)), ty = std::min(g - 1, static_cast<int>(w * g));
    if (e.valid[static_cast<std::size_t>(ty * g + tx)]) continue;
    bool zero = true;
    for (int k = 0; k < c; ++k) zero = zero && e.f_d2v[static_cast<std::size_t>(v) * c + k] == 0.0;
    zero_rows += zero;
    CHECK(zero);
  }
  CHECK(zero_rows > 0);
}

TEST_CASE("zero training steps keep the initialization; checkpoints restore blocks") {
  const Fixture& fx = fixture();
  auto blocks = Blocks::create(fx.config);
  auto reference = Blocks::create(fx.config);
  TrainOptions opt;
  opt.steps = 0;
  const TrainResult r = train_overfit(fx.subject, *blocks, fx.config, opt);
  CHECK(r.metrics.size() == 1);
  for (std::size_t i = 0; i < blocks->params.entries().size(); ++i) {
    const auto& a = blocks->params.entries()[i].second;
    const auto& b = reference->params.entries()[i].second;
    CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  }

  const auto dir = testing::scratch_dir("pipeline_ckpt");
  ad::save_checkpoint(blocks->params, dir / "weights.bin");
  Config other = fx.config;
  other.seed = 99;
  auto restored = Blocks::create(other);
  ad::load_checkpoint(restored->params, dir / "weights.bin");
  for (std::size_t i = 0; i < blocks->params.entries().size(); ++i) {
    const auto& a = blocks->params.entries()[i].second;
    const auto& b = restored->params.entries()[i].second;
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(b[k] == static_cast<double>(static_cast<float>(a[k])));
  }
}

TEST_CASE("short training runs are deterministic and lower the loss") {
  const Fixture& fx = fixture();
  auto train = [&] {
    auto blocks = Blocks::create(fx.config);
    TrainOptions opt;
    opt.steps = 6;
    Config c = fx.config;
    c.train.warmup = 1;
    return train_overfit(fx.subject, *blocks, c, opt).metrics;
  };
  const auto a = train();
  const auto b = train();
  REQUIRE(a.size() == 7);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].l_total == b[i].l_total);
    CHECK(a[i].l_img == b[i].l_img);
  }
  CHECK(a.back().l_total < a.front().l_total);
}
