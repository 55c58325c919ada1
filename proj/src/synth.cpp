#include "avatarforge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "avatarforge/mesh_io.hpp"
#include "avatarforge/mini_rig.hpp"
#include "avatarforge/raster.hpp"

namespace avatarforge {

namespace {

/// Platform-independent uniform draws on top of mt19937_64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  std::uint64_t bits() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

/// Sum of random plane waves, normalised to [-1, 1].
struct WaveField {
  std::vector<Eigen::Vector3d> k;
  std::vector<double> phase;

  WaveField(Rng& rng, int count, double freq_lo, double freq_hi) {
    for (int i = 0; i < count; ++i) {
      Eigen::Vector3d dir(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
      if (dir.norm() < 1e-3) dir = Eigen::Vector3d::UnitX();
      k.push_back(dir.normalized() * rng.uniform(freq_lo, freq_hi));
      phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
    }
  }
  double operator()(const Eigen::Vector3d& p) const {
    double s = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i) s += std::sin(k[i].dot(p) + phase[i]);
    return s / static_cast<double>(k.size());
  }
};

}  // namespace

Points hair_displacement(std::uint64_t seed, const RiggedMesh& rig, double delta) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const double amplitude = rng.uniform(0.5 * delta, delta);
  const WaveField field(rng, 3, 2.0, 5.0);
  const Eigen::Index n = rig.num_vertices();
  Points disp = Points::Zero(n, 3);

  std::vector<Eigen::Index> non_hair;
  for (Eigen::Index v = 0; v < n; ++v)
    if (rig.part_labels[static_cast<std::size_t>(v)] != Part::kHair) non_hair.push_back(v);

  const Eigen::Vector3d center(0.0, 0.1, 0.0);
  for (Eigen::Index v = 0; v < n; ++v) {
    if (rig.part_labels[static_cast<std::size_t>(v)] != Part::kHair) continue;
    const Eigen::Vector3d p = rig.vertices.row(v);
    double nearest = std::numeric_limits<double>::infinity();
    for (Eigen::Index u : non_hair) nearest = std::min(nearest, (rig.vertices.row(u).transpose() - p).squaredNorm());
    const double falloff = smoothstep(0.0, 0.3, std::sqrt(nearest));
    const double magnitude = amplitude * falloff * (0.55 + 0.45 * field(p));
    Eigen::Vector3d d = (p - center).normalized() * magnitude;
    if (d.norm() > delta) d *= delta / d.norm();
    disp.row(v) = d.transpose();
  }
  return disp;
}

UvImage make_procedural_texture(std::uint64_t seed, const RiggedMesh& rig, int resolution) {
  Rng rng(seed ^ 0x5bd1e9955bd1e995ULL);
  const UvRaster uv_raster = rasterize_uv(rig, resolution, resolution);

  const Eigen::Vector3d skin(rng.uniform(0.68, 0.9), rng.uniform(0.5, 0.68), rng.uniform(0.38, 0.55));
  const Eigen::Vector3d hair(rng.uniform(0.1, 0.5), rng.uniform(0.06, 0.35), rng.uniform(0.04, 0.25));
  const Eigen::Vector3d ink(rng.uniform(0.05, 0.25), rng.uniform(0.05, 0.2), rng.uniform(0.1, 0.4));
  const Eigen::Vector3d tint(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
  const double stripe_angle = rng.uniform(0.0, std::numbers::pi);
  const double stripe_freq = rng.uniform(9.0, 14.0);
  const double checker_cells = std::floor(rng.uniform(8.0, 14.0));
  const WaveField noise(rng, 4, 4.0, 10.0);

  // Glyph strip: 5x7 bitmaps with random bits in a band across the lower face.
  constexpr int kGlyphW = 5, kGlyphH = 7, kGlyphs = 10;
  std::vector<std::uint64_t> glyph_bits(kGlyphs);
  for (auto& g : glyph_bits) g = rng.bits();
  const double strip_v0 = rng.uniform(0.55, 0.58);
  const double strip_u0 = 0.38;
  const int bit_px = std::max(1, resolution / 128);

  UvImage tex(resolution, resolution, 3);
  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      const double u = (x + 0.5) / resolution, v = (y + 0.5) / resolution;
      const std::size_t t = static_cast<std::size_t>(y) * resolution + x;
      Part label = Part::kOther;
      if (const int f = uv_raster.face_id[t]; f >= 0) {
        const Eigen::Vector3d& b = uv_raster.bary[t];
        int best = 0;
        for (int k = 1; k < 3; ++k)
          if (b[k] > b[best]) best = k;
        label = rig.part_labels[static_cast<std::size_t>(rig.faces(f, best))];
      }
      Eigen::Vector3d c;
      switch (label) {
        case Part::kHair: {
          const double s = std::sin(2.0 * std::numbers::pi * stripe_freq *
                                    (u * std::cos(stripe_angle) + v * std::sin(stripe_angle)));
          c = hair * (1.0 + 0.35 * s) + Eigen::Vector3d::Constant(0.05 * s);
          break;
        }
        case Part::kEyeball: c = Eigen::Vector3d(0.92, 0.92, 0.9); break;
        case Part::kEyelid: c = 0.82 * skin; break;
        case Part::kNeck:
        case Part::kOther: {
          const int cell = static_cast<int>(std::floor(u * checker_cells)) + static_cast<int>(std::floor(v * checker_cells));
          c = skin * 0.92 + tint * ((cell & 1) ? 1.0 : -1.0);
          break;
        }
        case Part::kFace: c = skin; break;
      }
      c += Eigen::Vector3d::Constant(0.06 * noise(Eigen::Vector3d(u, v, 0.0)));

      const int gx = static_cast<int>(std::floor((u - strip_u0) * resolution)) / bit_px;
      const int gy = static_cast<int>(std::floor((v - strip_v0) * resolution)) / bit_px;
      if (gx >= 0 && gy >= 0 && gy < kGlyphH && gx < kGlyphs * (kGlyphW + 1)) {
        const int glyph = gx / (kGlyphW + 1), col = gx % (kGlyphW + 1);
        if (col < kGlyphW && ((glyph_bits[static_cast<std::size_t>(glyph)] >> (gy * kGlyphW + col)) & 1u)) c = ink;
      }
      for (int ch = 0; ch < 3; ++ch) tex.values.at(y, x, ch) = std::clamp(c[ch], 0.02, 0.98);
      tex.valid[t] = 1;
    }
  }
  return tex;
}

void render_supervision(SyntheticSubject& s, int resolution) {
  const RiggedMesh animated = animate(s.gt_mesh.vertices, s.gt_mesh, s.pose_params);
  const RasterMap rmap = rasterize(animated, s.pose_params.camera, resolution, resolution);
  s.input_image = shade_texture(rmap, s.gt_texture.values);
  s.fg_mask = render_mask(rmap);
  s.normal_map = render_normals(rmap);
  s.part_map = render_parts(rmap);
}

SyntheticSubject make_synthetic_subject(std::uint64_t seed, const RiggedMesh& rig, const SynthOptions& options) {
  validate(rig);
  Rng rng(seed);
  SyntheticSubject s;
  s.template_mesh = rig;

  const Eigen::Index num_shape = std::min<Eigen::Index>(kMiniRigShapeCount, rig.num_blendshapes());
  s.pose_params = PoseParams::zeros(rig, num_shape);
  for (Eigen::Index k = 0; k < s.pose_params.shape_coeffs.size(); ++k) s.pose_params.shape_coeffs[k] = rng.uniform(-1, 1);
  for (Eigen::Index k = 0; k < s.pose_params.expr_coeffs.size(); ++k) s.pose_params.expr_coeffs[k] = rng.uniform(-0.3, 1.0);
  for (std::size_t j = 0; j < s.pose_params.joint_rotations.size(); ++j) {
    if (rig.joint_parents[j] < 0) continue;
    s.pose_params.joint_rotations[j] = Eigen::Vector3d(rng.uniform(-0.08, 0.08), rng.uniform(-0.1, 0.1), 0.0);
  }
  const double yaw = rng.uniform(-1.0, 1.0) * std::numbers::pi / 6.0;
  const double distance = 3.2;
  s.pose_params.camera = Camera::look_at(Eigen::Vector3d(distance * std::sin(yaw), 0.25, distance * std::cos(yaw)),
                                         Eigen::Vector3d(0.0, -0.05, 0.0), Eigen::Vector3d::UnitY(),
                                         1.35 * options.resolution, options.resolution, options.resolution);

  s.gt_mesh = rig;
  s.gt_mesh.vertices = add_blendshapes(rig.vertices, rig.blendshapes, 0, s.pose_params.shape_coeffs);
  s.gt_mesh.vertices += hair_displacement(seed, s.gt_mesh, options.hair_delta);
  s.gt_texture = make_procedural_texture(seed, rig, options.texture_resolution);
  render_supervision(s, options.resolution);
  return s;
}

Image part_labels_to_index(const Image& one_hot) {
  Image out(one_hot.height, one_hot.width, 1);
  for (std::size_t p = 0; p < one_hot.num_pixels(); ++p) {
    for (int c = 0; c < one_hot.channels; ++c) {
      if (one_hot.data[p * one_hot.channels + c] > 0.5) out.data[p] = c + 1.0;
    }
  }
  return out;
}

Image part_index_to_labels(const Image& index) {
  Image out(index.height, index.width, kNumParts);
  for (std::size_t p = 0; p < index.num_pixels(); ++p) {
    const int label = static_cast<int>(std::lround(index.data[p])) - 1;
    if (label >= 0 && label < kNumParts) out.data[p * kNumParts + label] = 1.0;
  }
  return out;
}

void save_subject(const SyntheticSubject& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_mesh(s.gt_mesh, dir / "gt_mesh.obj");
  save_mesh(s.template_mesh, dir / "template.obj");
  save_params(s.pose_params, dir / "params.json");
  save_image(s.gt_texture.values, dir / "gt_texture.png");
  save_image(s.gt_texture.values, dir / "gt_texture.pfm");
  save_image(s.input_image, dir / "input.png");
  save_image(s.input_image, dir / "input.pfm");
  save_image(s.fg_mask, dir / "mask.pfm");
  save_image(s.normal_map, dir / "normals.pfm");
  save_image(part_labels_to_index(s.part_map), dir / "parts.pfm");
}

SyntheticSubject load_subject(const std::filesystem::path& dir) {
  SyntheticSubject s;
  s.gt_mesh = load_mesh(dir / "gt_mesh.obj");
  s.template_mesh = load_mesh(dir / "template.obj");
  s.pose_params = load_params(dir / "params.json");
  s.gt_texture.values = load_image(dir / "gt_texture.pfm");
  s.gt_texture.valid.assign(s.gt_texture.values.num_pixels(), 1);
  s.input_image = load_image(dir / "input.pfm");
  s.fg_mask = load_image(dir / "mask.pfm");
  s.normal_map = load_image(dir / "normals.pfm");
  s.part_map = part_index_to_labels(load_image(dir / "parts.pfm"));
  if (!s.input_image.same_shape(s.normal_map) || s.fg_mask.height != s.input_image.height ||
      s.fg_mask.width != s.input_image.width)
    throw Error(ErrorCode::kInvariant, "subject images differ in resolution");
  return s;
}

}  // namespace avatarforge
