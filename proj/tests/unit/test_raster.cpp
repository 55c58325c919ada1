#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>

#include "avatarforge/headmodel.hpp"
#include "avatarforge/metrics.hpp"
#include "avatarforge/mini_rig.hpp"
#include "avatarforge/raster.hpp"
#include "helpers.hpp"

using namespace avatarforge;

namespace {

constexpr int kRes = 64;

/// Independent coverage oracle: projects each front-facing face and tests every pixel centre against its three
/// edge half-planes.
std::vector<std::uint8_t> oracle_coverage(const RiggedMesh& mesh, const Camera& cam, int w, int h) {
  std::vector<std::uint8_t> covered(static_cast<std::size_t>(w) * h, 0);
  for (Eigen::Index f = 0; f < mesh.num_faces(); ++f) {
    Eigen::Vector3d c[3];
    Eigen::Vector2d p[3];
    bool in_front = true;
    for (int k = 0; k < 3; ++k) {
      c[k] = cam.rotation * mesh.vertices.row(mesh.faces(f, k)).transpose() + cam.translation;
      in_front = in_front && c[k].z() > 1e-9;
      p[k] = {cam.fx * c[k].x() / c[k].z() + cam.cx, cam.fy * c[k].y() / c[k].z() + cam.cy};
    }
    if (!in_front || (c[1] - c[0]).cross(c[2] - c[0]).dot(c[0]) >= 0.0) continue;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const Eigen::Vector2d q(x + 0.5, y + 0.5);
        double s[3];
        for (int k = 0; k < 3; ++k) {
          const Eigen::Vector2d e = p[(k + 1) % 3] - p[k], r = q - p[k];
          s[k] = e.x() * r.y() - e.y() * r.x();
        }
        if ((s[0] > 0 && s[1] > 0 && s[2] > 0) || (s[0] < 0 && s[1] < 0 && s[2] < 0))
          covered[static_cast<std::size_t>(y) * w + x] = 1;
      }
    }
  }
  return covered;
}

RasterMap single_texel_map(const Eigen::Vector2d& uv) {
  RasterMap r;
  r.height = r.width = 1;
  r.face_id = {0};
  r.bary = {Eigen::Vector3d(1, 0, 0)};
  r.depth = {1.0};
  r.uv = {uv};
  r.normal = {Eigen::Vector3d::UnitZ()};
  r.part = {Part::kFace};
  return r;
}

}  // namespace

TEST_CASE("a screen-facing triangle covers the centre pixel with normalized barycentrics") {
  const RiggedMesh tri = testing::single_triangle();
  const RasterMap r = rasterize(tri, testing::frontal_camera(kRes), kRes, kRes);
  const std::size_t c = r.index(kRes / 2, kRes / 2);
  CHECK(r.face_id[c] == 0);
  CHECK(r.bary[c].sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.depth[c] == doctest::Approx(3.0).epsilon(1e-12));

  const Image normals = render_normals(r);
  const Image mask = render_mask(r);
  double mask_sum = 0.0;
  for (int y = 0; y < kRes; ++y) {
    for (int x = 0; x < kRes; ++x) {
      if (!r.covered(y, x)) continue;
      mask_sum += mask.at(y, x);
      CHECK(normals.at(y, x, 0) == 0.0);
      CHECK(normals.at(y, x, 1) == 0.0);
      CHECK(normals.at(y, x, 2) == 1.0);
    }
  }
  CHECK(mask_sum == static_cast<double>(r.covered_count()));
}

TEST_CASE("back-facing triangles are culled") {
  RiggedMesh tri = testing::single_triangle();
  tri.faces << 0, 2, 1;
  CHECK(rasterize(tri, testing::frontal_camera(kRes), kRes, kRes).covered_count() == 0);
}

TEST_CASE("the nearer of two stacked triangles wins the z-buffer") {
  const RiggedMesh far_tri = testing::single_triangle(0.0, 0.5);
  const RiggedMesh near_tri = testing::single_triangle(0.5, 1.5);
  RiggedMesh both = far_tri;
  both.vertices.resize(6, 3);
  both.vertices << far_tri.vertices, near_tri.vertices;
  both.faces.resize(2, 3);
  both.faces << 0, 1, 2, 3, 4, 5;
  both.uv.resize(6, 2);
  both.uv << far_tri.uv, near_tri.uv;
  testing::attach_single_joint_rig(both);
  const RasterMap r = rasterize(both, testing::frontal_camera(kRes), kRes, kRes);
  CHECK(r.face_id[r.index(kRes / 2, kRes / 2)] == 1);
  for (int f : r.face_id) CHECK(f != 0);
}

TEST_CASE("mini-rig coverage matches the point-in-triangle oracle") {
  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  for (double yaw : {0.0, 0.6, -1.1}) {
    const Eigen::Vector3d eye(3.5 * std::sin(yaw), 0.3, 3.5 * std::cos(yaw));
    const Camera cam = Camera::look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitY(), 1.5 * kRes, kRes, kRes);
    const RasterMap r = rasterize(rig, cam, kRes, kRes);
    const auto oracle = oracle_coverage(rig, cam, kRes, kRes);
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < oracle.size(); ++i) mismatches += (r.face_id[i] >= 0) != (oracle[i] != 0);
    CHECK(mismatches == 0);
    CHECK(r.covered_count() > 500);
  }
}

TEST_CASE("texture sampling: constant colour, texel centres, bilinear midpoint") {
  const RiggedMesh tri = testing::single_triangle();
  const RasterMap r = rasterize(tri, testing::frontal_camera(kRes), kRes, kRes);
  Image flat(8, 8, 3);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) flat.at(y, x, 0) = 0.2, flat.at(y, x, 1) = 0.4, flat.at(y, x, 2) = 0.6;
  const Image shaded = shade_texture(r, flat);
  for (int y = 0; y < kRes; ++y)
    for (int x = 0; x < kRes; ++x)
      if (r.covered(y, x))
        for (int c = 0; c < 3; ++c) CHECK(std::abs(shaded.at(y, x, c) - flat.at(0, 0, c)) <= 1e-15);

  Image tex(2, 2, 1);
  tex.data = {0.1, 0.3, 0.5, 0.9};
  CHECK(shade_texture(single_texel_map({0.75, 0.25}), tex).data[0] == 0.3);  // texel (0, 1) centre
  CHECK(shade_texture(single_texel_map({0.25, 0.75}), tex).data[0] == 0.5);  // texel (1, 0) centre
  CHECK(shade_texture(single_texel_map({0.5, 0.5}), tex).data[0] == doctest::Approx(0.45).epsilon(1e-15));
}

TEST_CASE("all-hair labels render a hair one-hot everywhere covered") {
  const RiggedMesh tri = testing::single_triangle(0.0, 1.0, Part::kHair);
  const RasterMap r = rasterize(tri, testing::frontal_camera(kRes), kRes, kRes);
  const Image parts = render_parts(r);
  for (int y = 0; y < kRes; ++y) {
    for (int x = 0; x < kRes; ++x) {
      if (!r.covered(y, x)) continue;
      for (int p = 0; p < kNumParts; ++p) CHECK(parts.at(y, x, p) == (p == static_cast<int>(Part::kHair) ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("unwrap: constant source, occluded back of the head, render round-trip") {
  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  const int res = 128, tex = 128;
  const Camera cam = testing::frontal_camera(res, 3.5);

  const UvImage flat = unwrap(Image(res, res, 3, 0.7), rig, cam, tex, tex);
  std::size_t valid = 0;
  for (int y = 0; y < tex; ++y) {
    for (int x = 0; x < tex; ++x) {
      if (!flat.is_valid(y, x)) continue;
      ++valid;
      for (int c = 0; c < 3; ++c) CHECK(std::abs(flat.values.at(y, x, c) - 0.7) <= 1e-6);
    }
  }
  CHECK(valid > 1000);

  // The uv seam sits at the back of the head (u = 0 and u = 1).
  for (int y = tex / 4; y < 3 * tex / 4; ++y)
    for (int x : {0, 1, 2, tex - 3, tex - 2, tex - 1}) CHECK_FALSE(flat.is_valid(y, x));

  Image smooth(tex, tex, 3);
  for (int y = 0; y < tex; ++y)
    for (int x = 0; x < tex; ++x)
      for (int c = 0; c < 3; ++c)
        smooth.at(y, x, c) = 0.5 + 0.4 * std::sin(0.05 * (c + 1) * x + 0.07 * y) * std::cos(0.04 * y);
  const RasterMap rmap = rasterize(rig, cam, res, res);
  const UvImage back = unwrap(shade_texture(rmap, smooth), rig, cam, tex, tex);
  std::vector<double> mask(back.valid.begin(), back.valid.end());
  CHECK(psnr(back.values, smooth, mask) >= 40.0);
}
