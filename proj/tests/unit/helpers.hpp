#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "avatarforge/headmodel.hpp"
#include "avatarforge/mesh.hpp"

namespace testing {

using namespace avatarforge;

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("avatarforge_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

/// Rig attributes for a mesh with `n` vertices: one root joint, uniform regressor, all labels `part`.
inline void attach_single_joint_rig(RiggedMesh& m, Part part = Part::kFace) {
  const auto n = m.num_vertices();
  m.skin_weights = Matrix::Ones(n, 1);
  m.joint_regressor = Matrix::Constant(1, n, 1.0 / static_cast<double>(n));
  m.part_labels.assign(static_cast<std::size_t>(n), part);
  m.joint_parents = {-1};
  if (m.uv.rows() != n) m.uv = UvCoords::Constant(n, 2, 0.5);
}

/// Counter-clockwise triangle in the z = z0 plane (normal +z), one joint.
inline RiggedMesh single_triangle(double z0 = 0.0, double size = 1.0, Part part = Part::kFace) {
  RiggedMesh m;
  m.vertices.resize(3, 3);
  m.vertices << -size, -size, z0, size, -size, z0, 0.0, size, z0;
  m.faces.resize(1, 3);
  m.faces << 0, 1, 2;
  m.uv.resize(3, 2);
  m.uv << 0.1, 0.1, 0.9, 0.1, 0.5, 0.9;
  attach_single_joint_rig(m, part);
  return m;
}

/// (n+1) x (n+1) vertex grid in the z = 0 plane with spacing `step`, two triangles per cell, normal +z.
/// Two joints blended linearly along x; joints regressed from the two bottom corners.
inline RiggedMesh planar_grid(int n, double step, Part part = Part::kFace) {
  const int side = n + 1;
  RiggedMesh m;
  m.vertices.resize(side * side, 3);
  m.uv.resize(side * side, 2);
  m.skin_weights.resize(side * side, 2);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const int v = y * side + x;
      m.vertices.row(v) << x * step, y * step, 0.0;
      m.uv.row(v) << static_cast<double>(x) / n, static_cast<double>(y) / n;
      const double a = static_cast<double>(x) / n;
      m.skin_weights.row(v) << 1.0 - a, a;
    }
  }
  m.faces.resize(2 * n * n, 3);
  int f = 0;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const int v = y * side + x;
      m.faces.row(f++) << v, v + 1, v + side + 1;
      m.faces.row(f++) << v, v + side + 1, v + side;
    }
  }
  m.joint_regressor = Matrix::Zero(2, side * side);
  m.joint_regressor(0, 0) = 1.0;
  m.joint_regressor(1, n) = 1.0;
  m.part_labels.assign(static_cast<std::size_t>(side * side), part);
  m.joint_parents = {-1, 0};
  return m;
}

/// Camera on +z looking at the origin; world +z faces it, world +x is image right.
inline Camera frontal_camera(int resolution, double distance = 3.0, double focal_scale = 1.5) {
  return Camera::look_at({0.0, 0.0, distance}, {0.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, focal_scale * resolution, resolution,
                         resolution);
}

}  // namespace testing
