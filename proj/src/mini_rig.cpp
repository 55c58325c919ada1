#include "avatarforge/mini_rig.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace avatarforge {

Profile profile_from_name(std::string_view name) {
  if (name == "desk") return Profile::kDesk;
  if (name == "paper") return Profile::kPaper;
  throw Error(ErrorCode::kConfig, fmt::format("unknown profile '{}'", name));
}

std::string_view profile_name(Profile p) { return p == Profile::kDesk ? "desk" : "paper"; }

namespace {

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

double angle_between(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

double bump(const Eigen::Vector3d& dir, const Eigen::Vector3d& center, double width) {
  const double d = angle_between(dir, center);
  return std::exp(-(d * d) / (width * width));
}

const Eigen::Vector3d kLeftEye = Eigen::Vector3d(-0.34, 0.16, 0.925).normalized();
const Eigen::Vector3d kRightEye = Eigen::Vector3d(0.34, 0.16, 0.925).normalized();
const Eigen::Vector3d kNose = Eigen::Vector3d(0.0, -0.08, 1.0).normalized();
constexpr double kEyeballRadius = 0.15;  // radians on the base sphere
constexpr double kEyelidRadius = 0.25;

Part classify(const Eigen::Vector3d& d) {
  const double eye = std::min(angle_between(d, kLeftEye), angle_between(d, kRightEye));
  if (eye < kEyeballRadius) return Part::kEyeball;
  if (eye < kEyelidRadius) return Part::kEyelid;
  if (d.y() < -0.55) return Part::kNeck;
  if (d.y() > 0.45) return Part::kHair;
  if (d.z() < -0.2 && d.y() > -0.35) return Part::kHair;
  if (d.z() > 0.35) return Part::kFace;
  return Part::kOther;
}

Eigen::Vector3d sculpt(const Eigen::Vector3d& d) {
  const double neck = smoothstep(-0.35, -0.8, d.y());
  const double radial = 1.0 - 0.45 * neck;
  Eigen::Vector3d p(0.78 * radial * d.x(), 0.95 * d.y(), 0.86 * radial * d.z());
  p.z() += 0.13 * bump(d, kNose, 0.16);
  p += 0.02 * d * (bump(d, kLeftEye, 0.12) + bump(d, kRightEye, 0.12));
  p.y() -= 0.04 * neck;
  return p;
}

}  // namespace

RiggedMesh make_mini_rig(Profile profile) {
  const int rings = profile == Profile::kDesk ? 24 : 64;
  const int segments = profile == Profile::kDesk ? 48 : 128;
  const double pi = std::numbers::pi;

  // Vertex layout: top pole, (rings - 1) x (segments + 1) grid, bottom pole.
  std::vector<Eigen::Vector3d> dirs;
  std::vector<Eigen::Vector2d> uvs;
  dirs.emplace_back(0.0, 1.0, 0.0);
  uvs.emplace_back(0.5, 0.0);
  for (int i = 1; i < rings; ++i) {
    const double theta = pi * i / rings;
    for (int s = 0; s <= segments; ++s) {
      const int wrapped = s == segments ? 0 : s;  // seam duplicate shares the exact position
      const double phi_pos = -pi + 2.0 * pi * wrapped / segments;
      dirs.emplace_back(std::sin(theta) * std::sin(phi_pos), std::cos(theta), std::sin(theta) * std::cos(phi_pos));
      uvs.emplace_back(static_cast<double>(s) / segments, static_cast<double>(i) / rings);
    }
  }
  dirs.emplace_back(0.0, -1.0, 0.0);
  uvs.emplace_back(0.5, 1.0);

  const int n = static_cast<int>(dirs.size());
  const int bottom = n - 1;
  auto grid = [&](int i, int s) { return 1 + (i - 1) * (segments + 1) + s; };

  std::vector<std::array<int, 3>> tris;
  for (int s = 0; s < segments; ++s) tris.push_back({0, grid(1, s), grid(1, s + 1)});
  for (int i = 1; i < rings - 1; ++i) {
    for (int s = 0; s < segments; ++s) {
      const int a = grid(i, s), b = grid(i, s + 1), c = grid(i + 1, s), d = grid(i + 1, s + 1);
      tris.push_back({a, c, b});
      tris.push_back({b, c, d});
    }
  }
  for (int s = 0; s < segments; ++s) tris.push_back({grid(rings - 1, s), bottom, grid(rings - 1, s + 1)});

  RiggedMesh mesh;
  mesh.vertices.resize(n, 3);
  mesh.uv.resize(n, 2);
  mesh.part_labels.resize(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) {
    const auto& d = dirs[static_cast<std::size_t>(v)];
    mesh.vertices.row(v) = sculpt(d).transpose();
    mesh.uv.row(v) = uvs[static_cast<std::size_t>(v)].transpose();
    mesh.part_labels[static_cast<std::size_t>(v)] = classify(d);
  }
  mesh.faces.resize(static_cast<Eigen::Index>(tris.size()), 3);
  for (std::size_t f = 0; f < tris.size(); ++f)
    mesh.faces.row(static_cast<Eigen::Index>(f)) << tris[f][0], tris[f][1], tris[f][2];

  // Skinning: root holds the lower neck, jaw the lower front face, eyes the eyeballs, neck the rest.
  constexpr int kJoints = 4;
  mesh.joint_parents = {-1, kRootJoint, kNeckJoint, kNeckJoint};
  mesh.skin_weights = Matrix::Zero(n, kJoints);
  for (int v = 0; v < n; ++v) {
    const auto& d = dirs[static_cast<std::size_t>(v)];
    if (mesh.part_labels[static_cast<std::size_t>(v)] == Part::kEyeball) {
      mesh.skin_weights(v, kEyesJoint) = 1.0;
      continue;
    }
    const double root = smoothstep(-0.6, -0.9, d.y());
    const double jaw = (1.0 - root) * smoothstep(-0.12, -0.38, d.y()) * smoothstep(0.05, 0.45, d.z());
    mesh.skin_weights(v, kRootJoint) = root;
    mesh.skin_weights(v, kJawJoint) = jaw;
    mesh.skin_weights(v, kNeckJoint) = 1.0 - (root + jaw);
  }

  // Joint regressor: ring centroids for root / neck / jaw, eyeball centroid for the eyes.
  mesh.joint_regressor = Matrix::Zero(kJoints, n);
  auto ring_average = [&](int joint, int ring) {
    for (int s = 0; s < segments; ++s) mesh.joint_regressor(joint, grid(ring, s)) = 1.0 / segments;
  };
  ring_average(kRootJoint, rings - 2);
  ring_average(kNeckJoint, (3 * rings) / 4);
  ring_average(kJawJoint, (5 * rings) / 8);
  {
    std::vector<int> eye_vertices;
    for (int v = 0; v < n; ++v) {
      if (mesh.part_labels[static_cast<std::size_t>(v)] == Part::kEyeball) eye_vertices.push_back(v);
    }
    for (int v : eye_vertices) mesh.joint_regressor(kEyesJoint, v) = 1.0 / static_cast<double>(eye_vertices.size());
  }

  // Blendshapes: 4 identity offsets then 4 expressions, all smooth functions of the base direction.
  for (int k = 0; k < kMiniRigShapeCount + kMiniRigExprCount; ++k) mesh.blendshapes.push_back(Points::Zero(n, 3));
  for (int v = 0; v < n; ++v) {
    const auto& d = dirs[static_cast<std::size_t>(v)];
    const Eigen::Vector3d p = mesh.vertices.row(v);
    const Part label = mesh.part_labels[static_cast<std::size_t>(v)];
    const double head = 1.0 - smoothstep(-0.5, -0.85, d.y());
    const double front = smoothstep(0.2, 0.8, d.z());
    auto set = [&](int k, const Eigen::Vector3d& off) { mesh.blendshapes[static_cast<std::size_t>(k)].row(v) = off; };

    set(0, Eigen::Vector3d(0.08 * p.x() * head, 0.0, 0.0));                     // width
    set(1, Eigen::Vector3d(0.0, 0.06 * std::max(p.y(), -0.6) * head, 0.0));     // height
    set(2, Eigen::Vector3d(0.0, 0.0, 0.05 * front * std::max(p.z(), 0.0)));    // face depth
    set(3, 0.05 * bump(d, kNose, 0.2) * Eigen::Vector3d(0.0, -0.2, 1.0));       // nose size

    const double jaw = mesh.skin_weights(v, kJawJoint);
    set(4, Eigen::Vector3d(0.0, -0.05 * jaw, 0.01 * jaw));                      // mouth open
    const Eigen::Vector3d mouth_l = Eigen::Vector3d(-0.28, -0.32, 0.9).normalized();
    const Eigen::Vector3d mouth_r = Eigen::Vector3d(0.28, -0.32, 0.9).normalized();
    set(5, 0.03 * bump(d, mouth_l, 0.15) * Eigen::Vector3d(-0.5, 0.8, 0.2) +    // smile
               0.03 * bump(d, mouth_r, 0.15) * Eigen::Vector3d(0.5, 0.8, 0.2));
    const Eigen::Vector3d brow = Eigen::Vector3d(0.0, 0.42, 0.9).normalized();
    set(6, 0.03 * bump(d, brow, 0.3) * Eigen::Vector3d(0.0, 1.0, 0.1));         // brow raise
    if (label == Part::kEyelid) set(7, Eigen::Vector3d(0.0, -0.015, 0.004));    // blink
  }
  // Seam duplicates were built from identical directions, so every attribute above agrees across the seam.

  validate(mesh);
  return mesh;
}

}  // namespace avatarforge
