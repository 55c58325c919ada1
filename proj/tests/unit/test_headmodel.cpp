#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>
#include <random>

#include "avatarforge/error.hpp"
#include "avatarforge/headmodel.hpp"
#include "avatarforge/mini_rig.hpp"
#include "helpers.hpp"

using namespace avatarforge;

namespace {

PoseParams random_params(const RiggedMesh& rig, std::mt19937_64& rng, double rot = 0.3) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PoseParams p = PoseParams::zeros(rig, kMiniRigShapeCount);
  for (Eigen::Index k = 0; k < p.shape_coeffs.size(); ++k) p.shape_coeffs[k] = u(rng);
  for (Eigen::Index k = 0; k < p.expr_coeffs.size(); ++k) p.expr_coeffs[k] = u(rng);
  for (auto& r : p.joint_rotations) r = rot * Eigen::Vector3d(u(rng), u(rng), u(rng));
  return p;
}

}  // namespace

TEST_CASE("blendshapes are linear in their coefficients") {
  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  PoseParams p = PoseParams::zeros(rig, kMiniRigShapeCount);
  CHECK(apply_blendshapes(rig, p) == rig.vertices);

  p.shape_coeffs[1] = 1.0;
  CHECK(apply_blendshapes(rig, p) == rig.vertices + rig.blendshapes[1]);

  std::mt19937_64 rng(1);
  const PoseParams c = random_params(rig, rng);
  PoseParams c2 = c;
  c2.shape_coeffs *= 2.0;
  c2.expr_coeffs *= 2.0;
  const Points d1 = apply_blendshapes(rig, c) - rig.vertices;
  const Points d2 = apply_blendshapes(rig, c2) - rig.vertices;
  CHECK((d2 - 2.0 * d1).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("joint regression: one-hot, midpoint, convex hull") {
  RiggedMesh m = testing::single_triangle();
  m.joint_regressor = Matrix::Zero(1, 3);
  m.joint_regressor(0, 2) = 1.0;
  CHECK(regress_joints(m, m.vertices).row(0) == m.vertices.row(2));

  m.joint_regressor << 0.5, 0.5, 0.0;
  const Points mid = regress_joints(m, m.vertices);
  CHECK((mid.row(0) - 0.5 * (m.vertices.row(0) + m.vertices.row(1))).norm() <= 1e-15);

  // Random row-stochastic rows over the triangle: the joint's barycentric coordinates are the row itself.
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::Vector3d w(u(rng), u(rng), u(rng));
    w /= w.sum();
    m.joint_regressor = w.transpose();
    const Eigen::Vector3d j = regress_joints(m, m.vertices).row(0).transpose();
    const Eigen::Vector3d a = m.vertices.row(0), b = m.vertices.row(1), c = m.vertices.row(2);
    const double area = (b - a).cross(c - a).z();
    const double l0 = (b - j).cross(c - j).z() / area, l1 = (c - j).cross(a - j).z() / area;
    CHECK(l0 >= -1e-12);
    CHECK(l1 >= -1e-12);
    CHECK(1.0 - l0 - l1 >= -1e-12);
  }
}

TEST_CASE("LBS closed forms") {
  Points v(2, 3);
  v << 1.0, 0.0, 0.0, 0.3, -0.2, 0.5;
  Points joints(1, 3);
  joints << 0.5, 0.0, 0.0;
  const std::vector<int> parents{-1};
  const Matrix w = Matrix::Ones(2, 1);

  const std::vector<Eigen::Vector3d> zero{Eigen::Vector3d::Zero()};
  CHECK(lbs(v, w, joints, zero, parents) == v);

  const std::vector<Eigen::Vector3d> quarter{Eigen::Vector3d(0.0, 0.0, std::numbers::pi / 2)};
  const Points posed = lbs(v, w, joints, quarter, parents);
  // (1, 0, 0) rotated 90 degrees about z around (0.5, 0, 0) -> (0.5, 0.5, 0).
  CHECK((posed.row(0) - Eigen::RowVector3d(0.5, 0.5, 0.0)).norm() <= 1e-12);

  Points two_joints(2, 3);
  two_joints << 0.5, 0.0, 0.0, 0.5, 0.0, 0.0;
  const std::vector<int> parents2{-1, -1};
  const std::vector<Eigen::Vector3d> same{quarter[0], quarter[0]};
  Matrix half = Matrix::Constant(2, 2, 0.5);
  CHECK((lbs(v, half, two_joints, same, parents2) - posed).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("cyclic skeletons are rejected") {
  Points joints = Points::Zero(2, 3);
  const std::vector<Eigen::Vector3d> rot(2, Eigen::Vector3d::Zero());
  const std::vector<int> parents{1, 0};
  CHECK_THROWS_AS(joint_transforms(joints, rot, parents), Error);
}

TEST_CASE("animate: identity at zero params, translation-linear in dV at zero pose") {
  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  PoseParams zero = PoseParams::zeros(rig, kMiniRigShapeCount);
  CHECK(animate(rig.vertices, rig, zero).vertices == rig.vertices);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.01, 0.01);
  Points delta(rig.num_vertices(), 3);
  for (Eigen::Index i = 0; i < delta.size(); ++i) delta.data()[i] = u(rng);
  zero.expr_coeffs.setConstant(0.4);
  const Points a = animate(rig.vertices + delta, rig, zero).vertices;
  const Points b = animate(rig.vertices, rig, zero).vertices;
  CHECK((a - b - delta).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("dV before skinning differs from adding it afterwards under a nonzero pose") {
  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  std::mt19937_64 rng(9);
  const PoseParams p = random_params(rig, rng, 0.5);
  // A uniform translation would commute with skinning because the joints move with it.
  const Points delta = 0.05 * rig.vertices;
  const Points before = animate(rig.vertices + delta, rig, p).vertices;
  const Points after = animate(rig.vertices, rig, p).vertices + delta;
  CHECK((before - after).cwiseAbs().maxCoeff() > 1e-4);
}

TEST_CASE("animation_map reproduces animate") {
  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  std::mt19937_64 rng(13);
  const PoseParams p = random_params(rig, rng);
  const Points posed = animate(rig.vertices, rig, p).vertices;
  const AnimationMap am = animation_map(rig.vertices, rig, p);
  double err = 0.0;
  for (Eigen::Index v = 0; v < rig.num_vertices(); ++v) {
    const Eigen::Vector3d x = rig.vertices.row(v).transpose() + am.expression_offsets.row(v).transpose();
    const Eigen::Vector3d y = am.per_vertex[static_cast<std::size_t>(v)] * x.homogeneous();
    err = std::max(err, (y - posed.row(v).transpose()).norm());
  }
  CHECK(err <= 1e-12);
}

TEST_CASE("parameter counts are checked against the rig") {
  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  PoseParams p = PoseParams::zeros(rig, kMiniRigShapeCount);
  p.joint_rotations.pop_back();
  CHECK_THROWS_AS(check_params(rig, p), Error);
}

TEST_CASE("params JSON round-trip is exact") {
  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  std::mt19937_64 rng(21);
  PoseParams p = random_params(rig, rng);
  p.camera = testing::frontal_camera(128);
  const PoseParams back = params_from_json(params_to_json(p));
  CHECK(back.shape_coeffs == p.shape_coeffs);
  CHECK(back.expr_coeffs == p.expr_coeffs);
  for (std::size_t j = 0; j < p.joint_rotations.size(); ++j) CHECK(back.joint_rotations[j] == p.joint_rotations[j]);
  CHECK(back.camera.rotation == p.camera.rotation);
  CHECK(back.camera.translation == p.camera.translation);
  CHECK(back.camera.fx == p.camera.fx);
}
