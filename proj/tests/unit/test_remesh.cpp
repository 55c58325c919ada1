#include <doctest.h>

#include <cmath>
#include <utility>
#include <random>

#include "avatarforge/error.hpp"
#include "avatarforge/headmodel.hpp"
#include "avatarforge/mini_rig.hpp"
#include "avatarforge/remesh.hpp"
#include "helpers.hpp"

using namespace avatarforge;

namespace {

double max_row_sum_error(const Matrix& w) { return (w.rowwise().sum().array() - 1.0).abs().maxCoeff(); }

double min_face_area(const RiggedMesh& m) {
  double a = INFINITY;
  for (Eigen::Index f = 0; f < m.num_faces(); ++f) a = std::min(a, face_area(m.vertices, m.faces(f, 0), m.faces(f, 1), m.faces(f, 2)));
  return a;
}

/// Two-joint triangle with one blendshape, for attribute-transfer checks.
RiggedMesh two_joint_triangle() {
  RiggedMesh m = testing::single_triangle();
  m.skin_weights.resize(3, 2);
  m.skin_weights << 1.0, 0.0, 0.0, 1.0, 0.25, 0.75;
  m.joint_regressor = Matrix::Zero(2, 3);
  m.joint_regressor(0, 0) = 1.0;
  m.joint_regressor(1, 1) = 1.0;
  m.joint_parents = {-1, 0};
  Points b(3, 3);
  b << 0.1, 0.0, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.3;
  m.blendshapes = {b};
  m.part_labels = {Part::kFace, Part::kHair, Part::kHair};
  return m;
}

}  // namespace

TEST_CASE("equilateral triangle with side 2 eps splits into four triangles with edges eps") {
  RiggedMesh m = testing::single_triangle();
  const double eps = 1.0;
  m.vertices << 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 1.0, std::sqrt(3.0), 0.0;
  const RemeshResult r = split_long_edges(m, eps * (1.0 + 1e-12));
  CHECK(r.changed);
  CHECK(r.mesh.num_faces() == 4);
  CHECK(r.mesh.num_vertices() == 6);
  for (const auto& e : unique_edges(r.mesh.faces))
    CHECK((r.mesh.vertices.row(e[0]) - r.mesh.vertices.row(e[1])).norm() == doctest::Approx(eps).epsilon(1e-12));
}

TEST_CASE("a mesh with all edges below eps is returned unchanged") {
  const RiggedMesh m = testing::planar_grid(4, 0.1);
  const RemeshResult r = split_long_edges(m, 0.5);
  CHECK_FALSE(r.changed);
  CHECK(r.mesh.vertices == m.vertices);
  CHECK(r.mesh.faces == m.faces);
}

TEST_CASE("splitting the mini-rig to half its mean edge keeps the Euler characteristic") {
  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  const double eps = 0.5 * mean_edge_length(rig);
  const RemeshResult r = split_long_edges(rig, eps);
  CHECK(max_edge_length(r.mesh) <= eps);
  CHECK(euler_characteristic(r.mesh) == euler_characteristic(rig));
  CHECK(max_row_sum_error(r.mesh.skin_weights) <= 1e-9);
}

TEST_CASE("fix_orientation flips a reversed neighbour and leaves consistent meshes alone") {
  RiggedMesh m = testing::planar_grid(1, 1.0);
  std::swap(m.faces(1, 1), m.faces(1, 2));
  CHECK_FALSE(is_consistently_oriented(m.faces));
  const RiggedMesh fixed = fix_orientation(m);
  CHECK(is_consistently_oriented(fixed.faces));

  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  CHECK(fix_orientation(rig).faces == rig.faces);
}

TEST_CASE("a Moebius strip is non-orientable") {
  RiggedMesh m;
  m.vertices.resize(5, 3);
  for (int i = 0; i < 5; ++i) {
    const double a = 2.0 * M_PI * i / 5.0;
    m.vertices.row(i) << std::cos(a), std::sin(a), 0.3 * ((i % 2) ? 1.0 : -1.0);
  }
  m.faces.resize(5, 3);
  m.faces << 0, 1, 2, 1, 2, 3, 2, 3, 4, 3, 4, 0, 4, 0, 1;
  testing::attach_single_joint_rig(m);
  try {
    fix_orientation(m);
    FAIL("expected kNonOrientable");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonOrientable);
  }
}

TEST_CASE("remove_invalid_faces drops repeated-index, duplicate and sliver faces") {
  RiggedMesh m = testing::planar_grid(2, 1.0);
  const Eigen::Index f0 = m.num_faces();
  m.faces.conservativeResize(f0 + 2, 3);
  m.faces.row(f0) << 0, 0, 4;                                  // repeated index
  m.faces.row(f0 + 1) << m.faces(2, 1), m.faces(2, 2), m.faces(2, 0);  // same vertex set as face 2
  const FaceCleanup c = remove_invalid_faces(m, 1e-9);
  CHECK(c.changed);
  CHECK(c.mesh.num_faces() == f0);
  CHECK(c.mesh.faces == testing::planar_grid(2, 1.0).faces);

  // A collapsed sliver next to a well-formed face.
  RiggedMesh s = testing::planar_grid(1, 1.0);
  s.vertices.row(2) << 0.5, 0.5 + 2e-12, 0.0;  // face (0, 3, 2) collapses onto the diagonal, area 1e-12
  const FaceCleanup cs = remove_invalid_faces(s, 1e-9);
  CHECK(cs.mesh.num_faces() == 1);
  CHECK(cs.mesh.num_vertices() == 3);
  CHECK(min_face_area(cs.mesh) == doctest::Approx(0.5));
}

TEST_CASE("transfer_attributes interpolates through barycentric anchors") {
  const RiggedMesh old_mesh = two_joint_triangle();
  std::vector<BaryAnchor> anchors;
  for (int v = 0; v < 3; ++v) anchors.push_back({0, Eigen::Vector3d::Unit(v)});
  anchors.push_back({0, Eigen::Vector3d(0.5, 0.5, 0.0)});
  Points nv(4, 3);
  nv.topRows(3) = old_mesh.vertices;
  nv.row(3) = 0.5 * (old_mesh.vertices.row(0) + old_mesh.vertices.row(1));
  Faces nf(2, 3);
  nf << 0, 3, 2, 3, 1, 2;
  const RiggedMesh m = transfer_attributes(old_mesh, nv, nf, anchors);

  for (Eigen::Index v = 0; v < 3; ++v) {
    CHECK(m.skin_weights.row(v) == old_mesh.skin_weights.row(v));
    CHECK(m.blendshapes[0].row(v) == old_mesh.blendshapes[0].row(v));
    CHECK(m.uv.row(v) == old_mesh.uv.row(v));
    CHECK(m.part_labels[static_cast<std::size_t>(v)] == old_mesh.part_labels[static_cast<std::size_t>(v)]);
  }
  CHECK((m.skin_weights.row(3) - 0.5 * (old_mesh.skin_weights.row(0) + old_mesh.skin_weights.row(1))).norm() <= 1e-15);
  CHECK(std::abs(m.skin_weights.row(3).sum() - 1.0) <= 1e-15);
  CHECK((m.blendshapes[0].row(3) - 0.5 * (old_mesh.blendshapes[0].row(0) + old_mesh.blendshapes[0].row(1))).norm() <=
        1e-15);
  CHECK(m.part_labels[3] == Part::kFace);  // tie between vertex 0 and 1 goes to the lower index

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::Vector3d b(u(rng), u(rng), u(rng));
    b /= b.sum();
    std::vector<BaryAnchor> a3{{0, Eigen::Vector3d::UnitX()}, {0, Eigen::Vector3d::UnitY()}, {0, b}};
    Points p(3, 3);
    p.row(0) = old_mesh.vertices.row(0);
    p.row(1) = old_mesh.vertices.row(1);
    p.row(2) = b.transpose() * old_mesh.vertices;
    Faces f(1, 3);
    f << 0, 1, 2;
    const RiggedMesh t = transfer_attributes(old_mesh, p, f, a3);
    // Each weight lies between the smallest and largest corner weight of its joint.
    for (Eigen::Index j = 0; j < 2; ++j) {
      CHECK(t.skin_weights(2, j) >= old_mesh.skin_weights.col(j).minCoeff() - 1e-15);
      CHECK(t.skin_weights(2, j) <= old_mesh.skin_weights.col(j).maxCoeff() + 1e-15);
    }
  }
}

TEST_CASE("refit_joint_regressor reproduces joints") {
  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  const Points joints = regress_joints(rig, rig.vertices);
  const Matrix same = refit_joint_regressor(joints, rig.vertices, 1e-6);
  CHECK((same * rig.vertices - joints).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((same.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);

  const RemeshResult split = split_long_edges(rig, 0.8 * mean_edge_length(rig));
  REQUIRE(split.changed);
  CHECK((regress_joints(split.mesh, split.mesh.vertices) - joints).cwiseAbs().maxCoeff() <= 1e-6);

  // Square system: as many vertices as joints, affinely independent.
  Points tmpl(4, 3);
  tmpl << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1;
  Points target(4, 3);
  target << 0.2, 0.1, 0.3, 0.4, 0.3, 0.1, 0.1, 0.2, 0.2, 0.3, 0.3, 0.3;
  const Matrix r = refit_joint_regressor(target, tmpl, 0.0, 4);
  CHECK((r * tmpl - target).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("topology_correct leaves compliant meshes alone") {
  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  const RemeshResult r = topology_correct(rig, 1.05 * max_edge_length(rig));
  CHECK_FALSE(r.changed);
  CHECK(r.mesh.num_vertices() == rig.num_vertices());
  CHECK(r.mesh.vertices == rig.vertices);
}

TEST_CASE("topology_correct subdivides a stretched hair edge") {
  RiggedMesh m = testing::planar_grid(4, 0.1, Part::kHair);
  const double eps = 0.12;
  m.vertices(24, 0) += 3.0 * eps;  // stretch the top-right corner
  const RemeshResult r = topology_correct(m, eps);
  CHECK(r.changed);
  CHECK(r.mesh.num_vertices() > m.num_vertices());
  CHECK(max_edge_length(r.mesh) <= eps);
  CHECK(max_row_sum_error(r.mesh.skin_weights) <= 1e-9);
  CHECK(is_edge_manifold(r.mesh.faces));
  CHECK(is_consistently_oriented(r.mesh.faces));
}

TEST_CASE("topology_correct repairs a sliver and a flipped face in one call") {
  RiggedMesh m = testing::planar_grid(3, 0.1);
  std::swap(m.faces(4, 1), m.faces(4, 2));
  // Zero-area face on an extra vertex placed on an existing edge.
  const Eigen::Index extra = m.num_vertices();
  m.vertices.conservativeResize(extra + 1, 3);
  m.vertices.row(extra) = 0.5 * (m.vertices.row(0) + m.vertices.row(1));
  m.uv.conservativeResize(extra + 1, 2);
  m.uv.row(extra) = 0.5 * (m.uv.row(0) + m.uv.row(1));
  m.skin_weights.conservativeResize(extra + 1, 2);
  m.skin_weights.row(extra) = 0.5 * (m.skin_weights.row(0) + m.skin_weights.row(1));
  m.joint_regressor.conservativeResize(2, extra + 1);
  m.joint_regressor.col(extra).setZero();
  m.part_labels.push_back(Part::kFace);
  m.faces.conservativeResize(m.num_faces() + 1, 3);
  m.faces.row(m.num_faces() - 1) << 0, extra, 1;

  const RemeshResult r = topology_correct(m, 1.0);
  CHECK(r.changed);
  CHECK(r.mesh.num_faces() == 18);
  CHECK(r.mesh.num_vertices() == 16);
  CHECK(is_edge_manifold(r.mesh.faces));
  CHECK(is_consistently_oriented(r.mesh.faces));
  CHECK(min_face_area(r.mesh) > 1e-3);
  CHECK_FALSE(find_invariant_violation(r.mesh).has_value());
}

TEST_CASE("topology_correct is idempotent") {
  std::mt19937_64 rng(8);
  RiggedMesh m = make_mini_rig(Profile::kDesk);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (Eigen::Index i = 0; i < m.vertices.size(); ++i) m.vertices.data()[i] += u(rng);
  const double eps = mean_edge_length(m);
  const RemeshResult once = topology_correct(m, eps);
  const RemeshResult twice = topology_correct(once.mesh, eps);
  CHECK(once.changed);
  CHECK_FALSE(twice.changed);
  CHECK(twice.mesh.vertices == once.mesh.vertices);
  CHECK(twice.mesh.faces == once.mesh.faces);
}
