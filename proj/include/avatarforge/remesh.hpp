#pragma once

#include <vector>

#include "avatarforge/mesh.hpp"
#include "avatarforge/sparse.hpp"

namespace avatarforge {

/// A point on a mesh face given by barycentric coordinates.
struct BaryAnchor {
  int face = -1;
  Eigen::Vector3d bary = Eigen::Vector3d::Zero();
};

/// A corrected mesh together with how each of its vertices blends the input vertices.
/// provenance.num_rows() == mesh.num_vertices(), provenance.num_cols == input vertex count.
struct RemeshResult {
  RiggedMesh mesh;
  SparseRows provenance;
  bool changed = false;
};

struct RemeshOptions {
  double epsilon = 0.0;        // split threshold; <= 0 disables splitting
  double area_eps = 1e-10;
  int regressor_support = 16;  // k nearest vertices per joint
  double ridge = 1e-6;
  int max_split_passes = 64;
};

/// Midpoint subdivision of every edge longer than epsilon, repeated until none remain.
/// Rig attributes of new vertices are interpolated; the joint regressor is refit.
RemeshResult split_long_edges(const RiggedMesh& mesh, double epsilon);

/// Flip faces so each connected component is consistently wound, keeping the majority winding.
/// Throws kNonOrientable.
RiggedMesh fix_orientation(const RiggedMesh& mesh);

/// Drops faces with repeated indices, area below area_eps, or duplicating an earlier face's vertex set,
/// then prunes unreferenced vertices. `vertex_map[old]` is the new index or -1.
struct FaceCleanup {
  RiggedMesh mesh;
  std::vector<int> vertex_map;
  bool changed = false;
};
FaceCleanup remove_invalid_faces(const RiggedMesh& mesh, double area_eps);

/// Interpolates skin weights, blendshape offsets and uv through `provenance` (rows are convex blends of
/// old vertices); weight rows are renormalized, labels follow the heaviest old vertex (lowest index on ties).
/// The joint regressor is copied only when the vertex set is unchanged; otherwise it is left empty.
RiggedMesh transfer_attributes(const RiggedMesh& old_mesh, const Points& new_vertices, const Faces& new_faces,
                               const SparseRows& provenance);
RiggedMesh transfer_attributes(const RiggedMesh& old_mesh, const Points& new_vertices, const Faces& new_faces,
                               const std::vector<BaryAnchor>& anchors);

/// Affine (rows sum to 1) regressor whose row j is supported on the k vertices of `new_template` nearest to
/// joint j and reproduces `canonical_joints` exactly when the support allows it. Throws kSingular.
Matrix refit_joint_regressor(const Points& canonical_joints, const Points& new_template, double ridge,
                             int support = 16);

/// split -> orient -> remove -> transfer -> refit. Returns the input untouched when nothing needs fixing.
RemeshResult topology_correct(const RiggedMesh& mesh, const RemeshOptions& options);
RemeshResult topology_correct(const RiggedMesh& mesh, double epsilon);

}  // namespace avatarforge
