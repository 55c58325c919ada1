#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "avatarforge/mesh.hpp"

namespace avatarforge {

/// Pinhole camera. Camera-space point: x_cam = rotation * x_world + translation, looking down +z.
/// Pixel coordinates: u = fx * x/z + cx, v = fy * y/z + cy, pixel (i, j) centred at (j + 0.5, i + 0.5).
struct Camera {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const { return rotation * world + translation; }
  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

  /// Camera at `eye` looking at `target`, image y axis pointing along -up.
  static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                        double focal, int width, int height);
};

struct PoseParams {
  Eigen::VectorXd shape_coeffs;
  Eigen::VectorXd expr_coeffs;
  std::vector<Eigen::Vector3d> joint_rotations;  // axis-angle, radians
  Camera camera;

  /// Zero coefficients and rotations for a rig, shape block of size `num_shape`.
  static PoseParams zeros(const RiggedMesh& rig, Eigen::Index num_shape);
};

/// Throws kShapeMismatch when coefficient counts or joint counts disagree with the rig.
void check_params(const RiggedMesh& rig, const PoseParams& params);

Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& axis_angle);

/// template + sum_k c_k B_k over all blendshapes, c = [shape, expr].
Points apply_blendshapes(const RiggedMesh& mesh, const PoseParams& params);

/// base + sum_k c_k B_{offset+k}.
Points add_blendshapes(const Points& base, const std::vector<Points>& blendshapes, Eigen::Index offset,
                       const Eigen::VectorXd& coeffs);

Points regress_joints(const RiggedMesh& mesh, const Points& shaped_vertices);

using JointTransform = Eigen::Matrix<double, 3, 4>;

/// World transforms G_j = prod over the chain of T(j_k) R_k T(-j_k). Throws kCyclicSkeleton.
std::vector<JointTransform> joint_transforms(const Points& joints, std::span<const Eigen::Vector3d> rotations,
                                             std::span<const int> parents);

/// Linear blend skinning: v' = sum_j w_vj G_j v.
Points lbs(const Points& shaped_vertices, const Matrix& skin_weights, const Points& joints,
           std::span<const Eigen::Vector3d> rotations, std::span<const int> parents);

/// Per-vertex blended transform sum_j w_vj G_j (posed = A * [v; 1]).
std::vector<JointTransform> blend_transforms(const Matrix& skin_weights, std::span<const JointTransform> joint_world);

/// canonical (template + shape + dV) -> expression blendshapes -> LBS. Shares topology with `rig`.
RiggedMesh animate(const Points& canonical, const RiggedMesh& rig, const PoseParams& params);

/// Per-vertex affine map used by `animate` for a given canonical shape (expression offsets folded in).
struct AnimationMap {
  std::vector<JointTransform> per_vertex;  // posed_v = A_v [canonical_v + expr_v; 1]
  Points expression_offsets;
};
AnimationMap animation_map(const Points& canonical, const RiggedMesh& rig, const PoseParams& params);

void save_params(const PoseParams& params, const std::filesystem::path& path);
PoseParams load_params(const std::filesystem::path& path);
std::string params_to_json(const PoseParams& params);
PoseParams params_from_json(const std::string& text);

}  // namespace avatarforge
