#include "avatarforge/headmodel.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace avatarforge {

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                       double focal, int width, int height) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  Camera cam;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.translation = -cam.rotation * eye;
  cam.fx = cam.fy = focal;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  return cam;
}

PoseParams PoseParams::zeros(const RiggedMesh& rig, Eigen::Index num_shape) {
  PoseParams p;
  p.shape_coeffs = Eigen::VectorXd::Zero(num_shape);
  p.expr_coeffs = Eigen::VectorXd::Zero(rig.num_blendshapes() - num_shape);
  p.joint_rotations.assign(static_cast<std::size_t>(rig.num_joints()), Eigen::Vector3d::Zero());
  return p;
}

void check_params(const RiggedMesh& rig, const PoseParams& params) {
  const auto total = params.shape_coeffs.size() + params.expr_coeffs.size();
  if (total != rig.num_blendshapes())
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("{} shape + {} expression coefficients for a rig with {} blendshapes",
                            params.shape_coeffs.size(), params.expr_coeffs.size(), rig.num_blendshapes()));
  if (static_cast<Eigen::Index>(params.joint_rotations.size()) != rig.num_joints())
    throw Error(ErrorCode::kShapeMismatch, fmt::format("{} joint rotations for a rig with {} joints",
                                                       params.joint_rotations.size(), rig.num_joints()));
}

Eigen::Matrix3d axis_angle_to_matrix(const Eigen::Vector3d& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

Points add_blendshapes(const Points& base, const std::vector<Points>& blendshapes, Eigen::Index offset,
                       const Eigen::VectorXd& coeffs) {
  if (offset + coeffs.size() > static_cast<Eigen::Index>(blendshapes.size()))
    throw Error(ErrorCode::kShapeMismatch, "more coefficients than blendshapes");
  Points out = base;
  for (Eigen::Index k = 0; k < coeffs.size(); ++k) {
    const Points& b = blendshapes[static_cast<std::size_t>(offset + k)];
    if (b.rows() != base.rows()) throw Error(ErrorCode::kShapeMismatch, "blendshape vertex count");
    if (coeffs[k] != 0.0) out += coeffs[k] * b;
  }
  return out;
}

Points apply_blendshapes(const RiggedMesh& mesh, const PoseParams& params) {
  if (params.shape_coeffs.size() + params.expr_coeffs.size() != mesh.num_blendshapes())
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("{} coefficients for {} blendshapes",
                            params.shape_coeffs.size() + params.expr_coeffs.size(), mesh.num_blendshapes()));
  Points shaped = add_blendshapes(mesh.vertices, mesh.blendshapes, 0, params.shape_coeffs);
  return add_blendshapes(shaped, mesh.blendshapes, params.shape_coeffs.size(), params.expr_coeffs);
}

Points regress_joints(const RiggedMesh& mesh, const Points& shaped_vertices) {
  if (mesh.joint_regressor.cols() != shaped_vertices.rows())
    throw Error(ErrorCode::kShapeMismatch, fmt::format("regressor has {} columns, vertices have {} rows",
                                                       mesh.joint_regressor.cols(), shaped_vertices.rows()));
  return mesh.joint_regressor * shaped_vertices;
}

std::vector<JointTransform> joint_transforms(const Points& joints, std::span<const Eigen::Vector3d> rotations,
                                             std::span<const int> parents) {
  const std::size_t n = parents.size();
  if (rotations.size() != n || static_cast<std::size_t>(joints.rows()) != n)
    throw Error(ErrorCode::kShapeMismatch, "joint, rotation and parent counts differ");
  std::vector<JointTransform> world(n);
  std::vector<int> state(n, 0);  // 0 unvisited, 1 in progress, 2 done

  auto local = [&](std::size_t j) {
    const Eigen::Matrix3d r = axis_angle_to_matrix(rotations[j]);
    const Eigen::Vector3d c = joints.row(static_cast<Eigen::Index>(j)).transpose();
    JointTransform t;
    t.leftCols<3>() = r;
    t.col(3) = c - r * c;
    return t;
  };
  auto compose = [](const JointTransform& a, const JointTransform& b) {
    JointTransform t;
    t.leftCols<3>() = a.leftCols<3>() * b.leftCols<3>();
    t.col(3) = a.leftCols<3>() * b.col(3) + a.col(3);
    return t;
  };

  for (std::size_t root = 0; root < n; ++root) {
    std::vector<std::size_t> chain;
    std::size_t j = root;
    while (state[j] != 2) {
      if (state[j] == 1) throw Error(ErrorCode::kCyclicSkeleton, fmt::format("cycle through joint {}", j));
      state[j] = 1;
      chain.push_back(j);
      const int p = parents[j];
      if (p < 0) break;
      if (static_cast<std::size_t>(p) >= n) throw Error(ErrorCode::kShapeMismatch, "parent index out of range");
      j = static_cast<std::size_t>(p);
    }
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      const int p = parents[*it];
      world[*it] = p < 0 ? local(*it) : compose(world[static_cast<std::size_t>(p)], local(*it));
      state[*it] = 2;
    }
  }
  return world;
}

std::vector<JointTransform> blend_transforms(const Matrix& skin_weights,
                                             std::span<const JointTransform> joint_world) {
  if (static_cast<std::size_t>(skin_weights.cols()) != joint_world.size())
    throw Error(ErrorCode::kShapeMismatch, "skin weight columns differ from joint count");
  std::vector<JointTransform> out(static_cast<std::size_t>(skin_weights.rows()), JointTransform::Zero());
  for (Eigen::Index v = 0; v < skin_weights.rows(); ++v) {
    for (Eigen::Index j = 0; j < skin_weights.cols(); ++j) {
      const double w = skin_weights(v, j);
      if (w != 0.0) out[static_cast<std::size_t>(v)] += w * joint_world[static_cast<std::size_t>(j)];
    }
  }
  return out;
}

Points lbs(const Points& shaped_vertices, const Matrix& skin_weights, const Points& joints,
           std::span<const Eigen::Vector3d> rotations, std::span<const int> parents) {
  if (skin_weights.rows() != shaped_vertices.rows())
    throw Error(ErrorCode::kShapeMismatch, "skin weight rows differ from vertex count");
  bool identity = true;
  for (const auto& r : rotations) identity = identity && r.isZero(0.0);
  const auto world = joint_transforms(joints, rotations, parents);
  if (identity) return shaped_vertices;
  const auto blended = blend_transforms(skin_weights, world);
  Points posed(shaped_vertices.rows(), 3);
  for (Eigen::Index v = 0; v < shaped_vertices.rows(); ++v) {
    const JointTransform& a = blended[static_cast<std::size_t>(v)];
    posed.row(v) = (a.leftCols<3>() * shaped_vertices.row(v).transpose() + a.col(3)).transpose();
  }
  return posed;
}

AnimationMap animation_map(const Points& canonical, const RiggedMesh& rig, const PoseParams& params) {
  check_params(rig, params);
  if (canonical.rows() != rig.num_vertices())
    throw Error(ErrorCode::kShapeMismatch, fmt::format("canonical has {} rows, rig has {} vertices",
                                                       canonical.rows(), rig.num_vertices()));
  AnimationMap map;
  const Points shaped = add_blendshapes(canonical, rig.blendshapes, params.shape_coeffs.size(), params.expr_coeffs);
  map.expression_offsets = shaped - canonical;
  const Points joints = regress_joints(rig, shaped);
  const auto world = joint_transforms(joints, params.joint_rotations, rig.joint_parents);
  map.per_vertex = blend_transforms(rig.skin_weights, world);
  return map;
}

RiggedMesh animate(const Points& canonical, const RiggedMesh& rig, const PoseParams& params) {
  check_params(rig, params);
  if (canonical.rows() != rig.num_vertices())
    throw Error(ErrorCode::kShapeMismatch, fmt::format("canonical has {} rows, rig has {} vertices",
                                                       canonical.rows(), rig.num_vertices()));
  RiggedMesh out = rig;
  const Points shaped = add_blendshapes(canonical, rig.blendshapes, params.shape_coeffs.size(), params.expr_coeffs);
  const Points joints = regress_joints(rig, shaped);
  out.vertices = lbs(shaped, rig.skin_weights, joints, params.joint_rotations, rig.joint_parents);
  return out;
}

namespace {
using nlohmann::json;

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd json_vec(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}
}  // namespace

std::string params_to_json(const PoseParams& p) {
  json j;
  j["shape_coeffs"] = vec_json(p.shape_coeffs);
  j["expr_coeffs"] = vec_json(p.expr_coeffs);
  json rots = json::array();
  for (const auto& r : p.joint_rotations) rots.push_back({r.x(), r.y(), r.z()});
  j["joint_rotations"] = rots;
  json cam;
  cam["fx"] = p.camera.fx;
  cam["fy"] = p.camera.fy;
  cam["cx"] = p.camera.cx;
  cam["cy"] = p.camera.cy;
  json rot = json::array();
  for (int r = 0; r < 3; ++r) rot.push_back({p.camera.rotation(r, 0), p.camera.rotation(r, 1), p.camera.rotation(r, 2)});
  cam["rotation"] = rot;
  cam["translation"] = {p.camera.translation.x(), p.camera.translation.y(), p.camera.translation.z()};
  j["camera"] = cam;
  return j.dump(2) + "\n";
}

PoseParams params_from_json(const std::string& text) {
  PoseParams p;
  try {
    const json j = json::parse(text);
    p.shape_coeffs = json_vec(j.at("shape_coeffs"));
    p.expr_coeffs = json_vec(j.at("expr_coeffs"));
    for (const auto& r : j.at("joint_rotations"))
      p.joint_rotations.emplace_back(r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>());
    const json& cam = j.at("camera");
    p.camera.fx = cam.at("fx").get<double>();
    p.camera.fy = cam.at("fy").get<double>();
    p.camera.cx = cam.at("cx").get<double>();
    p.camera.cy = cam.at("cy").get<double>();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) p.camera.rotation(r, c) = cam.at("rotation").at(r).at(c).get<double>();
    for (int c = 0; c < 3; ++c) p.camera.translation[c] = cam.at("translation").at(c).get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, fmt::format("params: {}", e.what()));
  }
  if (!(p.camera.rotation * p.camera.rotation.transpose()).isApprox(Eigen::Matrix3d::Identity(), 1e-9))
    throw Error(ErrorCode::kInvariant, "camera rotation is not orthonormal");
  return p;
}

void save_params(const PoseParams& params, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  out << params_to_json(params);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("write failed on {}", path.string()));
}

PoseParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return params_from_json(ss.str());
}

}  // namespace avatarforge
