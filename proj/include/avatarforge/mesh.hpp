#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "avatarforge/error.hpp"

namespace avatarforge {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using UvCoords = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Part : std::uint8_t { kFace = 0, kHair, kNeck, kEyeball, kEyelid, kOther };
inline constexpr int kNumParts = 6;

std::string_view part_name(Part p);
Part part_from_name(std::string_view name);  // throws kUnknownLabel

/// Triangle mesh plus the rig attributes needed to animate it.
struct RiggedMesh {
  Points vertices;
  Faces faces;
  UvCoords uv;
  Matrix skin_weights;              // N x J, rows on the simplex
  std::vector<Points> blendshapes;  // K_b offsets, each N x 3; shape block first
  Matrix joint_regressor;           // J x N, row-stochastic
  std::vector<Part> part_labels;    // N
  std::vector<int> joint_parents;   // J, -1 for a root

  Eigen::Index num_vertices() const { return vertices.rows(); }
  Eigen::Index num_faces() const { return faces.rows(); }
  Eigen::Index num_joints() const { return skin_weights.cols(); }
  Eigen::Index num_blendshapes() const { return static_cast<Eigen::Index>(blendshapes.size()); }
};

struct MeshIssue {
  std::string what;
};

/// Returns the first violated invariant, or nothing if the mesh is valid.
std::optional<MeshIssue> find_invariant_violation(const RiggedMesh& mesh);

/// Throws Error(kInvariant) on the first violated invariant.
void validate(const RiggedMesh& mesh);

/// Undirected edges, each once, (lo, hi) vertex order, sorted.
std::vector<std::array<int, 2>> unique_edges(const Faces& faces);

bool is_edge_manifold(const Faces& faces);

/// Every interior edge appears once in each direction.
bool is_consistently_oriented(const Faces& faces);

int euler_characteristic(const RiggedMesh& mesh);

double face_area(const Points& v, int a, int b, int c);
double surface_area(const RiggedMesh& mesh);
double mean_edge_length(const RiggedMesh& mesh);
double max_edge_length(const RiggedMesh& mesh);

/// One-ring neighbour lists (sorted, unique).
std::vector<std::vector<int>> vertex_neighbors(const Faces& faces, Eigen::Index num_vertices);

/// Area-weighted vertex normals, unit length (zero for isolated vertices).
Points vertex_normals(const Points& vertices, const Faces& faces);

}  // namespace avatarforge
