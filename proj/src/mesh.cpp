#include "avatarforge/mesh.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>

namespace avatarforge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kInvariant: return "invariant violation";
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kUnsupportedFormat: return "unsupported format";
    case ErrorCode::kTruncated: return "truncated file";
    case ErrorCode::kNonOrientable: return "non-orientable";
    case ErrorCode::kSingular: return "singular system";
    case ErrorCode::kCyclicSkeleton: return "cyclic skeleton";
    case ErrorCode::kDegenerateCamera: return "degenerate camera";
    case ErrorCode::kMissingAnchor: return "missing anchor";
    case ErrorCode::kUnknownLabel: return "unknown label";
    case ErrorCode::kNotScalar: return "not a scalar";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kConfig: return "config error";
  }
  return "error";
}

namespace {
constexpr std::array<std::string_view, kNumParts> kPartNames = {"face",    "hair",   "neck",
                                                               "eyeball", "eyelid", "other"};
}

std::string_view part_name(Part p) { return kPartNames[static_cast<std::size_t>(p)]; }

Part part_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kPartNames.size(); ++i) {
    if (kPartNames[i] == name) return static_cast<Part>(i);
  }
  throw Error(ErrorCode::kUnknownLabel, fmt::format("part label '{}'", name));
}

std::vector<std::array<int, 2>> unique_edges(const Faces& faces) {
  std::vector<std::array<int, 2>> edges;
  edges.reserve(static_cast<std::size_t>(faces.rows()) * 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      int a = faces(f, k), b = faces(f, (k + 1) % 3);
      edges.push_back({std::min(a, b), std::max(a, b)});
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

bool is_edge_manifold(const Faces& faces) {
  std::map<std::array<int, 2>, int> count;
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      int a = faces(f, k), b = faces(f, (k + 1) % 3);
      if (++count[{std::min(a, b), std::max(a, b)}] > 2) return false;
    }
  }
  return true;
}

bool is_consistently_oriented(const Faces& faces) {
  std::set<std::array<int, 2>> directed;
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      if (!directed.insert({faces(f, k), faces(f, (k + 1) % 3)}).second) return false;
    }
  }
  return true;
}

std::optional<MeshIssue> find_invariant_violation(const RiggedMesh& m) {
  const Eigen::Index n = m.num_vertices();
  if (m.uv.rows() != n) return MeshIssue{fmt::format("uv has {} rows, expected {}", m.uv.rows(), n)};
  if (m.skin_weights.rows() != n)
    return MeshIssue{fmt::format("skin_weights has {} rows, expected {}", m.skin_weights.rows(), n)};
  if (static_cast<Eigen::Index>(m.part_labels.size()) != n)
    return MeshIssue{fmt::format("part_labels has {} entries, expected {}", m.part_labels.size(), n)};
  const Eigen::Index j = m.num_joints();
  if (m.joint_regressor.rows() != j || m.joint_regressor.cols() != n)
    return MeshIssue{fmt::format("joint_regressor is {}x{}, expected {}x{}", m.joint_regressor.rows(),
                                 m.joint_regressor.cols(), j, n)};
  if (static_cast<Eigen::Index>(m.joint_parents.size()) != j)
    return MeshIssue{fmt::format("joint_parents has {} entries, expected {}", m.joint_parents.size(), j)};
  for (std::size_t k = 0; k < m.blendshapes.size(); ++k) {
    if (m.blendshapes[k].rows() != n)
      return MeshIssue{fmt::format("blendshape {} has {} rows, expected {}", k, m.blendshapes[k].rows(), n)};
  }
  if (!m.vertices.allFinite()) return MeshIssue{"non-finite vertex coordinate"};
  for (Eigen::Index v = 0; v < n; ++v) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < j; ++c) {
      if (m.skin_weights(v, c) < 0.0) return MeshIssue{fmt::format("negative skin weight at vertex {}", v)};
      s += m.skin_weights(v, c);
    }
    if (std::abs(s - 1.0) > 1e-9) return MeshIssue{fmt::format("skin weight row {} sums to {:.17g}", v, s)};
    if (m.uv(v, 0) < 0.0 || m.uv(v, 0) > 1.0 || m.uv(v, 1) < 0.0 || m.uv(v, 1) > 1.0)
      return MeshIssue{fmt::format("uv of vertex {} outside [0,1]", v)};
  }
  for (Eigen::Index r = 0; r < j; ++r) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) s += m.joint_regressor(r, c);
    if (std::abs(s - 1.0) > 1e-6) return MeshIssue{fmt::format("joint_regressor row {} sums to {:.17g}", r, s)};
  }
  for (Eigen::Index f = 0; f < m.num_faces(); ++f) {
    const int a = m.faces(f, 0), b = m.faces(f, 1), c = m.faces(f, 2);
    for (int idx : {a, b, c}) {
      if (idx < 0 || idx >= n) return MeshIssue{fmt::format("face {} index {} out of range", f, idx)};
    }
    if (a == b || b == c || a == c) return MeshIssue{fmt::format("face {} repeats a vertex", f)};
  }
  if (!is_edge_manifold(m.faces)) return MeshIssue{"mesh is not edge-manifold"};
  for (std::size_t p = 0; p < m.joint_parents.size(); ++p) {
    const int parent = m.joint_parents[p];
    if (parent < -1 || parent >= static_cast<int>(j) || parent == static_cast<int>(p))
      return MeshIssue{fmt::format("joint {} has invalid parent {}", p, parent)};
  }
  return std::nullopt;
}

void validate(const RiggedMesh& mesh) {
  if (auto issue = find_invariant_violation(mesh)) throw Error(ErrorCode::kInvariant, issue->what);
}

int euler_characteristic(const RiggedMesh& mesh) {
  std::vector<char> used(static_cast<std::size_t>(mesh.num_vertices()), 0);
  for (Eigen::Index f = 0; f < mesh.num_faces(); ++f)
    for (int k = 0; k < 3; ++k) used[static_cast<std::size_t>(mesh.faces(f, k))] = 1;
  const auto v = std::count(used.begin(), used.end(), 1);
  return static_cast<int>(v) - static_cast<int>(unique_edges(mesh.faces).size()) +
         static_cast<int>(mesh.num_faces());
}

double face_area(const Points& v, int a, int b, int c) {
  const Eigen::Vector3d e1 = v.row(b) - v.row(a);
  const Eigen::Vector3d e2 = v.row(c) - v.row(a);
  return 0.5 * e1.cross(e2).norm();
}

double surface_area(const RiggedMesh& mesh) {
  double total = 0.0;
  for (Eigen::Index f = 0; f < mesh.num_faces(); ++f)
    total += face_area(mesh.vertices, mesh.faces(f, 0), mesh.faces(f, 1), mesh.faces(f, 2));
  return total;
}

double mean_edge_length(const RiggedMesh& mesh) {
  const auto edges = unique_edges(mesh.faces);
  if (edges.empty()) return 0.0;
  double total = 0.0;
  for (const auto& e : edges) total += (mesh.vertices.row(e[0]) - mesh.vertices.row(e[1])).norm();
  return total / static_cast<double>(edges.size());
}

double max_edge_length(const RiggedMesh& mesh) {
  double best = 0.0;
  for (const auto& e : unique_edges(mesh.faces))
    best = std::max(best, (mesh.vertices.row(e[0]) - mesh.vertices.row(e[1])).norm());
  return best;
}

std::vector<std::vector<int>> vertex_neighbors(const Faces& faces, Eigen::Index num_vertices) {
  std::vector<std::vector<int>> ring(static_cast<std::size_t>(num_vertices));
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int a = faces(f, k), b = faces(f, (k + 1) % 3);
      ring[static_cast<std::size_t>(a)].push_back(b);
      ring[static_cast<std::size_t>(b)].push_back(a);
    }
  }
  for (auto& r : ring) {
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
  }
  return ring;
}

Points vertex_normals(const Points& vertices, const Faces& faces) {
  Points normals = Points::Zero(vertices.rows(), 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const Eigen::Vector3d a = vertices.row(faces(f, 0));
    const Eigen::Vector3d n = (vertices.row(faces(f, 1)).transpose() - a)
                                  .cross(vertices.row(faces(f, 2)).transpose() - a);
    for (int k = 0; k < 3; ++k) normals.row(faces(f, k)) += n.transpose();
  }
  for (Eigen::Index v = 0; v < normals.rows(); ++v) {
    const double len = normals.row(v).norm();
    if (len > 0.0) normals.row(v) /= len;
  }
  return normals;
}

}  // namespace avatarforge
