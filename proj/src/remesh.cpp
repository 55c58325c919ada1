#include "avatarforge/remesh.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>
#include <unordered_map>

#include <fmt/format.h>

namespace avatarforge {

namespace {

using Blend = std::vector<std::pair<std::size_t, double>>;  // sorted by column

Blend mix_half(const Blend& a, const Blend& b) {
  Blend out;
  out.reserve(a.size() + b.size());
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) {
      out.emplace_back(a[i].first, 0.5 * a[i].second);
      ++i;
    } else if (i == a.size() || b[j].first < a[i].first) {
      out.emplace_back(b[j].first, 0.5 * b[j].second);
      ++j;
    } else {
      out.emplace_back(a[i].first, 0.5 * a[i].second + 0.5 * b[j].second);
      ++i;
      ++j;
    }
  }
  return out;
}

std::uint64_t edge_key(int a, int b) {
  const auto lo = static_cast<std::uint64_t>(std::min(a, b)), hi = static_cast<std::uint64_t>(std::max(a, b));
  return (lo << 32) | hi;
}

using Tri = std::array<int, 3>;

std::vector<Tri> to_tris(const Faces& faces) {
  std::vector<Tri> tris(static_cast<std::size_t>(faces.rows()));
  for (Eigen::Index f = 0; f < faces.rows(); ++f) tris[static_cast<std::size_t>(f)] = {faces(f, 0), faces(f, 1), faces(f, 2)};
  return tris;
}

Faces to_faces(const std::vector<Tri>& tris) {
  Faces faces(static_cast<Eigen::Index>(tris.size()), 3);
  for (std::size_t f = 0; f < tris.size(); ++f)
    faces.row(static_cast<Eigen::Index>(f)) << tris[f][0], tris[f][1], tris[f][2];
  return faces;
}

Tri rotate(const Tri& t, int k) { return {t[k % 3], t[(k + 1) % 3], t[(k + 2) % 3]}; }

/// Splits edges longer than `threshold` until none remain. Returns whether anything changed.
bool split_passes(std::vector<Eigen::Vector3d>& pos, std::vector<Blend>& blend, std::vector<Tri>& tris,
                  double threshold, int max_passes) {
  bool changed = false;
  for (int pass = 0; pass < max_passes; ++pass) {
    std::vector<std::uint64_t> long_edges;
    for (const Tri& t : tris) {
      for (int k = 0; k < 3; ++k) {
        const int a = t[k], b = t[(k + 1) % 3];
        if (a != b && (pos[a] - pos[b]).norm() > threshold) long_edges.push_back(edge_key(a, b));
      }
    }
    if (long_edges.empty()) return changed;
    changed = true;
    std::sort(long_edges.begin(), long_edges.end());
    long_edges.erase(std::unique(long_edges.begin(), long_edges.end()), long_edges.end());

    std::unordered_map<std::uint64_t, int> midpoint;
    for (std::uint64_t key : long_edges) {
      const int a = static_cast<int>(key >> 32), b = static_cast<int>(key & 0xffffffffu);
      midpoint.emplace(key, static_cast<int>(pos.size()));
      pos.push_back(0.5 * (pos[a] + pos[b]));
      blend.push_back(mix_half(blend[a], blend[b]));
    }
    auto mid = [&](int a, int b) {
      const auto it = midpoint.find(edge_key(a, b));
      return it == midpoint.end() ? -1 : it->second;
    };

    std::vector<Tri> next;
    next.reserve(tris.size() * 2);
    for (const Tri& t : tris) {
      const std::array<int, 3> m = {mid(t[0], t[1]), mid(t[1], t[2]), mid(t[2], t[0])};
      const int count = (m[0] >= 0) + (m[1] >= 0) + (m[2] >= 0);
      if (count == 0) {
        next.push_back(t);
      } else if (count == 3) {
        next.push_back({t[0], m[0], m[2]});
        next.push_back({m[0], t[1], m[1]});
        next.push_back({m[2], m[1], t[2]});
        next.push_back({m[0], m[1], m[2]});
      } else if (count == 1) {
        const int k = m[0] >= 0 ? 0 : (m[1] >= 0 ? 1 : 2);
        const Tri r = rotate(t, k);
        const int mab = m[k];
        next.push_back({r[0], mab, r[2]});
        next.push_back({mab, r[1], r[2]});
      } else {
        // Rotate so the split edges are (a,b) and (b,c).
        const int unsplit = m[0] < 0 ? 0 : (m[1] < 0 ? 1 : 2);
        const int k = (unsplit + 1) % 3;
        const Tri r = rotate(t, k);
        const int mab = m[k], mbc = m[(k + 1) % 3];
        next.push_back({mab, r[1], mbc});
        if ((pos[r[0]] - pos[mbc]).norm() <= (pos[mab] - pos[r[2]]).norm()) {
          next.push_back({r[0], mab, mbc});
          next.push_back({r[0], mbc, r[2]});
        } else {
          next.push_back({r[0], mab, r[2]});
          next.push_back({mab, mbc, r[2]});
        }
      }
    }
    tris = std::move(next);
  }
  return changed;
}

/// Flips faces to a consistent winding per component; returns whether any face flipped.
bool orient(std::vector<Tri>& tris) {
  std::unordered_map<std::uint64_t, std::vector<int>> edge_faces;
  for (std::size_t f = 0; f < tris.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int a = tris[f][k], b = tris[f][(k + 1) % 3];
      if (a != b) edge_faces[edge_key(a, b)].push_back(static_cast<int>(f));
    }
  }
  auto has_directed = [&](int f, int a, int b) {
    const Tri& t = tris[static_cast<std::size_t>(f)];
    for (int k = 0; k < 3; ++k)
      if (t[k] == a && t[(k + 1) % 3] == b) return true;
    return false;
  };

  std::vector<int> flip(tris.size(), -1);
  bool changed = false;
  for (std::size_t seed = 0; seed < tris.size(); ++seed) {
    if (flip[seed] >= 0) continue;
    std::vector<int> component{static_cast<int>(seed)};
    flip[seed] = 0;
    std::deque<int> queue{static_cast<int>(seed)};
    while (!queue.empty()) {
      const int f = queue.front();
      queue.pop_front();
      const Tri& t = tris[static_cast<std::size_t>(f)];
      for (int k = 0; k < 3; ++k) {
        const int a = t[k], b = t[(k + 1) % 3];
        if (a == b) continue;
        for (int g : edge_faces[edge_key(a, b)]) {
          if (g == f) continue;
          // Consistent neighbours traverse the shared edge in the opposite direction.
          const int want = flip[static_cast<std::size_t>(f)] ^ (has_directed(g, a, b) ? 1 : 0);
          if (flip[static_cast<std::size_t>(g)] < 0) {
            flip[static_cast<std::size_t>(g)] = want;
            component.push_back(g);
            queue.push_back(g);
          } else if (flip[static_cast<std::size_t>(g)] != want) {
            throw Error(ErrorCode::kNonOrientable,
                        fmt::format("component containing face {} is not orientable", seed));
          }
        }
      }
    }
    std::size_t flipped = 0;
    for (int f : component) flipped += static_cast<std::size_t>(flip[static_cast<std::size_t>(f)]);
    const bool invert = 2 * flipped > component.size();
    for (int f : component) {
      if ((flip[static_cast<std::size_t>(f)] == 1) != invert) {
        std::swap(tris[static_cast<std::size_t>(f)][1], tris[static_cast<std::size_t>(f)][2]);
        changed = true;
      }
    }
  }
  return changed;
}

/// Keeps valid faces; returns whether any face was dropped.
bool drop_invalid(const std::vector<Eigen::Vector3d>& pos, std::vector<Tri>& tris, double area_eps) {
  std::vector<Tri> kept;
  kept.reserve(tris.size());
  std::map<Tri, int> seen;
  for (const Tri& t : tris) {
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
    const double area = 0.5 * (pos[t[1]] - pos[t[0]]).cross(pos[t[2]] - pos[t[0]]).norm();
    if (!(area >= area_eps)) continue;
    Tri sorted = t;
    std::sort(sorted.begin(), sorted.end());
    if (!seen.emplace(sorted, 1).second) continue;
    kept.push_back(t);
  }
  const bool changed = kept.size() != tris.size();
  tris = std::move(kept);
  return changed;
}

/// Renumbers referenced vertices in order of first index; returns old -> new (or -1).
std::vector<int> compact(std::vector<Tri>& tris, std::size_t num_vertices) {
  std::vector<char> used(num_vertices, 0);
  for (const Tri& t : tris)
    for (int v : t) used[static_cast<std::size_t>(v)] = 1;
  std::vector<int> map(num_vertices, -1);
  int next = 0;
  for (std::size_t v = 0; v < num_vertices; ++v)
    if (used[v]) map[v] = next++;
  for (Tri& t : tris)
    for (int& v : t) v = map[static_cast<std::size_t>(v)];
  return map;
}

std::vector<Eigen::Vector3d> to_vec(const Points& p) {
  std::vector<Eigen::Vector3d> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) out[static_cast<std::size_t>(i)] = p.row(i).transpose();
  return out;
}

bool is_identity(const SparseRows& rows) {
  if (rows.num_rows() != rows.num_cols) return false;
  for (std::size_t r = 0; r < rows.num_rows(); ++r) {
    if (rows.row_end(r) - rows.row_begin(r) != 1) return false;
    if (rows.cols[rows.row_begin(r)] != r || rows.weights[rows.row_begin(r)] != 1.0) return false;
  }
  return true;
}

Points apply_points(const SparseRows& rows, const Points& src) {
  Points out(static_cast<Eigen::Index>(rows.num_rows()), 3);
  apply_rows(rows, std::span<const double>(src.data(), static_cast<std::size_t>(src.size())), 3,
             std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
  return out;
}

}  // namespace

RiggedMesh transfer_attributes(const RiggedMesh& old_mesh, const Points& new_vertices, const Faces& new_faces,
                               const SparseRows& provenance) {
  const auto n_new = static_cast<Eigen::Index>(provenance.num_rows());
  if (new_vertices.rows() != n_new || provenance.num_cols != static_cast<std::size_t>(old_mesh.num_vertices()))
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("provenance is {}x{}, expected {}x{}", provenance.num_rows(), provenance.num_cols,
                            new_vertices.rows(), old_mesh.num_vertices()));
  RiggedMesh out;
  out.vertices = new_vertices;
  out.faces = new_faces;
  out.joint_parents = old_mesh.joint_parents;
  out.uv = UvCoords::Zero(n_new, 2);
  out.skin_weights = Matrix::Zero(n_new, old_mesh.num_joints());
  out.blendshapes.assign(old_mesh.blendshapes.size(), Points::Zero(n_new, 3));
  out.part_labels.resize(static_cast<std::size_t>(n_new));

  for (Eigen::Index r = 0; r < n_new; ++r) {
    const std::size_t b = provenance.row_begin(static_cast<std::size_t>(r));
    const std::size_t e = provenance.row_end(static_cast<std::size_t>(r));
    if (b == e) throw Error(ErrorCode::kMissingAnchor, fmt::format("vertex {} has no anchor", r));
    std::size_t heaviest = provenance.cols[b];
    double best = -1.0;
    for (std::size_t k = b; k < e; ++k) {
      const auto src = static_cast<Eigen::Index>(provenance.cols[k]);
      const double w = provenance.weights[k];
      out.uv.row(r) += w * old_mesh.uv.row(src);
      out.skin_weights.row(r) += w * old_mesh.skin_weights.row(src);
      for (std::size_t s = 0; s < old_mesh.blendshapes.size(); ++s)
        out.blendshapes[s].row(r) += w * old_mesh.blendshapes[s].row(src);
      if (w > best || (w == best && provenance.cols[k] < heaviest)) {
        best = w;
        heaviest = provenance.cols[k];
      }
    }
    out.part_labels[static_cast<std::size_t>(r)] = old_mesh.part_labels[heaviest];
    const double total = out.skin_weights.row(r).sum();
    if (total > 0.0) out.skin_weights.row(r) /= total;
    out.uv.row(r) = out.uv.row(r).cwiseMax(0.0).cwiseMin(1.0);
  }
  if (is_identity(provenance))
    out.joint_regressor = old_mesh.joint_regressor;
  else
    out.joint_regressor = Matrix::Zero(old_mesh.joint_regressor.rows(), n_new);
  return out;
}

RiggedMesh transfer_attributes(const RiggedMesh& old_mesh, const Points& new_vertices, const Faces& new_faces,
                               const std::vector<BaryAnchor>& anchors) {
  SparseRows rows;
  rows.num_cols = static_cast<std::size_t>(old_mesh.num_vertices());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const BaryAnchor& a = anchors[i];
    if (a.face < 0 || a.face >= old_mesh.num_faces())
      throw Error(ErrorCode::kMissingAnchor, fmt::format("vertex {} has no anchor face", i));
    std::map<std::size_t, double> acc;
    for (int k = 0; k < 3; ++k)
      if (a.bary[k] != 0.0) acc[static_cast<std::size_t>(old_mesh.faces(a.face, k))] += a.bary[k];
    const Blend row(acc.begin(), acc.end());
    rows.add_row(row);
  }
  return transfer_attributes(old_mesh, new_vertices, new_faces, rows);
}

Matrix refit_joint_regressor(const Points& canonical_joints, const Points& new_template, double ridge, int support) {
  const Eigen::Index n = new_template.rows();
  const Eigen::Index num_joints = canonical_joints.rows();
  if (n < num_joints)
    throw Error(ErrorCode::kShapeMismatch, fmt::format("{} vertices cannot support {} joints", n, num_joints));
  Matrix out = Matrix::Zero(num_joints, n);

  for (Eigen::Index j = 0; j < num_joints; ++j) {
    const Eigen::Vector3d target = canonical_joints.row(j).transpose();
    std::vector<std::pair<double, Eigen::Index>> order(static_cast<std::size_t>(n));
    for (Eigen::Index v = 0; v < n; ++v)
      order[static_cast<std::size_t>(v)] = {(new_template.row(v).transpose() - target).squaredNorm(), v};
    std::sort(order.begin(), order.end());

    Eigen::Vector4d rhs(target.x(), target.y(), target.z(), 1.0);
    // Widen the support when the nearest vertices cannot reproduce the joint (e.g. all coplanar off-target).
    for (Eigen::Index k = std::min<Eigen::Index>(support, n);; k = std::min<Eigen::Index>(2 * k, n)) {
      Eigen::MatrixXd a(4, k);
      for (Eigen::Index c = 0; c < k; ++c) {
        const Eigen::Index v = order[static_cast<std::size_t>(c)].second;
        a.col(c) << new_template(v, 0), new_template(v, 1), new_template(v, 2), 1.0;
      }
      const Eigen::Matrix4d normal = a * a.transpose() + ridge * Eigen::Matrix4d::Identity();
      const Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(normal);
      const double cond = eig.eigenvalues().maxCoeff() / eig.eigenvalues().minCoeff();
      if (!(eig.eigenvalues().minCoeff() > 0.0) || !std::isfinite(cond) || cond > 1e15)
        throw Error(ErrorCode::kSingular, fmt::format("joint {}: condition estimate {:.3e}", j, cond));
      const Eigen::LDLT<Eigen::Matrix4d> solver(normal);

      // Iterated Tikhonov converges to the minimum-norm exact solution when one exists.
      Eigen::VectorXd w = Eigen::VectorXd::Zero(k);
      Eigen::Vector4d residual = rhs;
      for (int it = 0; it < 500 && residual.cwiseAbs().maxCoeff() > 1e-13; ++it) {
        w += a.transpose() * solver.solve(residual);
        residual = rhs - a * w;
      }
      if (residual.cwiseAbs().maxCoeff() <= 1e-9) {
        for (Eigen::Index c = 0; c < k; ++c) out(j, order[static_cast<std::size_t>(c)].second) = w[c];
        break;
      }
      if (k == n)
        throw Error(ErrorCode::kSingular,
                    fmt::format("joint {}: residual {:.3e} at condition estimate {:.3e}", j,
                                residual.cwiseAbs().maxCoeff(), cond));
    }
  }
  return out;
}

RiggedMesh fix_orientation(const RiggedMesh& mesh) {
  std::vector<Tri> tris = to_tris(mesh.faces);
  if (!orient(tris)) return mesh;
  RiggedMesh out = mesh;
  out.faces = to_faces(tris);
  return out;
}

FaceCleanup remove_invalid_faces(const RiggedMesh& mesh, double area_eps) {
  std::vector<Tri> tris = to_tris(mesh.faces);
  const bool dropped = drop_invalid(to_vec(mesh.vertices), tris, area_eps);
  FaceCleanup out;
  out.vertex_map = compact(tris, static_cast<std::size_t>(mesh.num_vertices()));
  SparseRows select;
  select.num_cols = static_cast<std::size_t>(mesh.num_vertices());
  for (std::size_t v = 0; v < out.vertex_map.size(); ++v)
    if (out.vertex_map[v] >= 0) select.add_row({{v, 1.0}});
  out.changed = dropped || select.num_rows() != select.num_cols;
  if (!out.changed) {
    out.mesh = mesh;
    return out;
  }
  out.mesh = transfer_attributes(mesh, apply_points(select, mesh.vertices), to_faces(tris), select);
  if (select.num_rows() != select.num_cols) {
    const Points joints = mesh.joint_regressor * mesh.vertices;
    out.mesh.joint_regressor = refit_joint_regressor(joints, out.mesh.vertices, 1e-6);
  }
  return out;
}

RemeshResult split_long_edges(const RiggedMesh& mesh, double epsilon) {
  const RemeshOptions options;
  std::vector<Eigen::Vector3d> pos = to_vec(mesh.vertices);
  std::vector<Blend> blend(pos.size());
  for (std::size_t v = 0; v < pos.size(); ++v) blend[v] = {{v, 1.0}};
  std::vector<Tri> tris = to_tris(mesh.faces);
  RemeshResult result;
  result.changed = epsilon > 0.0 && split_passes(pos, blend, tris, epsilon * (1.0 + 1e-9), options.max_split_passes);
  result.provenance.num_cols = static_cast<std::size_t>(mesh.num_vertices());
  for (const Blend& b : blend) result.provenance.add_row(b);
  if (!result.changed) {
    result.mesh = mesh;
    return result;
  }
  result.mesh = transfer_attributes(mesh, apply_points(result.provenance, mesh.vertices), to_faces(tris),
                                    result.provenance);
  result.mesh.joint_regressor = refit_joint_regressor(mesh.joint_regressor * mesh.vertices, result.mesh.vertices,
                                                      options.ridge, options.regressor_support);
  return result;
}

RemeshResult topology_correct(const RiggedMesh& mesh, const RemeshOptions& options) {
  const auto n_in = static_cast<std::size_t>(mesh.num_vertices());
  std::vector<Eigen::Vector3d> pos = to_vec(mesh.vertices);
  std::vector<Blend> blend(n_in);
  for (std::size_t v = 0; v < n_in; ++v) blend[v] = {{v, 1.0}};
  std::vector<Tri> tris = to_tris(mesh.faces);

  bool changed = false;
  if (options.epsilon > 0.0)
    changed |= split_passes(pos, blend, tris, options.epsilon * (1.0 + 1e-9), options.max_split_passes);
  // Invalid faces go first so degenerate or duplicated faces cannot poison winding propagation.
  changed |= drop_invalid(pos, tris, options.area_eps);
  changed |= orient(tris);
  const std::vector<int> map = compact(tris, pos.size());

  RemeshResult result;
  result.provenance.num_cols = n_in;
  for (std::size_t v = 0; v < map.size(); ++v)
    if (map[v] >= 0) result.provenance.add_row(blend[v]);
  changed |= result.provenance.num_rows() != n_in;
  result.changed = changed;
  if (!changed) {
    result.mesh = mesh;
    result.provenance = SparseRows::identity(n_in);
    return result;
  }

  result.mesh = transfer_attributes(mesh, apply_points(result.provenance, mesh.vertices), to_faces(tris),
                                    result.provenance);
  if (!is_identity(result.provenance)) {
    result.mesh.joint_regressor = refit_joint_regressor(mesh.joint_regressor * mesh.vertices, result.mesh.vertices,
                                                        options.ridge, options.regressor_support);
  }
  return result;
}

RemeshResult topology_correct(const RiggedMesh& mesh, double epsilon) {
  RemeshOptions options;
  options.epsilon = epsilon;
  return topology_correct(mesh, options);
}

}  // namespace avatarforge
