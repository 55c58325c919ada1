#include "avatarforge/raster.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <fmt/format.h>

namespace avatarforge {

std::size_t RasterMap::covered_count() const {
  return static_cast<std::size_t>(std::count_if(face_id.begin(), face_id.end(), [](int f) { return f >= 0; }));
}

namespace {

struct Vec2 {
  double x, y;
};

double edge_fn(const Vec2& a, const Vec2& b, const Vec2& p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

// Shared edges are traversed in opposite directions by the two (orientation-normalised)
// neighbours, so exactly one of them owns sample points lying on the edge.
bool owns_edge(const Vec2& a, const Vec2& b) {
  const double dy = b.y - a.y, dx = b.x - a.x;
  return dy > 0.0 || (dy == 0.0 && dx < 0.0);
}

/// Visits every sample centre (x + 0.5, y + 0.5) inside triangle (p0, p1, p2) under the fill rule,
/// passing screen-space barycentrics for the original vertex order.
template <typename Fn>
void scan_triangle(Vec2 p0, Vec2 p1, Vec2 p2, int width, int height, Fn&& visit) {
  double area = edge_fn(p0, p1, p2);
  if (area == 0.0 || !std::isfinite(area)) return;
  bool swapped = false;
  if (area < 0.0) {
    std::swap(p1, p2);
    area = -area;
    swapped = true;
  }
  const double min_x = std::min({p0.x, p1.x, p2.x}), max_x = std::max({p0.x, p1.x, p2.x});
  const double min_y = std::min({p0.y, p1.y, p2.y}), max_y = std::max({p0.y, p1.y, p2.y});
  const int x0 = std::max(0, static_cast<int>(std::ceil(min_x - 0.5)));
  const int x1 = std::min(width - 1, static_cast<int>(std::floor(max_x - 0.5)));
  const int y0 = std::max(0, static_cast<int>(std::ceil(min_y - 0.5)));
  const int y1 = std::min(height - 1, static_cast<int>(std::floor(max_y - 0.5)));
  const bool own12 = owns_edge(p1, p2), own20 = owns_edge(p2, p0), own01 = owns_edge(p0, p1);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const Vec2 p{x + 0.5, y + 0.5};
      const double e0 = edge_fn(p1, p2, p);
      const double e1 = edge_fn(p2, p0, p);
      const double e2 = edge_fn(p0, p1, p);
      if (e0 < 0.0 || e1 < 0.0 || e2 < 0.0) continue;
      if ((e0 == 0.0 && !own12) || (e1 == 0.0 && !own20) || (e2 == 0.0 && !own01)) continue;
      Eigen::Vector3d l(e0 / area, e1 / area, e2 / area);
      if (swapped) std::swap(l[1], l[2]);
      visit(y, x, l);
    }
  }
}

Part dominant_label(const RiggedMesh& mesh, int face, const Eigen::Vector3d& b) {
  int best = 0;
  for (int k = 1; k < 3; ++k)
    if (b[k] > b[best]) best = k;
  return mesh.part_labels[static_cast<std::size_t>(mesh.faces(face, best))];
}

}  // namespace

std::vector<int> weld_map(const Points& vertices) {
  std::map<std::array<double, 3>, int> first;
  std::vector<int> rep(static_cast<std::size_t>(vertices.rows()));
  for (Eigen::Index v = 0; v < vertices.rows(); ++v) {
    const std::array<double, 3> key{vertices(v, 0), vertices(v, 1), vertices(v, 2)};
    rep[static_cast<std::size_t>(v)] = first.try_emplace(key, static_cast<int>(v)).first->second;
  }
  return rep;
}

Points welded_vertex_normals(const Points& vertices, const Faces& faces) {
  const auto rep = weld_map(vertices);
  Points acc = Points::Zero(vertices.rows(), 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const Eigen::Vector3d a = vertices.row(faces(f, 0));
    const Eigen::Vector3d n = (vertices.row(faces(f, 1)).transpose() - a)
                                  .cross(vertices.row(faces(f, 2)).transpose() - a);
    for (int k = 0; k < 3; ++k) acc.row(rep[static_cast<std::size_t>(faces(f, k))]) += n.transpose();
  }
  Points normals(vertices.rows(), 3);
  for (Eigen::Index v = 0; v < vertices.rows(); ++v) {
    Eigen::Vector3d n = acc.row(rep[static_cast<std::size_t>(v)]);
    const double len = n.norm();
    normals.row(v) = len > 0.0 ? Eigen::RowVector3d((n / len).transpose()) : Eigen::RowVector3d::Zero();
  }
  return normals;
}

RasterMap rasterize(const RiggedMesh& mesh, const Camera& camera, int width, int height) {
  if (camera.fx == 0.0 || camera.fy == 0.0 || !std::isfinite(camera.fx) || !std::isfinite(camera.fy))
    throw Error(ErrorCode::kDegenerateCamera, fmt::format("fx={} fy={}", camera.fx, camera.fy));
  if (width <= 0 || height <= 0) throw Error(ErrorCode::kShapeMismatch, "raster resolution must be positive");

  RasterMap rmap;
  rmap.height = height;
  rmap.width = width;
  const std::size_t n_pix = static_cast<std::size_t>(width) * height;
  rmap.face_id.assign(n_pix, -1);
  rmap.bary.assign(n_pix, Eigen::Vector3d::Zero());
  rmap.depth.assign(n_pix, std::numeric_limits<double>::infinity());
  rmap.uv.assign(n_pix, Eigen::Vector2d::Zero());
  rmap.normal.assign(n_pix, Eigen::Vector3d::Zero());
  rmap.part.assign(n_pix, Part::kOther);

  const Eigen::Index n = mesh.num_vertices();
  Points cam_pts(n, 3);
  for (Eigen::Index v = 0; v < n; ++v) cam_pts.row(v) = camera.to_camera(mesh.vertices.row(v).transpose()).transpose();

  for (Eigen::Index f = 0; f < mesh.num_faces(); ++f) {
    const int ia = mesh.faces(f, 0), ib = mesh.faces(f, 1), ic = mesh.faces(f, 2);
    const Eigen::Vector3d a = cam_pts.row(ia), b = cam_pts.row(ib), c = cam_pts.row(ic);
    if (a.z() <= 1e-9 || b.z() <= 1e-9 || c.z() <= 1e-9) continue;
    const Eigen::Vector3d fn = (b - a).cross(c - a);
    if (fn.dot(a) >= 0.0) continue;  // back-facing or edge-on
    const std::array<double, 3> inv_z{1.0 / a.z(), 1.0 / b.z(), 1.0 / c.z()};
    auto project = [&](const Eigen::Vector3d& p) {
      return Vec2{camera.fx * p.x() / p.z() + camera.cx, camera.fy * p.y() / p.z() + camera.cy};
    };
    scan_triangle(project(a), project(b), project(c), width, height, [&](int y, int x, const Eigen::Vector3d& l) {
      const double w = l[0] * inv_z[0] + l[1] * inv_z[1] + l[2] * inv_z[2];
      const double depth = 1.0 / w;
      const std::size_t i = rmap.index(y, x);
      if (!(depth < rmap.depth[i])) return;
      rmap.depth[i] = depth;
      rmap.face_id[i] = static_cast<int>(f);
      rmap.bary[i] = Eigen::Vector3d(l[0] * inv_z[0], l[1] * inv_z[1], l[2] * inv_z[2]) * depth;
    });
  }

  const Points normals = welded_vertex_normals(mesh.vertices, mesh.faces);
  for (std::size_t i = 0; i < n_pix; ++i) {
    const int f = rmap.face_id[i];
    if (f < 0) {
      rmap.depth[i] = 0.0;
      continue;
    }
    const Eigen::Vector3d& b = rmap.bary[i];
    Eigen::Vector2d uv = Eigen::Vector2d::Zero();
    Eigen::Vector3d nrm = Eigen::Vector3d::Zero();
    for (int k = 0; k < 3; ++k) {
      uv += b[k] * mesh.uv.row(mesh.faces(f, k)).transpose();
      nrm += b[k] * normals.row(mesh.faces(f, k)).transpose();
    }
    rmap.uv[i] = uv;
    const double len = nrm.norm();
    rmap.normal[i] = len > 0.0 ? Eigen::Vector3d(nrm / len) : Eigen::Vector3d::Zero();
    rmap.part[i] = dominant_label(mesh, f, b);
  }
  return rmap;
}

std::array<std::pair<std::size_t, double>, 4> bilinear_taps(int width, int height, double px, double py) {
  const double fx = std::clamp(px - 0.5, 0.0, static_cast<double>(width - 1));
  const double fy = std::clamp(py - 0.5, 0.0, static_cast<double>(height - 1));
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double ax = fx - x0, ay = fy - y0;
  auto idx = [width](int y, int x) { return static_cast<std::size_t>(y) * width + x; };
  return {{{idx(y0, x0), (1.0 - ax) * (1.0 - ay)},
           {idx(y0, x1), ax * (1.0 - ay)},
           {idx(y1, x0), (1.0 - ax) * ay},
           {idx(y1, x1), ax * ay}}};
}

SparseRows texture_sample_plan(const RasterMap& rmap, int tex_width, int tex_height) {
  SparseRows plan;
  plan.num_cols = static_cast<std::size_t>(tex_width) * tex_height;
  for (std::size_t i = 0; i < rmap.face_id.size(); ++i) {
    if (rmap.face_id[i] < 0) {
      plan.add_empty_row();
      continue;
    }
    const auto taps = bilinear_taps(tex_width, tex_height, rmap.uv[i].x() * tex_width, rmap.uv[i].y() * tex_height);
    plan.add_row(taps);
  }
  return plan;
}

Image shade_texture(const RasterMap& rmap, const Image& texture) {
  const SparseRows plan = texture_sample_plan(rmap, texture.width, texture.height);
  Image out(rmap.height, rmap.width, texture.channels);
  apply_rows(plan, texture.data, static_cast<std::size_t>(texture.channels), out.data);
  return out;
}

Image render_normals(const RasterMap& rmap) {
  Image out(rmap.height, rmap.width, 3);
  for (std::size_t i = 0; i < rmap.face_id.size(); ++i) {
    if (rmap.face_id[i] < 0) continue;
    for (int c = 0; c < 3; ++c) out.data[i * 3 + c] = rmap.normal[i][c];
  }
  return out;
}

Image render_mask(const RasterMap& rmap) {
  Image out(rmap.height, rmap.width, 1);
  for (std::size_t i = 0; i < rmap.face_id.size(); ++i) out.data[i] = rmap.face_id[i] >= 0 ? 1.0 : 0.0;
  return out;
}

Image render_parts(const RasterMap& rmap) {
  Image out(rmap.height, rmap.width, kNumParts);
  for (std::size_t i = 0; i < rmap.face_id.size(); ++i) {
    if (rmap.face_id[i] < 0) continue;
    out.data[i * kNumParts + static_cast<std::size_t>(rmap.part[i])] = 1.0;
  }
  return out;
}

UvRaster rasterize_uv(const RiggedMesh& mesh, int tex_width, int tex_height) {
  UvRaster r;
  r.height = tex_height;
  r.width = tex_width;
  const std::size_t n = static_cast<std::size_t>(tex_width) * tex_height;
  r.face_id.assign(n, -1);
  r.bary.assign(n, Eigen::Vector3d::Zero());
  for (Eigen::Index f = 0; f < mesh.num_faces(); ++f) {
    auto at = [&](int k) {
      const auto v = mesh.faces(f, k);
      return Vec2{mesh.uv(v, 0) * tex_width, mesh.uv(v, 1) * tex_height};
    };
    scan_triangle(at(0), at(1), at(2), tex_width, tex_height, [&](int y, int x, const Eigen::Vector3d& l) {
      const std::size_t i = static_cast<std::size_t>(y) * tex_width + x;
      if (r.face_id[i] >= 0) return;
      r.face_id[i] = static_cast<int>(f);
      r.bary[i] = l;
    });
  }
  return r;
}

UnwrapPlan unwrap_plan(const RiggedMesh& mesh, const Camera& camera, const RasterMap& rmap,
                       const UvRaster& uv_raster) {
  UnwrapPlan plan;
  plan.tex_height = uv_raster.height;
  plan.tex_width = uv_raster.width;
  plan.rows.num_cols = static_cast<std::size_t>(rmap.width) * rmap.height;
  const std::size_t n_tex = uv_raster.face_id.size();
  plan.valid.assign(n_tex, 0);
  plan.pixel_pos.assign(n_tex, Eigen::Vector2d::Zero());

  auto shares_vertex = [&](int f, int g) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        if (mesh.faces(f, i) == mesh.faces(g, j)) return true;
    return false;
  };
  constexpr double kMaxTapUvDistance = 0.1;

  for (std::size_t t = 0; t < n_tex; ++t) {
    const int f = uv_raster.face_id[t];
    if (f < 0) {
      plan.rows.add_empty_row();
      continue;
    }
    const Eigen::Vector3d& b = uv_raster.bary[t];
    Eigen::Vector3d p = Eigen::Vector3d::Zero();
    Eigen::Vector2d uv = Eigen::Vector2d::Zero();
    for (int k = 0; k < 3; ++k) {
      p += b[k] * mesh.vertices.row(mesh.faces(f, k)).transpose();
      uv += b[k] * mesh.uv.row(mesh.faces(f, k)).transpose();
    }
    const Eigen::Vector3d pc = camera.to_camera(p);
    bool ok = pc.z() > 1e-9;
    double px = 0.0, py = 0.0;
    if (ok) {
      px = camera.fx * pc.x() / pc.z() + camera.cx;
      py = camera.fy * pc.y() / pc.z() + camera.cy;
      const int ix = static_cast<int>(std::floor(px)), iy = static_cast<int>(std::floor(py));
      ok = ix >= 0 && iy >= 0 && ix < rmap.width && iy < rmap.height && rmap.face_id[rmap.index(iy, ix)] == f;
    }
    if (!ok) {
      plan.rows.add_empty_row();
      continue;
    }
    const auto taps = bilinear_taps(rmap.width, rmap.height, px, py);
    for (const auto& [pix, w] : taps) {
      if (w == 0.0) continue;
      const int g = rmap.face_id[pix];
      if (g < 0 || !(g == f || shares_vertex(f, g)) || (rmap.uv[pix] - uv).norm() > kMaxTapUvDistance) {
        ok = false;
        break;
      }
    }
    if (!ok) {
      plan.rows.add_empty_row();
      continue;
    }
    plan.rows.add_row(taps);
    plan.valid[t] = 1;
    plan.pixel_pos[t] = Eigen::Vector2d(px, py);
  }
  return plan;
}

UnwrapPlan unwrap_plan(const RiggedMesh& mesh, const Camera& camera, const RasterMap& rmap, int tex_width,
                       int tex_height) {
  return unwrap_plan(mesh, camera, rmap, rasterize_uv(mesh, tex_width, tex_height));
}

UvImage apply_unwrap(const UnwrapPlan& plan, const Image& source) {
  UvImage out(plan.tex_height, plan.tex_width, source.channels);
  apply_rows(plan.rows, source.data, static_cast<std::size_t>(source.channels), out.values.data);
  out.valid = plan.valid;
  return out;
}

UvImage unwrap(const Image& source, const RiggedMesh& mesh, const Camera& camera, int tex_width, int tex_height) {
  const RasterMap rmap = rasterize(mesh, camera, source.width, source.height);
  return apply_unwrap(unwrap_plan(mesh, camera, rmap, tex_width, tex_height), source);
}

}  // namespace avatarforge
