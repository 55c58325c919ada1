#pragma once

#include <Eigen/Core>
#include <array>
#include <vector>

#include "avatarforge/headmodel.hpp"
#include "avatarforge/image.hpp"
#include "avatarforge/mesh.hpp"
#include "avatarforge/sparse.hpp"

namespace avatarforge {

/// Per-pixel rasterization record. Pixel (y, x) is sampled at its centre (x + 0.5, y + 0.5).
struct RasterMap {
  int height = 0;
  int width = 0;
  std::vector<int> face_id;              // -1 where empty
  std::vector<Eigen::Vector3d> bary;     // perspective-correct
  std::vector<double> depth;             // camera-space z
  std::vector<Eigen::Vector2d> uv;
  std::vector<Eigen::Vector3d> normal;   // unit, world space
  std::vector<Part> part;

  std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * width + x; }
  bool covered(int y, int x) const { return face_id[index(y, x)] >= 0; }
  std::size_t covered_count() const;
};

/// z-buffered perspective rasterization with back-face culling and a top-left fill rule.
/// Faces with a vertex at or behind the camera plane are skipped. Throws kDegenerateCamera.
RasterMap rasterize(const RiggedMesh& mesh, const Camera& camera, int width, int height);

/// Vertex normals with coincident vertices (uv seams) welded.
Points welded_vertex_normals(const Points& vertices, const Faces& faces);

/// Representative (lowest) index of every vertex among vertices with bit-identical positions.
std::vector<int> weld_map(const Points& vertices);

/// Bilinear taps for continuous pixel coordinates on a w x h grid (clamp-to-edge).
std::array<std::pair<std::size_t, double>, 4> bilinear_taps(int width, int height, double px, double py);

/// Rows: one per pixel of `rmap` (empty for background); columns: texels of a tex_h x tex_w texture.
SparseRows texture_sample_plan(const RasterMap& rmap, int tex_width, int tex_height);

Image shade_texture(const RasterMap& rmap, const Image& texture);
Image render_normals(const RasterMap& rmap);
Image render_mask(const RasterMap& rmap);
Image render_parts(const RasterMap& rmap);

/// Which face covers each texel centre of a tex_h x tex_w uv grid, with affine barycentrics.
struct UvRaster {
  int height = 0;
  int width = 0;
  std::vector<int> face_id;
  std::vector<Eigen::Vector3d> bary;
};
UvRaster rasterize_uv(const RiggedMesh& mesh, int tex_width, int tex_height);

/// Inverse-mapping unwrap: rows are texels, columns are source pixels.
struct UnwrapPlan {
  SparseRows rows;
  std::vector<std::uint8_t> valid;
  int tex_height = 0;
  int tex_width = 0;
  std::vector<Eigen::Vector2d> pixel_pos;  // projected position per texel (valid texels only meaningful)
};

/// `rmap` must be rasterize(mesh, camera) at the source resolution.
UnwrapPlan unwrap_plan(const RiggedMesh& mesh, const Camera& camera, const RasterMap& rmap, const UvRaster& uv_raster);
UnwrapPlan unwrap_plan(const RiggedMesh& mesh, const Camera& camera, const RasterMap& rmap, int tex_width,
                       int tex_height);

UvImage unwrap(const Image& source, const RiggedMesh& mesh, const Camera& camera, int tex_width, int tex_height);
UvImage apply_unwrap(const UnwrapPlan& plan, const Image& source);

}  // namespace avatarforge
