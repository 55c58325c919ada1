#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "avatarforge/config.hpp"
#include "avatarforge/headmodel.hpp"
#include "avatarforge/image.hpp"
#include "avatarforge/losses.hpp"
#include "avatarforge/neural.hpp"
#include "avatarforge/raster.hpp"
#include "avatarforge/remesh.hpp"

namespace avatarforge {

/// Every learnable block of the reconstruction network, registered under "pipeline.*".
struct Blocks {
  ad::ParamStore params;
  nn::PatchEncoder encoder;
  nn::Mlp vertex_embed;
  Tensor tex_tokens;  // token_grid^2 x dim
  Tensor token_pos;   // added to the image tokens before attention
  std::vector<nn::CrossAttention> attn;  // shared by the vertex and texture branches
  nn::TexDecoder decoder;
  nn::Conv err_phi1, err_phi2;
  nn::Mlp psi;
  nn::VecGru geo_gru;
  nn::Linear dv_head;
  nn::Conv tex_phi1, tex_phi2;
  nn::ConvGru tex_gru;
  nn::Conv tex_head;  // no bias

  static std::unique_ptr<Blocks> create(const Config& config);
};

struct Features {
  Tensor f_i;  // N_patch x C
  Tensor f_v;  // N x C
  Tensor f_t;  // token_grid^2 x C
};

/// Image tokens, vertex features of `vertices`, and texture tokens, through the shared attention stack.
Features extract_features(const Tensor& image, const Points& vertices, const Blocks& blocks, const Config& config);

/// Clamps each component of the accumulated displacement to [-delta(part), +delta(part)].
Tensor clip_deformation(const Tensor& displacement, const std::vector<Part>& labels, const ClipRanges& delta);
Points clip_deformation(const Points& displacement, const std::vector<Part>& labels, const ClipRanges& delta);

/// Differentiable render of a canonical mesh whose vertex values are `vertices`.
struct Render {
  RiggedMesh posed;
  RasterMap rmap;
  Tensor image;    // H x W x 3, texture sampled at each covered pixel
  Tensor normals;  // H x W x 3, unit world-space normals, zero on background
  Image mask;      // H x W x 1
  Image parts;     // H x W x kNumParts
};
Render render_mesh(const RiggedMesh& canonical, const Tensor& vertices, const Tensor& texture,
                   const PoseParams& params, int resolution);
/// Value-only render of `canonical` at its stored vertices with an H x W x 3 texture.
Render render_mesh(const RiggedMesh& canonical, const Image& texture, const PoseParams& params, int resolution);

/// Pixel-to-texel resampling of the current render and its projection to the vertices.
struct ErrorFeatures {
  Tensor f_d;    // G x G x C_e, G = texture grid
  Tensor f_d2v;  // N x C_e
  std::vector<std::uint8_t> valid;  // G x G
};
/// `render` must come from render_mesh of `canonical` under `camera`.
ErrorFeatures error_features(const Tensor& input, const Render& render, const RiggedMesh& canonical,
                             const Camera& camera, const Blocks& blocks, const Config& config);

struct PipelineState {
  int t = 0;
  RiggedMesh mesh;      // canonical V_t with rig attributes
  Points anchor;        // template position every vertex is clipped against
  Tensor displacement;  // V_t - anchor, per-part bounded
  Tensor vertices;      // anchor + displacement
  Tensor delta_v;       // last raw head output
  Tensor h_geo;         // N x C_g
  Tensor f_v;           // N x C, follows the mesh through remeshing
  Tensor h_tex;         // G x G x C_h
  Tensor base_logits;   // decoder output Z_0
  Tensor logits;        // Z_t = Z_0 + upsample(head(h_tex)), H_a x W_a x 3
  Tensor texture;       // sigmoid(logits)
  Tensor f_a;           // H_a x W_a x C_a
  Tensor unwrapped;     // U_t, H_a x W_a x 3 (zero where invalid)
  std::vector<std::uint8_t> unwrapped_valid;
  ErrorFeatures err;
};

struct StepContext {
  const Tensor& input;
  const PoseParams& params;
  const Blocks& blocks;
  const Config& config;
  double epsilon;
};

/// GRU update of the vertex hidden state, clipped accumulation of the head output, topology correction.
void deform_step(PipelineState& state, const StepContext& ctx);

/// Convolutional GRU update of the texture hidden state and the texture logits.
void texture_step(PipelineState& state, const StepContext& ctx);

/// Plain-value snapshot of one iteration, kept for invariant checks and reporting.
struct IterationRecord {
  int t = 0;
  RiggedMesh mesh;
  Points anchor;
  Points displacement;
  Image texture;
};

struct RunOutput {
  PipelineState state;                   // after the last iteration
  std::vector<Render> renders;           // index t = render of (M_t, T_t), t = 0..K
  std::vector<Tensor> vertices;          // canonical V_t, t = 0..K
  std::vector<IterationRecord> records;  // t = 0..K
};

/// Split threshold for topology correction: epsilon_scale times the mean edge length of `mesh`, raised when
/// needed so that `mesh` itself has no edge to split.
double remesh_epsilon(const RiggedMesh& mesh, const Config& config);
inline constexpr double kEpsilonMargin = 1.05;  // over the longest starting edge

/// Canonical starting mesh: rig template plus its shape blendshapes weighted by params.shape_coeffs.
RiggedMesh initial_mesh(const RiggedMesh& rig, const PoseParams& params);

/// K coupled iterations of deform_step then texture_step, rendering after each.
RunOutput run(const Image& input_image, const PoseParams& params, const RiggedMesh& rig, const Blocks& blocks,
              const Config& config);

/// Ground truth the losses compare against.
struct Supervision {
  Tensor image;
  Tensor mask;
  Tensor normals;
  Tensor parts;
  std::vector<double> pixel_mask;
};
Supervision make_supervision(const Image& image, const Image& mask, const Image& normals, const Image& parts);

/// Loss terms of one iteration: its render against the ground truth, Laplacian on its canonical vertices.
LossTerms iteration_losses(const Render& render, const Tensor& vertices, const RiggedMesh& canonical,
                           const Supervision& gt);

struct LossReport {
  Tensor total;
  std::vector<LossTerms> per_iteration;  // t = 1..K
};
/// Discounted sum of the per-iteration losses over t = 1..K.
LossReport pipeline_loss(const RunOutput& out, const Supervision& gt, const Config& config);

}  // namespace avatarforge
