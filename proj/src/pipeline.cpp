#include "avatarforge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

namespace avatarforge {

using namespace ad;

namespace {

Tensor points_tensor(const Points& p) {
  return Tensor::constant({static_cast<int>(p.rows()), 3}, std::vector<double>(p.data(), p.data() + p.size()));
}

Points tensor_points(const Tensor& t) {
  Points p(t.dim(0), 3);
  std::copy(t.values().begin(), t.values().end(), p.data());
  return p;
}

/// Rows average the members of each group of bit-identical vertices (identity for unwelded vertices).
std::shared_ptr<const SparseRows> weld_plan(const Points& vertices, bool average) {
  const std::vector<int> rep = weld_map(vertices);
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t v = 0; v < rep.size(); ++v) groups[rep[v]].push_back(v);
  auto plan = std::make_shared<SparseRows>();
  plan->num_cols = rep.size();
  std::vector<std::pair<std::size_t, double>> row;
  for (std::size_t v = 0; v < rep.size(); ++v) {
    const auto& members = groups[rep[v]];
    const double w = average ? 1.0 / static_cast<double>(members.size()) : 1.0;
    row.clear();
    for (std::size_t m : members) row.emplace_back(m, w);
    plan->add_row(row);
  }
  return plan;
}

/// Bilinear upsampling of a g x g grid by `factor` (texel centres aligned), as a gather plan.
std::shared_ptr<const SparseRows> upsample_plan(int g, int factor) {
  auto plan = std::make_shared<SparseRows>();
  plan->num_cols = static_cast<std::size_t>(g) * g;
  const int n = g * factor;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      plan->add_row(bilinear_taps(g, g, (j + 0.5) / factor, (i + 0.5) / factor));
  return plan;
}

Tensor pool_map(const Tensor& map, int k) {
  const int h = map.dim(0), w = map.dim(1), c = map.dim(2);
  const auto plan = std::make_shared<const SparseRows>(avgpool_plan(h, w, k));
  return reshape(gather(reshape(map, {h * w, c}), plan), {h / k, w / k, c});
}

void require_image(const Tensor& image, int resolution) {
  if (image.rank() != 3 || image.dim(0) != resolution || image.dim(1) != resolution || image.dim(2) != 3)
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("input image {} does not match the {}x{}x3 profile resolution", shape_str(image.shape()),
                            resolution, resolution));
}

Tensor zeros(Shape shape) { return Tensor::constant(std::move(shape), 0.0); }

/// U_t: the input image resampled into texture space through the current render.
void observe_unwrap(PipelineState& s, const Image& input, const Render& render, const Camera& camera,
                    const Config& config) {
  const int ha = config.dims.texture_resolution;
  const UvImage u = apply_unwrap(unwrap_plan(render.posed, camera, render.rmap, ha, ha), input);
  s.unwrapped = image_to_tensor(u.values);
  s.unwrapped_valid = u.valid;
}

IterationRecord snapshot(const PipelineState& s) {
  return {s.t, s.mesh, s.anchor, tensor_points(s.displacement), tensor_to_image(s.texture)};
}

}  // namespace

std::unique_ptr<Blocks> Blocks::create(const Config& config) {
  validate(config);
  const auto& d = config.dims;
  auto b = std::make_unique<Blocks>();
  auto& store = b->params;
  nn::InitRng rng(config.seed);
  const int pe = nn::positional_width(d.n_freq);
  const int tokens = d.token_grid() * d.token_grid();
  const int e = d.error_channels;

  b->encoder = nn::PatchEncoder::create(store, "pipeline.encoder", d.patch, 3, d.dim, rng);
  b->vertex_embed = nn::Mlp::create(store, "pipeline.vertex_embed", {pe, d.dim, d.dim}, rng);
  b->tex_tokens = store.add("pipeline.tex_tokens", {tokens, d.dim},
                            rng.kaiming_uniform(static_cast<std::size_t>(tokens) * d.dim, d.dim));
  b->token_pos = store.add("pipeline.token_pos", {tokens, d.dim},
                           rng.kaiming_uniform(static_cast<std::size_t>(tokens) * d.dim, d.dim, 0.1));
  for (int i = 0; i < d.attention_layers; ++i)
    b->attn.push_back(nn::CrossAttention::create(store, fmt::format("pipeline.attn.{}", i), d.dim, d.heads, rng));
  b->decoder = nn::TexDecoder::create(store, "pipeline.decoder", d.token_grid(), d.dim, d.texture_resolution,
                                      d.texture_features, rng);
  b->err_phi1 = nn::Conv::create(store, "pipeline.err_phi1", 9, e, rng);
  b->err_phi2 = nn::Conv::create(store, "pipeline.err_phi2", e, e, rng);
  b->psi = nn::Mlp::create(store, "pipeline.psi", {pe + e, d.dim, d.dim}, rng);
  b->geo_gru = nn::VecGru::create(store, "pipeline.geo_gru", 2 * d.dim, d.geometry_hidden, rng);
  b->dv_head = nn::Linear::create(store, "pipeline.dv_head", d.geometry_hidden, 3, rng, config.dv_head_gain);
  b->tex_phi1 = nn::Conv::create(store, "pipeline.tex_phi1", 7, e, rng);
  b->tex_phi2 = nn::Conv::create(store, "pipeline.tex_phi2", e + d.texture_features + e, d.texture_hidden, rng);
  b->tex_gru = nn::ConvGru::create(store, "pipeline.tex_gru", d.texture_hidden, d.texture_hidden, rng);
  const std::size_t head_count = 9u * static_cast<std::size_t>(d.texture_hidden) * 3u;
  b->tex_head.kernel = store.add("pipeline.tex_head.kernel", {3, 3, d.texture_hidden, 3},
                                 rng.kaiming_uniform(head_count, 9 * d.texture_hidden));
  return b;
}

Features extract_features(const Tensor& image, const Points& vertices, const Blocks& blocks, const Config& config) {
  require_image(image, config.dims.image_resolution);
  Features f;
  f.f_i = add(blocks.encoder(image), blocks.token_pos);
  f.f_v = blocks.vertex_embed(nn::positional_encoding(points_tensor(vertices), config.dims.n_freq));
  f.f_t = blocks.tex_tokens;
  for (const auto& layer : blocks.attn) {
    f.f_v = layer(f.f_v, f.f_i);
    f.f_t = layer(f.f_t, f.f_i);
  }
  return f;
}

namespace {

std::vector<double> clip_bounds(const std::vector<Part>& labels, const ClipRanges& delta, std::size_t rows) {
  if (labels.size() != rows)
    throw Error(ErrorCode::kShapeMismatch, fmt::format("{} labels for {} displacement rows", labels.size(), rows));
  std::vector<double> hi(rows * 3);
  for (std::size_t v = 0; v < rows; ++v) std::fill_n(hi.begin() + static_cast<long>(3 * v), 3, delta.for_part(labels[v]));
  return hi;
}

}  // namespace

Tensor clip_deformation(const Tensor& displacement, const std::vector<Part>& labels, const ClipRanges& delta) {
  if (displacement.rank() != 2 || displacement.dim(1) != 3)
    throw Error(ErrorCode::kShapeMismatch, fmt::format("displacement must be N x 3, got {}", shape_str(displacement.shape())));
  const std::vector<double> hi = clip_bounds(labels, delta, static_cast<std::size_t>(displacement.dim(0)));
  std::vector<double> lo(hi.size());
  std::transform(hi.begin(), hi.end(), lo.begin(), [](double h) { return -h; });
  return clamp(displacement, lo, hi);
}

Points clip_deformation(const Points& displacement, const std::vector<Part>& labels, const ClipRanges& delta) {
  const std::vector<double> hi = clip_bounds(labels, delta, static_cast<std::size_t>(displacement.rows()));
  Points out(displacement.rows(), 3);
  for (Eigen::Index v = 0; v < displacement.rows(); ++v)
    for (int c = 0; c < 3; ++c) {
      const double h = hi[static_cast<std::size_t>(3 * v + c)];
      out(v, c) = std::clamp(displacement(v, c), -h, h);
    }
  return out;
}

Render render_mesh(const RiggedMesh& canonical, const Tensor& vertices, const Tensor& texture,
                   const PoseParams& params, int resolution) {
  const AnimationMap am = animation_map(canonical.vertices, canonical, params);
  const Tensor posed = affine_rows(add(vertices, points_tensor(am.expression_offsets)), am.per_vertex);

  Render r;
  r.posed = canonical;
  r.posed.vertices = tensor_points(posed);
  r.rmap = rasterize(r.posed, params.camera, resolution, resolution);

  const int th = texture.dim(0), tw = texture.dim(1);
  const auto sample = std::make_shared<const SparseRows>(texture_sample_plan(r.rmap, tw, th));
  r.image = reshape(gather(reshape(texture, {th * tw, 3}), sample), {resolution, resolution, 3});

  // Same construction as rasterize(): face normals summed over welded groups, normalized, then
  // interpolated with the perspective-correct barycentrics and normalized again.
  const Tensor vn = normalize_rows(gather(face_normal_sum(posed, r.posed.faces), weld_plan(r.posed.vertices, false)));
  auto pixel_plan = std::make_shared<SparseRows>();
  pixel_plan->num_cols = static_cast<std::size_t>(r.posed.num_vertices());
  for (std::size_t i = 0; i < r.rmap.face_id.size(); ++i) {
    const int f = r.rmap.face_id[i];
    if (f < 0) {
      pixel_plan->add_empty_row();
      continue;
    }
    const auto& b = r.rmap.bary[i];
    pixel_plan->add_row({{static_cast<std::size_t>(r.posed.faces(f, 0)), b[0]},
                         {static_cast<std::size_t>(r.posed.faces(f, 1)), b[1]},
                         {static_cast<std::size_t>(r.posed.faces(f, 2)), b[2]}});
  }
  r.normals = reshape(normalize_rows(gather(vn, std::shared_ptr<const SparseRows>(std::move(pixel_plan)))),
                      {resolution, resolution, 3});
  r.mask = render_mask(r.rmap);
  r.parts = render_parts(r.rmap);
  return r;
}

Render render_mesh(const RiggedMesh& canonical, const Image& texture, const PoseParams& params, int resolution) {
  if (texture.channels != 3) throw Error(ErrorCode::kShapeMismatch, "texture must have 3 channels");
  NoGradGuard no_grad;
  return render_mesh(canonical, points_tensor(canonical.vertices), image_to_tensor(texture), params, resolution);
}

ErrorFeatures error_features(const Tensor& input, const Render& render, const RiggedMesh& canonical,
                             const Camera& camera, const Blocks& blocks, const Config& config) {
  const Tensor& rendered = render.image;
  if (input.shape() != rendered.shape())
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("error features: input {} vs render {}", shape_str(input.shape()), shape_str(rendered.shape())));
  const int h = input.dim(0), w = input.dim(1);
  const int e = config.dims.error_channels, g = config.dims.texture_grid();

  const Tensor x = concat({input, rendered, sub(input, rendered)}, 2);
  const Tensor phi = blocks.err_phi2(relu(blocks.err_phi1(x)));

  UnwrapPlan plan = unwrap_plan(render.posed, camera, render.rmap, g, g);
  ErrorFeatures out;
  out.valid = plan.valid;
  out.f_d = reshape(gather(reshape(phi, {h * w, e}), std::make_shared<const SparseRows>(std::move(plan.rows))),
                    {g, g, e});

  auto to_vertex = std::make_shared<SparseRows>();
  to_vertex->num_cols = static_cast<std::size_t>(g) * g;
  for (Eigen::Index v = 0; v < canonical.num_vertices(); ++v) {
    const double px = canonical.uv(v, 0) * g, py = canonical.uv(v, 1) * g;
    const int ix = std::clamp(static_cast<int>(std::floor(px)), 0, g - 1);
    const int iy = std::clamp(static_cast<int>(std::floor(py)), 0, g - 1);
    if (!out.valid[static_cast<std::size_t>(iy) * g + ix]) {
      to_vertex->add_empty_row();
      continue;
    }
    to_vertex->add_row(bilinear_taps(g, g, px, py));
  }
  out.f_d2v = gather(reshape(out.f_d, {g * g, e}), std::shared_ptr<const SparseRows>(std::move(to_vertex)));
  return out;
}

void deform_step(PipelineState& s, const StepContext& ctx) {
  const Config& config = ctx.config;
  const Blocks& blocks = ctx.blocks;

  // Positions enter the step as constants.
  const Tensor enc = nn::positional_encoding(s.vertices.detach(), config.dims.n_freq);
  const Tensor x = concat({blocks.psi(concat({enc, s.err.f_d2v}, 1)), s.f_v}, 1);
  s.h_geo = blocks.geo_gru(x, s.h_geo);
  s.delta_v = blocks.dv_head(s.h_geo);

  // Seam duplicates move together so the surface stays closed.
  const Tensor dv = gather(s.delta_v, weld_plan(s.mesh.vertices, true));
  Tensor disp = clip_deformation(add(s.displacement.detach(), dv), s.mesh.part_labels, config.delta);

  RiggedMesh moved = s.mesh;
  moved.vertices = s.anchor + tensor_points(disp);
  RemeshOptions options;
  options.epsilon = ctx.epsilon;
  options.area_eps = config.area_eps;
  RemeshResult fixed = topology_correct(moved, options);
  if (fixed.changed) {
    const auto prov = std::make_shared<const SparseRows>(std::move(fixed.provenance));
    Points anchor(static_cast<Eigen::Index>(prov->num_rows()), 3);
    apply_rows(*prov, std::span<const double>(s.anchor.data(), static_cast<std::size_t>(s.anchor.size())), 3,
               std::span<double>(anchor.data(), static_cast<std::size_t>(anchor.size())));
    s.anchor = std::move(anchor);
    s.mesh = std::move(fixed.mesh);
    disp = clip_deformation(gather(disp, prov), s.mesh.part_labels, config.delta);
    s.h_geo = gather(s.h_geo, prov);
    s.f_v = gather(s.f_v, prov);
  } else {
    s.mesh = std::move(moved);
  }
  s.displacement = disp;
  s.vertices = add(points_tensor(s.anchor), disp);
  s.mesh.vertices = tensor_points(s.vertices);
}

void texture_step(PipelineState& s, const StepContext& ctx) {
  const auto& d = ctx.config.dims;
  const Blocks& blocks = ctx.blocks;
  const int k = d.texture_downsample, g = d.texture_grid(), ha = d.texture_resolution;

  std::vector<double> valid(s.unwrapped_valid.begin(), s.unwrapped_valid.end());
  const Tensor valid_map = Tensor::constant({ha, ha, 1}, std::move(valid));
  const Tensor a = relu(blocks.tex_phi1(concat({pool_map(s.texture, k), pool_map(s.unwrapped, k), pool_map(valid_map, k)}, 2)));
  const Tensor b = relu(blocks.tex_phi2(concat({a, pool_map(s.f_a, k), s.err.f_d}, 2)));
  s.h_tex = blocks.tex_gru(b, s.h_tex);

  // The head has no bias and h_tex starts at zero, so a closed update gate leaves the texture unchanged.
  const Tensor residual = blocks.tex_head(s.h_tex);
  s.logits = add(s.base_logits, reshape(gather(reshape(residual, {g * g, 3}), upsample_plan(g, k)), {ha, ha, 3}));
  s.texture = sigmoid(s.logits);
}

double remesh_epsilon(const RiggedMesh& mesh, const Config& config) {
  return std::max(config.epsilon_scale * mean_edge_length(mesh), kEpsilonMargin * max_edge_length(mesh));
}

RiggedMesh initial_mesh(const RiggedMesh& rig, const PoseParams& params) {
  check_params(rig, params);
  RiggedMesh m = rig;
  m.vertices = add_blendshapes(rig.vertices, rig.blendshapes, 0, params.shape_coeffs);
  return m;
}

RunOutput run(const Image& input_image, const PoseParams& params, const RiggedMesh& rig, const Blocks& blocks,
              const Config& config) {
  validate(config);
  const auto& d = config.dims;
  const Tensor input = image_to_tensor(input_image);
  require_image(input, d.image_resolution);

  RunOutput out;
  PipelineState& s = out.state;
  s.mesh = initial_mesh(rig, params);
  const double epsilon = remesh_epsilon(s.mesh, config);
  const auto n = static_cast<int>(s.mesh.num_vertices());
  s.anchor = s.mesh.vertices;
  s.displacement = zeros({n, 3});
  s.vertices = points_tensor(s.anchor);
  s.delta_v = zeros({n, 3});

  const Features features = extract_features(input, s.mesh.vertices, blocks, config);
  s.f_v = features.f_v;
  s.h_geo = zeros({n, d.geometry_hidden});
  s.h_tex = zeros({d.texture_grid(), d.texture_grid(), d.texture_hidden});
  const auto decoded = blocks.decoder(features.f_t);
  s.base_logits = s.logits = decoded.logits;
  s.texture = decoded.texture;
  s.f_a = decoded.features;

  const StepContext ctx{input, params, blocks, config, epsilon};
  auto observe = [&]() {
    const Render& r = out.renders.back();
    s.err = error_features(input, r, s.mesh, params.camera, blocks, config);
    observe_unwrap(s, input_image, r, params.camera, config);
  };

  out.renders.push_back(render_mesh(s.mesh, s.vertices, s.texture, params, d.image_resolution));
  out.vertices.push_back(s.vertices);
  out.records.push_back(snapshot(s));
  observe();
  for (int t = 0; t < config.iterations; ++t) {
    deform_step(s, ctx);
    texture_step(s, ctx);
    s.t = t + 1;
    out.renders.push_back(render_mesh(s.mesh, s.vertices, s.texture, params, d.image_resolution));
    out.vertices.push_back(s.vertices);
    out.records.push_back(snapshot(s));
    if (s.t < config.iterations) observe();
  }
  return out;
}

Supervision make_supervision(const Image& image, const Image& mask, const Image& normals, const Image& parts) {
  if (mask.channels != 1 || mask.height != image.height || mask.width != image.width ||
      !normals.same_shape(image) || parts.height != image.height || parts.width != image.width)
    throw Error(ErrorCode::kShapeMismatch, "supervision images disagree in size");
  Supervision gt;
  gt.image = image_to_tensor(image);
  gt.mask = image_to_tensor(mask);
  gt.normals = image_to_tensor(normals);
  gt.parts = image_to_tensor(parts);
  gt.pixel_mask = mask.data;
  return gt;
}

LossTerms iteration_losses(const Render& render, const Tensor& vertices, const RiggedMesh& canonical,
                           const Supervision& gt) {
  LossTerms terms;
  terms.img = loss_img(render.image, gt.image, gt.pixel_mask);
  terms.mask = loss_mask(image_to_tensor(render.mask), gt.mask);
  terms.normal = loss_normal(render.normals, gt.normals, gt.pixel_mask);
  terms.part = loss_part(image_to_tensor(render.parts), gt.parts, gt.pixel_mask);
  terms.lap = loss_laplacian(vertices, umbrella_operator(canonical.vertices, canonical.faces));
  return terms;
}

LossReport pipeline_loss(const RunOutput& out, const Supervision& gt, const Config& config) {
  LossReport report;
  std::vector<Tensor> totals;
  for (int t = 1; t <= config.iterations; ++t) {
    const auto i = static_cast<std::size_t>(t);
    report.per_iteration.push_back(iteration_losses(out.renders[i], out.vertices[i], out.records[i].mesh, gt));
    totals.push_back(per_iteration_loss(report.per_iteration.back(), config.lambda));
  }
  report.total = total_loss(totals, config.gamma, config.iterations);
  return report;
}

}  // namespace avatarforge
