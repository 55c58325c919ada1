#pragma once

#include <cstdint>
#include <filesystem>

#include "avatarforge/headmodel.hpp"
#include "avatarforge/image.hpp"
#include "avatarforge/mesh.hpp"

namespace avatarforge {

/// Ground-truth bundle for one synthetic head: geometry, appearance, view, and rendered supervision.
struct SyntheticSubject {
  RiggedMesh gt_mesh;  // canonical: template + shape blendshapes + hair displacement
  UvImage gt_texture;
  PoseParams pose_params;
  Image input_image;  // H x W x 3
  Image fg_mask;      // H x W x 1, binary
  Image normal_map;   // H x W x 3, unit where masked
  Image part_map;     // H x W x kNumParts, one-hot where masked
  RiggedMesh template_mesh;  // the rig the subject was generated from
};

struct SynthOptions {
  int resolution = 128;
  int texture_resolution = 128;
  double hair_delta = 0.08;  // bound on |hair displacement|
};

/// Deterministic per seed.
SyntheticSubject make_synthetic_subject(std::uint64_t seed, const RiggedMesh& rig, const SynthOptions& options = {});

/// Procedural texture with stripes, checks, value noise and glyph strips; deterministic per seed.
UvImage make_procedural_texture(std::uint64_t seed, const RiggedMesh& rig, int resolution);

/// Renders image/mask/normal/part supervision for `canonical` under `params`.
void render_supervision(SyntheticSubject& subject, int resolution);

/// Hair-region displacement per vertex of `rig` (zero outside hair, |d| <= delta).
Points hair_displacement(std::uint64_t seed, const RiggedMesh& rig, double delta);

/// Writes gt mesh, template, texture, params and supervision images into `dir`.
void save_subject(const SyntheticSubject& subject, const std::filesystem::path& dir);
SyntheticSubject load_subject(const std::filesystem::path& dir);

/// Part one-hot image stored on disk as a single-channel label map (label + 1, 0 = background).
Image part_labels_to_index(const Image& one_hot);
Image part_index_to_labels(const Image& index);

}  // namespace avatarforge
