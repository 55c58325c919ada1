#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "avatarforge/losses.hpp"
#include "avatarforge/mesh.hpp"
#include "avatarforge/mini_rig.hpp"

namespace avatarforge {

/// Per-part bound on the accumulated displacement from the template anchor, per coordinate.
struct ClipRanges {
  double face = 0.003;
  double hair = 0.08;
  double neck = 0.02;
  double eyeball = 0.0;
  double eyelid = 0.0;
  double other = 0.02;

  double for_part(Part p) const;
};

struct ModelDims {
  int image_resolution = 128;
  int patch = 8;
  int dim = 64;             // C, token / vertex feature width
  int heads = 4;
  int attention_layers = 2;
  int texture_resolution = 128;
  int texture_features = 16;  // C_a
  int texture_hidden = 32;
  int texture_downsample = 4;  // texture GRU runs at texture_resolution / texture_downsample
  int geometry_hidden = 64;
  int error_channels = 16;     // output width of the error-feature convs
  int n_freq = 4;

  int token_grid() const { return image_resolution / patch; }
  int texture_grid() const { return texture_resolution / texture_downsample; }
};

struct TrainSettings {
  double lr = 2e-4;
  long warmup = 25;
  double grad_clip = 1.0;
  long steps = 500;
  long snapshot_every = 50;
};

struct Config {
  std::string profile = "desk";
  int iterations = 2;  // K; the loss discount runs over the same N = K iterations
  double gamma = 0.8;
  LossWeights lambda;
  ClipRanges delta;
  double epsilon_scale = 1.5;  // remesh threshold = epsilon_scale * mean template edge length
  double area_eps = 1e-10;
  double dv_head_gain = 1e-2;
  std::uint64_t seed = 0;
  ModelDims dims;
  TrainSettings train;
};

Config default_config(Profile profile);

/// Throws kConfig on any violated constraint (K >= 1, gamma in (0, 1], deltas >= 0, divisibility of dims).
void validate(const Config& config);

std::string config_to_json(const Config& config);
/// Fields absent from the JSON keep the values of `base`; unknown keys raise kConfig.
Config config_from_json(const std::string& text, const Config& base);
Config load_config(const std::filesystem::path& path, const Config& base);

}  // namespace avatarforge
