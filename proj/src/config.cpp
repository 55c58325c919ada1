#include "avatarforge/config.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "avatarforge/error.hpp"

namespace avatarforge {

using nlohmann::json;

double ClipRanges::for_part(Part p) const {
  switch (p) {
    case Part::kFace: return face;
    case Part::kHair: return hair;
    case Part::kNeck: return neck;
    case Part::kEyeball: return eyeball;
    case Part::kEyelid: return eyelid;
    case Part::kOther: return other;
  }
  throw Error(ErrorCode::kUnknownLabel, fmt::format("part label {}", static_cast<int>(p)));
}

Config default_config(Profile profile) {
  Config c;
  c.profile = std::string(profile_name(profile));
  if (profile == Profile::kPaper) {
    c.dims.image_resolution = 512;
    c.dims.patch = 8;
    c.dims.dim = 1024;
    c.dims.heads = 16;
    c.dims.attention_layers = 2;
    c.dims.texture_resolution = 1024;
    c.dims.texture_features = 16;
    c.dims.texture_hidden = 64;
    c.dims.texture_downsample = 4;
    c.dims.geometry_hidden = 256;
    c.dims.error_channels = 32;
  }
  return c;
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kConfig, what);
}

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

json to_json(const Config& c) {
  const auto& d = c.dims;
  return json{
      {"profile", c.profile},
      {"iterations", c.iterations},
      {"gamma", c.gamma},
      {"lambda",
       {{"img", c.lambda.img}, {"mask", c.lambda.mask}, {"normal", c.lambda.normal}, {"part", c.lambda.part},
        {"lap", c.lambda.lap}}},
      {"delta",
       {{"face", c.delta.face}, {"hair", c.delta.hair}, {"neck", c.delta.neck}, {"eyeball", c.delta.eyeball},
        {"eyelid", c.delta.eyelid}, {"other", c.delta.other}}},
      {"epsilon_scale", c.epsilon_scale},
      {"area_eps", c.area_eps},
      {"dv_head_gain", c.dv_head_gain},
      {"seed", c.seed},
      {"dims",
       {{"image_resolution", d.image_resolution}, {"patch", d.patch}, {"dim", d.dim}, {"heads", d.heads},
        {"attention_layers", d.attention_layers}, {"texture_resolution", d.texture_resolution},
        {"texture_features", d.texture_features}, {"texture_hidden", d.texture_hidden},
        {"texture_downsample", d.texture_downsample}, {"geometry_hidden", d.geometry_hidden},
        {"error_channels", d.error_channels}, {"n_freq", d.n_freq}}},
      {"train",
       {{"lr", c.train.lr}, {"warmup", c.train.warmup}, {"grad_clip", c.train.grad_clip},
        {"steps", c.train.steps}, {"snapshot_every", c.train.snapshot_every}}},
  };
}

/// Copies j[key] into `out` when present; unknown keys are rejected by `check_keys`.
template <typename T>
void read(const json& j, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, fmt::format("field '{}': {}", key, e.what()));
  }
}

void check_keys(const json& j, const json& reference, const std::string& where) {
  require(j.is_object(), fmt::format("'{}' must be an object", where));
  for (const auto& [key, value] : j.items()) {
    require(reference.contains(key), fmt::format("unknown config field '{}{}'", where.empty() ? "" : where + ".", key));
    if (reference[key].is_object()) check_keys(value, reference[key], where.empty() ? key : where + "." + key);
  }
}

}  // namespace

void validate(const Config& c) {
  profile_from_name(c.profile);
  require(c.iterations >= 1, fmt::format("iterations must be >= 1, got {}", c.iterations));
  require(c.gamma > 0.0 && c.gamma <= 1.0, fmt::format("gamma must be in (0, 1], got {}", c.gamma));
  for (double v : {c.delta.face, c.delta.hair, c.delta.neck, c.delta.eyeball, c.delta.eyelid, c.delta.other})
    require(v >= 0.0, fmt::format("clip ranges must be >= 0, got {}", v));
  for (double v : {c.lambda.img, c.lambda.mask, c.lambda.normal, c.lambda.part, c.lambda.lap})
    require(v >= 0.0, fmt::format("loss weights must be >= 0, got {}", v));
  require(c.epsilon_scale > 0.0, "epsilon_scale must be positive");
  require(c.area_eps >= 0.0, "area_eps must be >= 0");
  const auto& d = c.dims;
  require(d.patch > 0 && d.image_resolution % d.patch == 0, "image_resolution must be a multiple of patch");
  require(d.dim > 0 && d.heads > 0 && d.dim % d.heads == 0, "dim must be a multiple of heads");
  require(d.attention_layers >= 0, "attention_layers must be >= 0");
  require(d.texture_resolution % d.token_grid() == 0 && is_power_of_two(d.texture_resolution / d.token_grid()),
          "texture_resolution / token grid must be a power of two");
  require(d.texture_downsample > 0 && d.texture_resolution % d.texture_downsample == 0,
          "texture_resolution must be a multiple of texture_downsample");
  require(d.texture_features > 0 && d.texture_hidden > 0 && d.geometry_hidden > 0 && d.error_channels > 0,
          "feature widths must be positive");
  require(d.n_freq >= 0, "n_freq must be >= 0");
  require(c.train.lr > 0.0, "lr must be positive");
  require(c.train.warmup >= 0 && c.train.steps >= 0, "warmup and steps must be >= 0");
  require(c.train.grad_clip >= 0.0, "grad_clip must be >= 0");
  require(c.train.snapshot_every >= 0, "snapshot_every must be >= 0");
}

std::string config_to_json(const Config& config) { return to_json(config).dump(2); }

Config config_from_json(const std::string& text, const Config& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kConfig, fmt::format("config is not valid JSON: {}", e.what()));
  }
  check_keys(j, to_json(base), "");
  Config c = base;
  read(j, "profile", c.profile);
  read(j, "iterations", c.iterations);
  read(j, "gamma", c.gamma);
  read(j, "epsilon_scale", c.epsilon_scale);
  read(j, "area_eps", c.area_eps);
  read(j, "dv_head_gain", c.dv_head_gain);
  read(j, "seed", c.seed);
  if (j.contains("lambda")) {
    const auto& l = j["lambda"];
    read(l, "img", c.lambda.img);
    read(l, "mask", c.lambda.mask);
    read(l, "normal", c.lambda.normal);
    read(l, "part", c.lambda.part);
    read(l, "lap", c.lambda.lap);
  }
  if (j.contains("delta")) {
    const auto& d = j["delta"];
    read(d, "face", c.delta.face);
    read(d, "hair", c.delta.hair);
    read(d, "neck", c.delta.neck);
    read(d, "eyeball", c.delta.eyeball);
    read(d, "eyelid", c.delta.eyelid);
    read(d, "other", c.delta.other);
  }
  if (j.contains("dims")) {
    const auto& d = j["dims"];
    read(d, "image_resolution", c.dims.image_resolution);
    read(d, "patch", c.dims.patch);
    read(d, "dim", c.dims.dim);
    read(d, "heads", c.dims.heads);
    read(d, "attention_layers", c.dims.attention_layers);
    read(d, "texture_resolution", c.dims.texture_resolution);
    read(d, "texture_features", c.dims.texture_features);
    read(d, "texture_hidden", c.dims.texture_hidden);
    read(d, "texture_downsample", c.dims.texture_downsample);
    read(d, "geometry_hidden", c.dims.geometry_hidden);
    read(d, "error_channels", c.dims.error_channels);
    read(d, "n_freq", c.dims.n_freq);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    read(t, "lr", c.train.lr);
    read(t, "warmup", c.train.warmup);
    read(t, "grad_clip", c.train.grad_clip);
    read(t, "steps", c.train.steps);
    read(t, "snapshot_every", c.train.snapshot_every);
  }
  validate(c);
  return c;
}

Config load_config(const std::filesystem::path& path, const Config& base) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot open config {}", path.string()));
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json(ss.str(), base);
}

}  // namespace avatarforge
