#pragma once

#include <filesystem>

#include "avatarforge/mesh.hpp"

namespace avatarforge {

/// `<stem>.obj` plus sibling `<stem>.rig.json` for the rig attributes.
std::filesystem::path rig_sidecar_path(const std::filesystem::path& obj_path);

/// Throws kIo, kParse or kInvariant.
RiggedMesh load_mesh(const std::filesystem::path& obj_path);

/// Deterministic output: every real number printed with 17 significant digits.
void save_mesh(const RiggedMesh& mesh, const std::filesystem::path& obj_path);

}  // namespace avatarforge
