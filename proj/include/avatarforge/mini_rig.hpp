#pragma once

#include <string_view>

#include "avatarforge/mesh.hpp"

namespace avatarforge {

enum class Profile { kDesk, kPaper };

Profile profile_from_name(std::string_view name);  // "desk" | "paper", throws kConfig
std::string_view profile_name(Profile p);

/// Joint layout of the mini-rig.
enum MiniRigJoint : int { kRootJoint = 0, kNeckJoint = 1, kJawJoint = 2, kEyesJoint = 3 };

/// Blendshape layout: the first kMiniRigShapeCount are identity (shape) offsets, the rest expressions.
inline constexpr int kMiniRigShapeCount = 4;
inline constexpr int kMiniRigExprCount = 4;

/// Procedural head: a latitude/longitude sphere (closed, seam duplicated at the back, u = 0/1)
/// sculpted into a head with a neck, nose, and eye disks; face +z, up +y.
RiggedMesh make_mini_rig(Profile profile);

}  // namespace avatarforge
