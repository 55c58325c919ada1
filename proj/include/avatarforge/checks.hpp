#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "avatarforge/headmodel.hpp"
#include "avatarforge/mesh.hpp"
#include "avatarforge/tensor.hpp"

namespace avatarforge {

/// Acceptance suites shared by the test binary and `avatarforge check`.
struct CheckLine {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SuiteReport {
  std::string suite;
  std::vector<CheckLine> lines;
  double seconds = 0.0;
  bool pass() const;
  std::size_t failures() const;
};

inline constexpr double kGradStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;
/// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kGradFloor = 1e-3;
/// Coordinates probed per leaf tensor (all of them when the tensor is smaller).
inline constexpr std::size_t kGradCoordsPerLeaf = 48;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t skipped = 0;  // probes whose +-h evaluations changed some relu's active set
};

/// Central differences of sum(forward() * R) for a fixed random R against reverse mode, on every leaf.
/// Probes that cross a relu kink are skipped and counted.
GradCheckResult finite_difference_check(const std::vector<ad::Tensor>& leaves, const std::function<ad::Tensor()>& forward,
                                        std::mt19937_64& rng, double h = kGradStep,
                                        std::size_t coords_per_leaf = kGradCoordsPerLeaf);

/// Pixel centres covered by some front-facing triangle, by direct per-pixel, per-face tests.
std::vector<std::uint8_t> brute_force_coverage(const RiggedMesh& mesh, const Camera& camera, int width, int height);

/// Closed latitude/longitude sphere with random rig attributes; used as a remeshing fixture.
RiggedMesh random_fixture_mesh(std::mt19937_64& rng, int rings, int segments);

SuiteReport run_grad_suite(std::uint64_t seed = 0, int shapes = 10);
SuiteReport run_geometry_suite(std::uint64_t seed = 0, int fixtures = 100);
SuiteReport run_roundtrip_suite(std::uint64_t seed = 0, int triples = 20);

}  // namespace avatarforge
