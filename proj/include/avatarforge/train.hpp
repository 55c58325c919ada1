#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "avatarforge/config.hpp"
#include "avatarforge/metrics.hpp"
#include "avatarforge/pipeline.hpp"
#include "avatarforge/synth.hpp"

namespace avatarforge {

struct TrainOptions {
  long steps = 500;
  long snapshot_every = 50;                 // 0 disables snapshots
  std::filesystem::path snapshot_dir;       // empty disables snapshots
  std::function<void(const MetricsRow&)> on_step;
};

struct TrainResult {
  std::vector<MetricsRow> metrics;  // rows 0..steps; row s is evaluated before update s
  Image initial_render;             // final-iteration render at step 0
  Image final_render;               // final-iteration render after the last update
  double initial_psnr = 0.0;
  double final_psnr = 0.0;
};

/// Adam on every block parameter against the discounted pipeline loss for a single subject.
/// Throws kDivergence (with the step index) when the loss stops being finite.
TrainResult train_overfit(const SyntheticSubject& subject, Blocks& blocks, const Config& config,
                          const TrainOptions& options);

Supervision subject_supervision(const SyntheticSubject& subject);

/// One forward pass evaluated like a training row (no update).
MetricsRow evaluate(const SyntheticSubject& subject, const Blocks& blocks, const Config& config, long step,
                    Image* render = nullptr);

}  // namespace avatarforge
