#include "avatarforge/train.hpp"

#include <cmath>

#include <fmt/format.h>

namespace avatarforge {

namespace {

struct Evaluated {
  MetricsRow row;
  Image render;
  ad::Tensor total;
};

Evaluated forward(const SyntheticSubject& subject, const Supervision& gt, const Blocks& blocks, const Config& config,
                  long step) {
  const RunOutput out = run(subject.input_image, subject.pose_params, subject.template_mesh, blocks, config);
  const LossReport report = pipeline_loss(out, gt, config);
  Evaluated e;
  e.total = report.total;
  e.render = tensor_to_image(out.renders.back().image);
  const LossTerms& last = report.per_iteration.back();
  MetricsRow& r = e.row;
  r.step = step;
  r.l_img = last.img.item();
  r.l_mask = last.mask.item();
  r.l_normal = last.normal.item();
  r.l_part = last.part.item();
  r.l_lap = last.lap.item();
  r.l_total = report.total.item();
  r.psnr = psnr(e.render, subject.input_image, subject.fg_mask.data);
  r.ssim = ssim(e.render, subject.input_image, subject.fg_mask.data);
  if (!std::isfinite(r.l_total))
    throw Error(ErrorCode::kDivergence, fmt::format("loss is {} at step {}", r.l_total, step));
  return e;
}

}  // namespace

Supervision subject_supervision(const SyntheticSubject& subject) {
  return make_supervision(subject.input_image, subject.fg_mask, subject.normal_map, subject.part_map);
}

MetricsRow evaluate(const SyntheticSubject& subject, const Blocks& blocks, const Config& config, long step,
                    Image* render) {
  ad::NoGradGuard guard;
  Evaluated e = forward(subject, subject_supervision(subject), blocks, config, step);
  if (render) *render = std::move(e.render);
  return e.row;
}

TrainResult train_overfit(const SyntheticSubject& subject, Blocks& blocks, const Config& config,
                          const TrainOptions& options) {
  validate(config);
  if (options.steps < 0) throw Error(ErrorCode::kConfig, "steps must be >= 0");
  const Supervision gt = subject_supervision(subject);
  const bool snapshots = options.snapshot_every > 0 && !options.snapshot_dir.empty();
  if (snapshots) std::filesystem::create_directories(options.snapshot_dir);

  TrainResult result;
  ad::AdamState adam;
  ad::AdamOptions adam_options;
  adam_options.grad_clip = config.train.grad_clip;
  for (long step = 0;; ++step) {
    const bool last = step == options.steps;
    blocks.params.zero_grad();
    Evaluated e = [&] {
      if (!last) return forward(subject, gt, blocks, config, step);
      ad::NoGradGuard guard;
      return forward(subject, gt, blocks, config, step);
    }();
    if (step == 0) {
      result.initial_render = e.render;
      result.initial_psnr = e.row.psnr;
    }
    if (snapshots && (step % options.snapshot_every == 0 || last))
      save_image(e.render, options.snapshot_dir / fmt::format("step_{:05d}.png", step));
    result.metrics.push_back(e.row);
    if (options.on_step) options.on_step(e.row);
    if (last) {
      result.final_render = std::move(e.render);
      result.final_psnr = e.row.psnr;
      break;
    }
    ad::backward(e.total);
    const double lr = ad::lr_schedule(step, options.steps, config.train.lr, config.train.warmup);
    const double norm = ad::adam_step(blocks.params, adam, lr, adam_options);
    if (!std::isfinite(norm))
      throw Error(ErrorCode::kDivergence, fmt::format("gradient norm is {} at step {}", norm, step));
  }
  return result;
}

}  // namespace avatarforge
