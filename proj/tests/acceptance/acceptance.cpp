// Acceptance runner. `acceptance <n>` runs criterion n (1-8); `acceptance all` runs every criterion.
// Each criterion prints one "[PASS] criterion n: ..." or "[FAIL] criterion n: ..." line.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "avatarforge/checks.hpp"
#include "avatarforge/config.hpp"
#include "avatarforge/losses.hpp"
#include "avatarforge/metrics.hpp"
#include "avatarforge/mini_rig.hpp"
#include "avatarforge/pipeline.hpp"
#include "avatarforge/synth.hpp"
#include "avatarforge/train.hpp"

using namespace avatarforge;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void print_lines(const SuiteReport& report) {
  for (const auto& l : report.lines)
    std::printf("    %s %s: %s\n", l.pass ? "ok  " : "FAIL", l.name.c_str(), l.detail.c_str());
}

Outcome suite_outcome(const SuiteReport& report, double limit_s) {
  print_lines(report);
  const bool in_time = report.seconds <= limit_s;
  return {report.pass() && in_time,
          fmt::format("{} checks, {} failed, {:.1f}s (limit {:.0f}s)", report.lines.size(), report.failures(),
                      report.seconds, limit_s)};
}

Outcome criterion_gradients() { return suite_outcome(run_grad_suite(0, 10), 120.0); }
Outcome criterion_geometry() { return suite_outcome(run_geometry_suite(0, 100), 120.0); }
Outcome criterion_roundtrip() { return suite_outcome(run_roundtrip_suite(0, 20), 180.0); }

// Boundary values around +-delta for every label on every axis, through both clip overloads.
Outcome criterion_clipping() {
  const ClipRanges delta;
  const std::map<Part, double> expected{{Part::kHair, 0.08},   {Part::kNeck, 0.02},   {Part::kFace, 0.003},
                                        {Part::kEyeball, 0.0}, {Part::kEyelid, 0.0}, {Part::kOther, 0.02}};
  std::size_t checked = 0, wrong = 0;
  for (const auto& [part, d] : expected) {
    if (delta.for_part(part) != d) {
      ++wrong;
      std::printf("    FAIL delta(%s) = %.17g, expected %.17g\n", std::string(part_name(part)).c_str(),
                  delta.for_part(part), d);
    }
    for (int axis = 0; axis < 3; ++axis) {
      for (double sign : {1.0, -1.0}) {
        // (input, expected output) on the boundary, just inside, just outside and far outside.
        const std::vector<std::pair<double, double>> probes{
            {d, d},
            {std::nextafter(d, 0.0), std::nextafter(d, 0.0)},
            {std::nextafter(d, 1.0), d},
            {d + 1.0, d},
            {0.5 * d, 0.5 * d},
        };
        for (const auto& [in, out] : probes) {
          Points p = Points::Zero(1, 3);
          p(0, axis) = sign * in;
          // The other two axes carry an in-range value that must survive untouched.
          p(0, (axis + 1) % 3) = 0.25 * d;
          const Points c = clip_deformation(p, {part}, delta);
          const ad::Tensor t = clip_deformation(ad::Tensor::constant({1, 3}, std::vector<double>(p.data(), p.data() + 3)),
                                                {part}, delta);
          const bool ok = c(0, axis) == sign * out && c(0, (axis + 1) % 3) == 0.25 * d &&
                          c(0, (axis + 2) % 3) == 0.0 && t[static_cast<std::size_t>(axis)] == sign * out &&
                          t[static_cast<std::size_t>((axis + 1) % 3)] == 0.25 * d;
          ++checked;
          if (!ok) {
            ++wrong;
            std::printf("    FAIL %s axis %d input %.17g -> %.17g\n", std::string(part_name(part)).c_str(), axis,
                        sign * in, c(0, axis));
          }
        }
      }
    }
  }
  return {wrong == 0, fmt::format("{} boundary probes over 6 labels x 3 axes x 2 signs, {} wrong", checked, wrong)};
}

Outcome criterion_loss_arithmetic() {
  const auto s = [](double v) { return ad::Tensor::scalar(v); };
  const double total = total_loss({s(1), s(1)}, 0.8, 2).item();
  const double weighted = per_iteration_loss({s(1), s(1), s(1), s(1), s(1)}, LossWeights{}).item();
  return {total == 1.8 && weighted == 5.5,
          fmt::format("total_loss(N=2, gamma=0.8, L=(1,1)) = {:.17g}; lambda-sum(1,1,1,1,1) = {:.17g}", total,
                      weighted)};
}

struct OverfitRun {
  TrainResult result;
  double t0_psnr = 0.0;  // render of the starting mesh and texture, before training
  std::vector<double> params;
  double seconds = 0.0;
};

OverfitRun overfit_once(const SyntheticSubject& subject, const Config& config, long steps) {
  const auto start = Clock::now();
  OverfitRun r;
  auto blocks = Blocks::create(config);
  {
    ad::NoGradGuard no_grad;
    const RunOutput out = run(subject.input_image, subject.pose_params, subject.template_mesh, *blocks, config);
    r.t0_psnr = psnr(tensor_to_image(out.renders.front().image), subject.input_image, subject.fg_mask.data);
  }
  TrainOptions options;
  options.steps = steps;
  options.on_step = [](const MetricsRow& m) {
    if (m.step % 100 == 0)
      std::printf("    step %4ld  L_img %.5f  L_total %.5f  psnr %.2f\n", m.step, m.l_img, m.l_total, m.psnr);
    std::fflush(stdout);
  };
  r.result = train_overfit(subject, *blocks, config, options);
  for (const auto& [name, t] : blocks->params.entries()) r.params.insert(r.params.end(), t.values().begin(), t.values().end());
  r.seconds = seconds_since(start);
  return r;
}

bool same_metrics(const std::vector<MetricsRow>& a, const std::vector<MetricsRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].l_img != b[i].l_img || a[i].l_mask != b[i].l_mask || a[i].l_normal != b[i].l_normal ||
        a[i].l_part != b[i].l_part || a[i].l_lap != b[i].l_lap || a[i].l_total != b[i].l_total ||
        a[i].psnr != b[i].psnr)
      return false;
  }
  return true;
}

/// Final-row L_img of the committed calibration CSV, or NaN when it is missing.
double calibration_final_l_img() {
  std::ifstream in(AVATARFORGE_CALIBRATION_CSV);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  if (last.empty() || last.rfind("step", 0) == 0) return std::numeric_limits<double>::quiet_NaN();
  std::stringstream ss(last);
  std::string step, l_img;
  std::getline(ss, step, ',');
  std::getline(ss, l_img, ',');
  return std::stod(l_img);
}

Outcome criterion_overfit() {
  const Config config = default_config(Profile::kDesk);
  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  const SyntheticSubject subject = make_synthetic_subject(0, rig);
  constexpr long kSteps = 500;

  std::printf("    run A\n");
  const OverfitRun a = overfit_once(subject, config, kSteps);
  std::printf("    run B\n");
  const OverfitRun b = overfit_once(subject, config, kSteps);

  const auto& m = a.result.metrics;
  const double ratio = m.back().l_img / m.front().l_img;
  const double gain_step0 = a.result.final_psnr - a.result.initial_psnr;
  const double gain_t0 = a.result.final_psnr - a.t0_psnr;
  const bool deterministic = same_metrics(a.result.metrics, b.result.metrics) && a.params == b.params &&
                             a.result.final_render.data == b.result.final_render.data;
  const double slowest = std::max(a.seconds, b.seconds);
  const double calibrated = calibration_final_l_img();
  std::printf("    calibration final L_img %.6g, this run %.6g\n", calibrated, m.back().l_img);

  const bool pass = ratio <= 0.2 && gain_step0 >= 6.0 && gain_t0 >= 6.0 && deterministic && slowest <= 1200.0;
  return {pass, fmt::format("L_img {:.5f} -> {:.5f} ({:.1f}% of initial, limit 20%); masked PSNR {:.2f} dB, "
                            "+{:.2f} dB over step-0 final render, +{:.2f} dB over step-0 t=0 render (limit +6); "
                            "deterministic {}; slowest run {:.0f}s (limit 1200s)",
                            m.front().l_img, m.back().l_img, 100.0 * ratio, a.result.final_psnr, gain_step0, gain_t0,
                            deterministic ? "yes" : "NO", slowest)};
}

/// Weighted loss of the last refinement iteration, L_K, after training.
double final_iteration_loss(const SyntheticSubject& subject, const Blocks& blocks, const Config& config) {
  ad::NoGradGuard no_grad;
  const RunOutput out = run(subject.input_image, subject.pose_params, subject.template_mesh, blocks, config);
  const LossReport report = pipeline_loss(out, subject_supervision(subject), config);
  return per_iteration_loss(report.per_iteration.back(), config.lambda).item();
}

Outcome criterion_trend() {
  constexpr long kSteps = 150;
  const auto start = Clock::now();
  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed : {0, 1, 2}) {
    const SyntheticSubject subject = make_synthetic_subject(seed, rig);
    double final_loss[2] = {0, 0}, discounted[2] = {0, 0};
    for (int k : {1, 2}) {
      Config config = default_config(Profile::kDesk);
      config.iterations = k;
      config.seed = seed;
      auto blocks = Blocks::create(config);
      TrainOptions options;
      options.steps = kSteps;
      const TrainResult r = train_overfit(subject, *blocks, config, options);
      final_loss[k - 1] = final_iteration_loss(subject, *blocks, config);
      discounted[k - 1] = r.metrics.back().l_total;
    }
    const bool win = final_loss[1] <= final_loss[0];
    wins += win;
    std::printf("    seed %llu: L_K  K=1 %.6f  K=2 %.6f  (%s)   discounted L_total  K=1 %.6f  K=2 %.6f\n",
                static_cast<unsigned long long>(seed), final_loss[0], final_loss[1], win ? "K=2 <= K=1" : "K=2 > K=1",
                discounted[0], discounted[1]);
    std::fflush(stdout);
  }
  const double elapsed = seconds_since(start);
  return {wins >= 2 && elapsed <= 3600.0,
          fmt::format("K=2 final-iteration loss <= K=1 on {}/3 seeds (need 2), {} steps each, {:.0f}s (limit 3600s)",
                      wins, kSteps, elapsed)};
}

bool same_values(const Points& a, const Points& b) { return a.rows() == b.rows() && a == b; }

Outcome criterion_invariants() {
  const auto start = Clock::now();
  const RiggedMesh rig = make_mini_rig(Profile::kDesk);
  const SyntheticSubject subject = make_synthetic_subject(0, rig);
  std::vector<std::string> failures;

  // Large head outputs push the accumulated displacement into the clamp for every part.
  Config strong = default_config(Profile::kDesk);
  strong.dv_head_gain = 1.0;
  strong.iterations = 3;
  auto blocks = Blocks::create(strong);

  std::vector<RunOutput> runs;
  {
    ad::NoGradGuard no_grad;
    for (int k = 1; k <= 3; ++k) {
      Config c = strong;
      c.iterations = k;
      runs.push_back(run(subject.input_image, subject.pose_params, subject.template_mesh, *blocks, c));
    }
  }

  // Prefix determinism: each shorter run is bit-identical to the start of the K = 3 run.
  std::size_t prefix_checks = 0;
  for (std::size_t k = 0; k + 1 < runs.size(); ++k) {
    for (std::size_t t = 0; t < runs[k].records.size(); ++t) {
      const auto& x = runs[k].records[t];
      const auto& y = runs.back().records[t];
      ++prefix_checks;
      if (!same_values(x.mesh.vertices, y.mesh.vertices) || x.mesh.faces != y.mesh.faces ||
          !same_values(x.displacement, y.displacement) || x.texture.data != y.texture.data ||
          !std::equal(runs[k].renders[t].image.values().begin(), runs[k].renders[t].image.values().end(),
                      runs.back().renders[t].image.values().begin()))
        failures.push_back(fmt::format("prefix: K={} run differs from K=3 at t={}", k + 1, t));
    }
  }

  // Part bounds, eye immobility and anchor consistency at every iteration.
  std::size_t clamped = 0, eye_vertices = 0;
  for (const auto& rec : runs.back().records) {
    const auto& labels = rec.mesh.part_labels;
    for (Eigen::Index v = 0; v < rec.displacement.rows(); ++v) {
      const Part p = labels[static_cast<std::size_t>(v)];
      const double d = strong.delta.for_part(p);
      const double m = rec.displacement.row(v).cwiseAbs().maxCoeff();
      clamped += m == d && d > 0.0;
      if (m > d) failures.push_back(fmt::format("bound: t={} vertex {} |D|={:.17g} > {}", rec.t, v, m, d));
      if (rec.mesh.vertices.row(v) != rec.anchor.row(v) + rec.displacement.row(v))
        failures.push_back(fmt::format("anchor: t={} vertex {} is not anchor + D", rec.t, v));
      if (p == Part::kEyeball || p == Part::kEyelid) {
        ++eye_vertices;
        if (!rec.displacement.row(v).isZero(0.0) || rec.mesh.vertices.row(v) != rec.anchor.row(v))
          failures.push_back(fmt::format("eye: t={} vertex {} moved", rec.t, v));
      }
    }
  }
  if (clamped == 0) failures.push_back("bound: no vertex reached its clamp, the bound check was vacuous");
  if (eye_vertices == 0) failures.push_back("eye: no eyeball or eyelid vertices");

  // Gradient reach at the default configuration.
  const Config config = default_config(Profile::kDesk);
  auto fresh = Blocks::create(config);
  {
    const RunOutput out = run(subject.input_image, subject.pose_params, subject.template_mesh, *fresh, config);
    ad::backward(pipeline_loss(out, subject_supervision(subject), config).total);
  }
  std::size_t dead = 0;
  for (const auto& [name, t] : fresh->params.entries()) {
    bool any = false;
    if (t.has_grad())
      for (double g : t.grad()) any = any || g != 0.0;
    if (!any) {
      ++dead;
      failures.push_back("reach: " + name + " has an all-zero gradient");
    }
  }

  for (const auto& f : failures) std::printf("    FAIL %s\n", f.c_str());
  const double elapsed = seconds_since(start);
  return {failures.empty() && elapsed <= 300.0,
          fmt::format("{} prefix comparisons; {} clamped vertex-iterations; {} eye vertex-iterations fixed; "
                      "{} parameter tensors, {} dead; {:.1f}s (limit 300s)",
                      prefix_checks, clamped, eye_vertices, fresh->params.entries().size(), dead, elapsed)};
}

const std::vector<std::pair<std::string, std::function<Outcome()>>>& criteria() {
  static const std::vector<std::pair<std::string, std::function<Outcome()>>> list{
      {"gradient suite", criterion_gradients},
      {"geometry suite", criterion_geometry},
      {"round-trip suite", criterion_roundtrip},
      {"clipping boundaries", criterion_clipping},
      {"loss arithmetic", criterion_loss_arithmetic},
      {"overfit convergence", criterion_overfit},
      {"iteration trend", criterion_trend},
      {"invariant suite", criterion_invariants},
  };
  return list;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string which = argc > 1 ? argv[1] : "all";
  std::vector<int> selected;
  if (which == "all") {
    for (int i = 1; i <= static_cast<int>(criteria().size()); ++i) selected.push_back(i);
  } else {
    int n = 0;
    try {
      n = std::stoi(which);
    } catch (const std::exception&) {
    }
    if (n < 1 || n > static_cast<int>(criteria().size())) {
      std::fprintf(stderr, "usage: acceptance [1-8|all]\n");
      return 2;
    }
    selected.push_back(n);
  }

  int failed = 0;
  for (int n : selected) {
    const auto& [name, fn] = criteria()[static_cast<std::size_t>(n - 1)];
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", n, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
