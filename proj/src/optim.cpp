#include "avatarforge/optim.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace avatarforge::ad {

Tensor ParamStore::add(const std::string& name, Shape shape, std::vector<double> init) {
  if (contains(name)) throw Error(ErrorCode::kConfig, fmt::format("parameter '{}' registered twice", name));
  entries_.emplace_back(name, Tensor::parameter(std::move(shape), std::move(init)));
  return entries_.back().second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw Error(ErrorCode::kConfig, fmt::format("unknown parameter '{}'", name));
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return true;
  return false;
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

double adam_step(ParamStore& params, AdamState& state, double lr, const AdamOptions& options) {
  const auto& entries = params.entries();
  if (state.m.size() != entries.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& e : entries) {
      state.m.emplace_back(e.second.size(), 0.0);
      state.v.emplace_back(e.second.size(), 0.0);
    }
  }
  double sq = 0.0;
  for (const auto& e : entries)
    for (double g : e.second.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  const double clip = options.grad_clip > 0.0 && norm > options.grad_clip ? options.grad_clip / norm : 1.0;

  ++state.step;
  const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Tensor t = entries[p].second;
    const auto& grad = t.grad();
    auto values = t.mutable_values();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i] * clip;
      m[i] = options.beta1 * m[i] + (1.0 - options.beta1) * g;
      v[i] = options.beta2 * v[i] + (1.0 - options.beta2) * g * g;
      values[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options.eps);
    }
  }
  return norm;
}

double lr_schedule(long step, long total, double base_lr, long warmup) {
  if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total <= warmup) return base_lr;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

}  // namespace avatarforge::ad
