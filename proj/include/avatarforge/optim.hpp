#pragma once

#include <string>
#include <vector>

#include "avatarforge/tensor.hpp"

namespace avatarforge::ad {

/// Named trainable tensors in registration order.
class ParamStore {
 public:
  /// Registers a new leaf parameter; throws kConfig on a duplicate name.
  Tensor add(const std::string& name, Shape shape, std::vector<double> init);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t num_scalars() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
};

/// One bias-corrected Adam update of every parameter in `params`; a missing gradient counts as zero.
/// Returns the global gradient norm before clipping.
double adam_step(ParamStore& params, AdamState& state, double lr, const AdamOptions& options = {});

/// Linear warm-up from 0 at step 0 to base_lr at `warmup`, then cosine decay reaching 0 at `total`.
double lr_schedule(long step, long total, double base_lr, long warmup);

}  // namespace avatarforge::ad
