#pragma once

#include <cstdint>
#include <vector>

#include "iterflow/autodiff.hpp"

namespace iterflow::ad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  // Zero moments shaped like `params`.
  static AdamState for_params(const ParamStore& params, AdamOptions options = {});
};

// One bias-corrected Adam update of every parameter in place. `grads` is in
// parameter order. Throws std::domain_error naming the parameter when a
// gradient holds NaN or Inf; nothing is modified in that case.
void adam_step(ParamStore& params, const std::vector<std::vector<double>>& grads, AdamState& state);

}  // namespace iterflow::ad
