#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "idn/autodiff.hpp"

namespace idn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates for an ordered parameter list.
struct AdamState {
  AdamOptions options;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

AdamState adam_init(std::span<Parameter* const> params, AdamOptions options = {});

/// One bias-corrected Adam update. Gradients are read, not cleared.
/// Throws std::logic_error if `state` was not built for `params`.
void adam_step(std::span<Parameter* const> params, AdamState& state);

}  // namespace idn
