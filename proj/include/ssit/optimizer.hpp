#pragma once

#include <vector>

#include "ssit/tensor.hpp"

namespace ssit {

struct AdamWConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.1f;
};

// Per-parameter first/second moments, lazily sized on the first step.
struct AdamWState {
  size_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

// Decoupled-weight-decay Adam with bias-corrected moments. Decay is
// applied directly to the parameter, scaled by lr. Parameters with no
// accumulated gradient are treated as grad == 0.
void adamw_step(std::vector<Tensor>& params, AdamWState& state,
                const AdamWConfig& cfg, float lr);

}  // namespace ssit
