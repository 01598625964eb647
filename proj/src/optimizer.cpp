#include "ssit/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ssit {

void adamw_step(std::vector<Tensor>& params, AdamWState& state,
                const AdamWConfig& cfg, float lr) {
  if (lr < 0.0f) throw std::invalid_argument("adamw_step: negative lr");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), 0.0f);
      state.v[i].assign(params[i].numel(), 0.0f);
    }
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adamw_step: state holds " +
                                std::to_string(state.m.size()) +
                                " moments for " +
                                std::to_string(params.size()) + " params");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].mutable_data();
    if (state.m[i].size() != p.size())
      throw std::invalid_argument("adamw_step: moment/parameter size mismatch");
    const bool has_grad = params[i].has_grad();
    const std::vector<float>* g = has_grad ? &params[i].grad() : nullptr;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < p.size(); ++j) {
      const float gj = has_grad ? (*g)[j] : 0.0f;
      p[j] -= lr * cfg.weight_decay * p[j];
      m[j] = cfg.beta1 * m[j] + (1.0f - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0f - cfg.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

}  // namespace ssit
