#include "tta/optim.hpp"

#include <cmath>

#include "tta/errors.hpp"

namespace tta {

OptimizerState OptimizerState::make(OptimizerKind kind, const std::vector<Tensor*>& params) {
  OptimizerState s;
  s.kind = kind;
  for (const Tensor* p : params) {
    s.m.emplace_back(p->shape);
    if (kind == OptimizerKind::kAdam) s.v.emplace_back(p->shape);
  }
  return s;
}

double cosine_lr(int step, int total_steps, double lr0) {
  if (step < 0 || step > total_steps || total_steps <= 0)
    throw ContractError("cosine_lr: step out of range");
  return lr0 * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / total_steps));
}

void optimizer_step(OptimizerState& state, const std::vector<Tensor*>& params,
                    const std::vector<Tensor>& grads, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ContractError("optimizer_step: parameter/gradient count mismatch");
  for (size_t k = 0; k < grads.size(); ++k) {
    if (!params[k]->same_shape(grads[k]))
      throw ContractError("optimizer_step: gradient shape mismatch for parameter " +
                          std::to_string(k));
    if (!grads[k].all_finite())
      throw PoisonedStateError("optimizer_step: non-finite gradient for parameter " +
                               std::to_string(k));
  }
  state.step_count += 1;
  const auto t = static_cast<double>(state.step_count);
  for (size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = grads[k];
    if (state.kind == OptimizerKind::kAdam) {
      const double bc1 = 1.0 - std::pow(state.beta1, t);
      const double bc2 = 1.0 - std::pow(state.beta2, t);
      for (size_t i = 0; i < p.numel(); ++i) {
        double& m = state.m[k][i];
        double& v = state.v[k][i];
        m = state.beta1 * m + (1.0 - state.beta1) * g[i];
        v = state.beta2 * v + (1.0 - state.beta2) * g[i] * g[i];
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
      }
    } else {
      for (size_t i = 0; i < p.numel(); ++i) {
        double& vel = state.m[k][i];
        vel = state.momentum * vel + g[i];
        p[i] -= lr * vel;
      }
    }
  }
}

}  // namespace tta
