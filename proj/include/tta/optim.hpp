#pragma once

#include <cstdint>
#include <vector>

#include "tta/tensor.hpp"

namespace tta {

enum class OptimizerKind { kAdam, kSgdMomentum };
enum class Schedule { kCosine, kConstant };

// Per-parameter optimizer state, aligned with the list of adaptable
// parameters it was created for.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kAdam;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double momentum = 0.9;
  std::vector<Tensor> m;  // adam first moment / sgd velocity
  std::vector<Tensor> v;  // adam second moment
  int64_t step_count = 0;

  static OptimizerState make(OptimizerKind kind, const std::vector<Tensor*>& params);
};

// lr0 * 0.5 * (1 + cos(pi * step / total_steps))
double cosine_lr(int step, int total_steps, double lr0);

// In-place update of the adaptable parameters. Non-finite gradients poison
// the run and raise PoisonedStateError.
void optimizer_step(OptimizerState& state, const std::vector<Tensor*>& params,
                    const std::vector<Tensor>& grads, double lr);

}  // namespace tta
