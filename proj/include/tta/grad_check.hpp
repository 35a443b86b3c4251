#pragma once

#include <functional>
#include <vector>

#include "tta/tape.hpp"

namespace tta {

// Outcome of comparing reverse-mode gradients against central finite
// differences. The pass rule follows the configured tolerance with an
// absolute floor rescuing near-zero gradients (saturated losses).
struct GradReport {
  struct PerParam {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
  };
  std::vector<PerParam> per_param;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  bool pass = false;
};

// Builds the loss on a fresh tape from the given parameter leaves. Must be
// deterministic: grad_check re-invokes it for every perturbed coordinate.
using LossBuilder = std::function<Value(Tape&, const std::vector<Value>&)>;

GradReport grad_check(const LossBuilder& builder, const std::vector<Tensor>& params,
                      double h = 1e-5, double tol = 1e-5, double abs_floor = 1e-9);

}  // namespace tta
