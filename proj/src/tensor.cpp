#include "tta/tensor.hpp"

#include <cmath>

namespace tta {

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace tta
