#pragma once

#include "tta/tensor.hpp"

namespace tta {

// Mean structural similarity over sliding Gaussian windows (window 11,
// sigma 1.5, C1=(0.01L)^2, C2=(0.03L)^2, L=1), valid positions only.
// Accepts a single image (1,H,W)/(H,W) or equal-shaped stacks (N,1,H,W),
// averaging over images. Symmetric in its arguments.
double ssim(const Tensor& a, const Tensor& b);

}  // namespace tta
