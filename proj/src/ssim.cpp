#include "tta/ssim.hpp"

#include <array>
#include <cmath>
#include <vector>

#include "tta/errors.hpp"

namespace tta {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (0.01 * L)^2 with L = 1
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWindow>& window_1d() {
  static const std::array<double, kWindow> w = [] {
    std::array<double, kWindow> k{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
      const double d = i - (kWindow - 1) / 2.0;
      k[static_cast<size_t>(i)] = std::exp(-0.5 * d * d / (kSigma * kSigma));
      sum += k[static_cast<size_t>(i)];
    }
    for (double& v : k) v /= sum;
    return k;
  }();
  return w;
}

// Separable valid-mode Gaussian filtering: (H,W) -> (H-10, W-10).
void filter_valid(const double* in, int h, int w, std::vector<double>& out) {
  const auto& k = window_1d();
  const int ow = w - kWindow + 1;
  const int oh = h - kWindow + 1;
  std::vector<double> tmp(static_cast<size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWindow; ++i) s += k[static_cast<size_t>(i)] * in[y * w + x + i];
      tmp[static_cast<size_t>(y) * ow + x] = s;
    }
  out.assign(static_cast<size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWindow; ++i) s += k[static_cast<size_t>(i)] * tmp[static_cast<size_t>(y + i) * ow + x];
      out[static_cast<size_t>(y) * ow + x] = s;
    }
}

double ssim_image(const double* a, const double* b, int h, int w) {
  if (h < kWindow || w < kWindow)
    throw ShapeError("ssim: image smaller than the 11x11 window");
  const size_t n = static_cast<size_t>(h) * w;
  std::vector<double> aa(n), bb(n), ab(n);
  for (size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  std::vector<double> mu_a, mu_b, e_aa, e_bb, e_ab;
  filter_valid(a, h, w, mu_a);
  filter_valid(b, h, w, mu_b);
  filter_valid(aa.data(), h, w, e_aa);
  filter_valid(bb.data(), h, w, e_bb);
  filter_valid(ab.data(), h, w, e_ab);

  double total = 0.0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
             ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
  }
  return total / static_cast<double>(mu_a.size());
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError("ssim: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  int h = 0, w = 0, count = 1;
  if (a.rank() == 2) {
    h = a.dim(0);
    w = a.dim(1);
  } else if (a.rank() == 3) {
    if (a.dim(0) != 1) throw ShapeError("ssim: expected a single channel");
    h = a.dim(1);
    w = a.dim(2);
  } else if (a.rank() == 4) {
    if (a.dim(1) != 1) throw ShapeError("ssim: expected a single channel");
    count = a.dim(0);
    h = a.dim(2);
    w = a.dim(3);
  } else {
    throw ShapeError("ssim: expected (H,W), (1,H,W) or (N,1,H,W), got " + a.shape_string());
  }
  const size_t img = static_cast<size_t>(h) * w;
  double total = 0.0;
  for (int i = 0; i < count; ++i)
    total += ssim_image(a.data.data() + static_cast<size_t>(i) * img,
                        b.data.data() + static_cast<size_t>(i) * img, h, w);
  return total / count;
}

}  // namespace tta
