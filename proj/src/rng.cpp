#include "tta/rng.hpp"

#include <cmath>

#include "tta/errors.hpp"

namespace tta {

double Rng::normal() {
  // u1 in (0,1] so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int Rng::poisson(double lambda) {
  if (lambda < 0.0) throw DomainError("poisson: negative rate");
  if (lambda == 0.0) return 0;
  if (lambda > 700.0) throw DomainError("poisson: rate too large for product method");
  const double limit = std::exp(-lambda);
  int k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= uniform();
  } while (p > limit);
  return k - 1;
}

uint64_t Rng::below(uint64_t n) {
  if (n == 0) throw DomainError("below: empty range");
  const uint64_t rem = (~uint64_t{0}) % n;
  const uint64_t bound = ~uint64_t{0} - rem;  // largest multiple of n minus 1
  uint64_t r;
  do {
    r = next_u64();
  } while (r > bound);
  return r % n;
}

}  // namespace tta
