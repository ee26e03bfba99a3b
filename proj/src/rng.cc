#include "mcsearch/rng.h"

#include <cmath>
#include <numbers>

#include "mcsearch/common.h"

namespace mcsearch {

std::uint64_t SplitMix64::uniform(std::uint64_t bound) {
  if (bound == 0) throw Error("SplitMix64::uniform: empty range");
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    std::uint64_t r = next();
    if (r >= threshold) return r % bound;
  }
}

double SplitMix64::normal() {
  double u1 = uniform_real();
  double u2 = uniform_real();
  // 1 - u1 lies in (0, 1], keeping the log finite.
  return std::sqrt(-2.0 * std::log(1.0 - u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace mcsearch
