#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace mcsearch {

// SplitMix64 (Steele, Lea and Flood; reference code by S. Vigna).
// Every sampling decision in the toolkit draws from this generator so that
// results are reproducible across implementations. Reference outputs for
// seed 1234567: 6457827717110365317, 3203168211198807973, ...
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform integer in [0, bound) by rejection of the biased low range.
  std::uint64_t uniform(std::uint64_t bound);

  // Uniform double in [0, 1) from the top 53 bits.
  double uniform_real() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; consumes two draws per call.
  double normal();

  // Derives an independent stream for a named sub-task.
  SplitMix64 fork(std::uint64_t salt) {
    return SplitMix64(next() ^ (salt * 0xD1B54A32D192ED03ULL));
  }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace mcsearch
