#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace divlab {

// Deterministic random source with pinned output algorithms. The std::
// distributions are implementation-defined, so uniform/normal/shuffle are
// implemented here directly on top of mt19937_64 to keep every draw
// bit-stable across standard libraries and runs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; consumes exactly two uniforms per call.
  double normal();

  // Unbiased integer in [0, n) by rejection. n must be positive.
  uint64_t below(uint64_t n);

  // Fisher-Yates in-place shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Seeded permutation of 0..n-1.
  std::vector<int> permutation(int n);

  std::vector<double> normal_vector(int n);

 private:
  std::mt19937_64 engine_;
};

// FNV-1a over the bytes of a label.
uint64_t fnv1a64(std::string_view text);

// Stable per-stage seed derivation: stages of one run are independently
// reproducible from (master seed, label).
uint64_t derive_seed(uint64_t master, std::string_view label);

}  // namespace divlab
