// SPDX-License-Identifier: Apache-2.0
#ifndef XINT_CORE_RNG_HPP
#define XINT_CORE_RNG_HPP

#include <cstdint>
#include <vector>

namespace xint {

// Counter-based generator: output i is a hash of (seed, i), so the stream is
// bit-identical for a given seed, cheap to checkpoint (seed + counter), and
// splittable into independent child streams without consuming the parent.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  uint64_t seed() const { return seed_; }
  uint64_t counter() const { return counter_; }

  uint64_t next_u64() { return mix(seed_ + kGolden * ++counter_); }

  // Uniform in [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n). Modulo bias is irrelevant at our scales.
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  // Derive an independent stream; the parent state is untouched.
  Rng split(uint64_t stream) const { return Rng(mix(seed_ ^ mix(stream + kGolden))); }

  template <typename I>
  void shuffle(std::vector<I>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ull;

  // splitmix64 finalizer
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t seed_;
  uint64_t counter_;
};

}  // namespace xint

#endif
