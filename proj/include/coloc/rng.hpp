#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace coloc {

// Deterministic PRNG. The mt19937_64 engine sequence is pinned by the
// standard; the distributions are hand-rolled because the std ones are
// implementation-defined and would break byte-identical reproducibility.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n), rejection sampled to avoid modulo bias.
  int below(int n) {
    if (n <= 0) throw std::invalid_argument("Rng::below needs a positive bound");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return static_cast<int>(x % bound);
  }

  int range(int lo, int hi_inclusive) { return lo + below(hi_inclusive - lo + 1); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[static_cast<std::size_t>(below(i + 1))]);
    }
  }

  // Samples k distinct indices from [0, n) in draw order.
  std::vector<int> sample_without_replacement(int n, int k);

 private:
  std::mt19937_64 gen_;
};

// SplitMix64-style combiner for deriving independent seed streams
// (per image, per epoch, ...) from one master seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace coloc
