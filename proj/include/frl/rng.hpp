#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace frl {

/// Deterministic random stream. All sampling in the library goes through
/// this class so that a (seed, stream) pair reproduces byte-identical runs;
/// the categorical draw uses an explicit inverse-CDF walk instead of
/// std::discrete_distribution, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : gen_(mix(seed, stream)) {}

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    // rejection sampling to avoid modulo bias
    const std::uint64_t bound = ~std::uint64_t{0} - (~std::uint64_t{0} % static_cast<std::uint64_t>(n));
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= bound);
    return static_cast<int>(x % static_cast<std::uint64_t>(n));
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Index i with probability probs[i]. Probabilities must be nonnegative;
  /// they are normalized by their sum on the fly.
  int categorical(std::span<const double> probs) {
    if (probs.empty()) throw std::invalid_argument("Rng::categorical: empty support");
    double total = 0.0;
    for (double p : probs) total += p;
    double u = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size() - 1);  // guard against rounding at u ~ total
  }

  std::uint64_t raw() { return gen_(); }

 private:
  // splitmix64 finalizer; decorrelates (seed, stream) pairs before seeding
  // the mersenne twister.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 gen_;
};

}  // namespace frl
