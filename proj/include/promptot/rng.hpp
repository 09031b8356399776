// Seeded random source. Gaussian draws use Box-Muller so the stream does not
// depend on the standard library's distribution implementations.
#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace promptot {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (polar form avoided to keep draws cheap).
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Uniform integer in [0, n). Rejection-free modulo bias is irrelevant at
  /// the n used here but kept exact anyway.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  /// Derived generator for an independent stream (per slide, per fold, ...).
  Rng fork(std::uint64_t stream) const {
    return Rng(splitmix(seed_base_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1))));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  struct Engine {
    explicit Engine(std::uint64_t s) : state(s) {}
    std::uint64_t operator()() {
      // xorshift* keeps the generator header-only and fully specified.
      std::uint64_t x = state;
      x ^= x >> 12;
      x ^= x << 25;
      x ^= x >> 27;
      state = x;
      return x * 0x2545f4914f6cdd1dULL;
    }
    std::uint64_t state;
  };

  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    x = x ^ (x >> 31);
    return x | 1ULL;  // xorshift state must be nonzero
  }

  Engine engine_;
  std::uint64_t seed_base_ = engine_.state;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace promptot
