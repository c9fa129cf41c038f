#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace xmark {

// Deterministic splitmix64-based generator. All randomness in the project goes
// through this type so runs are reproducible across platforms and standard
// library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ULL) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    // Modulo bias is negligible for n << 2^64 and determinism matters more here.
    return n == 0 ? 0 : next_u64() % n;
  }
  int uniform_int(int lo, int hi_exclusive) {
    return lo + static_cast<int>(next_below(static_cast<std::uint64_t>(hi_exclusive - lo)));
  }

  double normal() {
    // Box-Muller, always consuming two uniforms; no cached spare so streams
    // stay position-independent.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  double normal(double mean, double stdev) { return mean + stdev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derived independent stream; `tag` separates uses under one master seed.
  Rng fork(std::uint64_t tag) const {
    std::uint64_t z = state_ + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::uint64_t state_;
};

}  // namespace xmark
