#pragma once
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace gom {

// Deterministic across platforms: mt19937_64 is fully specified by the standard,
// and all variate transforms below are explicit (std distributions are not
// implementation-defined-free, so we avoid them).
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t bits() { return eng_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, cosine branch only; u1 is kept away from 0.
  double normal() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  int uniform_int(int n) {  // 0..n-1, rejection-free modulo bias negligible for our n
    return static_cast<int>(eng_() % static_cast<uint64_t>(n));
  }

  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(p[i], p[uniform_int(i + 1)]);
    return p;
  }

 private:
  std::mt19937_64 eng_;
};

// Stable substream derivation so parallel tasks get independent, order-free seeds.
uint64_t derive_seed(uint64_t master, uint64_t stream);

}  // namespace gom
