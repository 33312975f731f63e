#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace entrack {

// Seeded random source. All randomness in the library flows through this
// wrapper; the standard-library distributions are avoided on purpose so that
// frozen test values stay valid across standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53 bits of precision.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi). Modulo bias is irrelevant at the ranges
  // used here (all far below 2^32).
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(gen_() % static_cast<uint64_t>(hi - lo));
  }

  // Box-Muller; draws two uniforms per call, no cached spare.
  double normal() {
    constexpr double two_pi = 6.283185307179586476925287;
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = gen_() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

  template <typename T>
  const T& choice(const std::vector<T>& v) {
    return v[gen_() % v.size()];
  }

  // Derives a seed for an independent stream.
  uint64_t fork() { return gen_() ^ 0x9e3779b97f4a7c15ull; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace entrack
