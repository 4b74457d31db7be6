#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "nvde/tensor.hpp"

namespace nvde {

// Seeded generator with hand-rolled transforms so that sequences are
// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0,1) with 53 random bits
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(uniform() * (hi - lo + 1));
  }

  template <typename T>
  Tensor<T> uniform_tensor(Shape s, T a, T b) {
    Tensor<T> t = Tensor<T>::uninit(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(uniform(a, b));
    return t;
  }

  template <typename T>
  Tensor<T> normal_tensor(Shape s, T mean, T stddev) {
    Tensor<T> t = Tensor<T>::uninit(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(mean + stddev * normal());
    return t;
  }

 private:
  std::mt19937_64 gen_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace nvde
