#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "t2d/core/tensor.hpp"

namespace t2d {

// splitmix64; used to derive independent streams from (seed, stream id).
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t stream_seed(uint64_t seed, uint64_t stream) {
  return mix64(mix64(seed) ^ mix64(stream * 0x9e3779b97f4a7c15ULL + 1));
}

// Deterministic RNG. Gaussian samples use an explicit Box-Muller transform on
// top of mt19937_64 so sequences are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  static Rng for_stream(uint64_t seed, uint64_t stream) {
    return Rng(stream_seed(seed, stream));
  }

  uint64_t next_u64() { return eng_(); }

  // uniform in [0,1)
  double uniform() {
    return static_cast<double>(eng_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(uniform() * static_cast<double>(n)) % n;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * M_PI * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

  template <class T>
  void fill_normal(TensorT<T>& t, double mean = 0.0, double stddev = 1.0) {
    for (int64_t i = 0; i < t.numel(); ++i)
      t[i] = static_cast<T>(mean + stddev * normal());
  }

  template <class T>
  void fill_uniform(TensorT<T>& t, double lo, double hi) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(uniform(lo, hi));
  }

  template <class T>
  TensorT<T> normal_tensor(std::vector<int> shape, double mean = 0.0, double stddev = 1.0) {
    TensorT<T> t(std::move(shape));
    fill_normal(t, mean, stddev);
    return t;
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace t2d
