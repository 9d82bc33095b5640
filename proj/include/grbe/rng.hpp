#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "grbe/tensor.hpp"

namespace grbe {

/// splitmix64 finalizer; used only to derive stream seeds from key tuples.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Fixed role constants for keyed stream derivation. Values are arbitrary but
// must never change: checkpoints and corpora are reproduced from them.
namespace stream_key {
constexpr std::uint64_t init = 0x01;
constexpr std::uint64_t generate = 0x02;
constexpr std::uint64_t shuffle = 0x03;
constexpr std::uint64_t batch = 0x04;
constexpr std::uint64_t grad_check = 0x05;
constexpr std::uint64_t augment = 0x06;
}  // namespace stream_key

/// Deterministic random stream. The engine (mt19937_64) is pinned by the C++
/// standard; value derivation below is hand-rolled because the standard
/// distribution objects are implementation-defined and would break
/// byte-identical reruns across toolchains.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(seed) {}

  /// Independent stream for (seed, key...). Same inputs -> same stream.
  static RngStream keyed(std::uint64_t seed, std::initializer_list<std::uint64_t> key) {
    std::uint64_t h = mix64(seed);
    for (std::uint64_t k : key) h = mix64(h ^ mix64(k));
    return RngStream(h);
  }

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform on [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0, 1); safe input for logit(u).
  double uniform_open01() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Uniform integer in [0, n); rejection sampling, no modulo bias.
  int uniform_int(int n) {
    require(n > 0, "uniform_int: n must be positive");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t bound = (UINT64_MAX / un) * un;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r < bound) return static_cast<int>(r % un);
    }
  }

  /// Index drawn proportionally to non-negative weights.
  int weighted_choice(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) {
      require(w >= 0.0, "weighted_choice: negative weight");
      total += w;
    }
    require(total > 0.0, "weighted_choice: all weights zero");
    double x = uniform01() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      x -= weights[i];
      if (x < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;  // rounding fell off the end
  }

  /// Hard 0/1 decision per entry (x > 0.5). Lives on the random source so a
  /// record/replay wrapper can freeze the outcome; here it is pure compute.
  std::vector<std::uint8_t> threshold_bits(const std::vector<double>& xs) {
    std::vector<std::uint8_t> bits(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) bits[i] = xs[i] > 0.5 ? 1 : 0;
    return bits;
  }

  template <class T>
  void shuffle(std::vector<T>& xs) {  // Fisher-Yates
    for (int i = static_cast<int>(xs.size()) - 1; i > 0; --i) {
      const int j = uniform_int(i + 1);
      std::swap(xs[static_cast<std::size_t>(i)], xs[static_cast<std::size_t>(j)]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace grbe
