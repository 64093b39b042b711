#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

namespace covsel {

// Counter-based splittable generator. Every draw is a pure function of
// (key, counter), so a stream can be derived for any (seed, purpose, item)
// tuple without shared state. The mixing function is the SplitMix64
// finalizer applied twice with the key folded in between.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed) : key_(mix(seed ^ kSeedSalt)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  // Independent child stream; does not advance this generator.
  CounterRng split(std::uint64_t stream) const {
    return CounterRng(Key{mix(key_ ^ mix(stream + kStreamSalt))});
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  result_type operator()() { return at(counter_++); }

  // Random access into the stream.
  result_type at(std::uint64_t index) const {
    return mix(mix(index * kGolden + key_) ^ key_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return to_unit((*this)()); }

  // Uniform in (0, 1]; safe for log().
  double uniform_open0() { return 1.0 - uniform(); }

  // Uniform integer in [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t x = (*this)();
      const __uint128_t m = static_cast<__uint128_t>(x) * n;
      if (static_cast<std::uint64_t>(m) >= threshold) {
        return static_cast<std::uint64_t>(m >> 64);
      }
    }
  }

  // Standard normal via Box-Muller; consumes exactly two counters.
  double normal() {
    const double u1 = uniform_open0();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Standard normal at a fixed position of the stream (two counters wide).
  double normal_at(std::uint64_t index) const {
    const double u1 = 1.0 - to_unit(at(2 * index));
    const double u2 = to_unit(at(2 * index + 1));
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Fisher-Yates; the same seed yields the same permutation on every platform.
  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(values[i - 1], values[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    shuffle(std::span<std::size_t>(p));
    return p;
  }

 private:
  struct Key {
    std::uint64_t value;
  };
  explicit CounterRng(Key k) : key_(k.value) {}

  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kSeedSalt = 0x243F6A8885A308D3ULL;
  static constexpr std::uint64_t kStreamSalt = 0x13198A2E03707344ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static double to_unit(std::uint64_t x) {
    return static_cast<double>(x >> 11) * 0x1.0p-53;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace covsel
