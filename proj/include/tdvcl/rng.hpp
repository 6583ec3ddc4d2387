#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace tdvcl {

/// Reproducible random source.
///
/// Engine: std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Uniform doubles take the top 53 bits of one engine word.
/// Standard normals use the Box-Muller transform on two uniforms and cache the
/// second variate. Bounded integers use modulo with rejection on the
/// raw 64-bit stream. None of this goes through the implementation-defined
/// std::*_distribution classes, so a seed reproduces the same stream on every
/// conforming platform.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal();

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Independent child stream; the parent advances by one word.
  SeededRng split();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

/// splitmix64 finalizer, used to derive well-mixed child seeds.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace tdvcl
