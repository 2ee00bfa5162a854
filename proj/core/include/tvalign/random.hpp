#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace tvalign {

/// Seeded random source threaded explicitly through every sampling call.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. Distributions are implemented here rather than taken from
/// <random> because the standard leaves their algorithms unspecified, which
/// would break cross-platform reproducibility.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix(seed)), engine_(key_) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();

  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);

  /// Derives an independent stream keyed by `stream`. Does not advance this
  /// generator, so splits depend only on the seed and the key.
  [[nodiscard]] Rng split(std::uint64_t stream) const;

  /// SplitMix64 finalizer.
  static std::uint64_t mix(std::uint64_t x);

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

/// Stable 64-bit FNV-1a hash, used for seeds derived from names and for
/// fingerprints.
std::uint64_t fnv1a(const void* data, std::size_t size,
                    std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace tvalign
