#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

#include "levisim/linalg.hpp"

namespace levisim {

/// Counter-based pseudo-random stream (Philox4x32-10).
///
/// Streams are keyed, not seeded: two streams with different keys are
/// statistically independent, and a stream's output depends only on its key
/// and the number of values drawn. This makes per-repetition substreams
/// reproducible regardless of scheduling, and keeps draw sequences aligned
/// between runs that share a key (common random numbers).
class RngStream {
 public:
  explicit RngStream(std::uint64_t key);

  /// Mixes (seed, path...) into a stream key. Typical path: protocol id,
  /// call index, repetition index.
  static RngStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);
  static std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53-bit resolution.
  double uniform();
  /// Standard normal via Box-Muller; always consumes exactly two uniforms.
  double normal();
  Vec3 normal3();

  std::uint64_t key() const { return key64_; }

 private:
  void refill();

  std::uint64_t key64_;
  std::array<std::uint32_t, 4> counter_{};
  std::array<std::uint32_t, 4> block_{};
  int avail_ = 0;  // unread 32-bit lanes in block_
};

}  // namespace levisim
