#pragma once

#include <cstdint>

namespace emdiff {

/// Counter-based generator: each draw is a bijective mix of (key, counter),
/// so streams can be derived per chain or per measurement without sharing
/// state. Output is identical on every platform for the integer draws; the
/// Gaussian path goes through std::log/std::cos.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1).
  double uniform() noexcept;
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t uniform_index(std::uint64_t n) noexcept;
  double normal() noexcept;

  /// Independent stream keyed by (this stream's key, index). Does not advance this stream.
  Rng derive(std::uint64_t index) const noexcept;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  Rng(std::uint64_t key, std::uint64_t counter, bool) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept;

}  // namespace emdiff
