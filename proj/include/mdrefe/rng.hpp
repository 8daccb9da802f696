#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace mdrefe {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

/// SplitMix64 output function (Steele, Lea & Flood).
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Output number `index` of a SplitMix64 generator whose state starts at `seed`.
constexpr std::uint64_t splitmix64_at(std::uint64_t seed, std::uint64_t index) {
  return splitmix64_mix(seed + (index + 1) * kGoldenGamma);
}

/// Maps 64 random bits to [0, 1) with 53-bit resolution.
constexpr double to_unit_interval(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Child seed for a path of indices, e.g. {gamma level, budget level, replicate}.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64_mix(base ^ 0x6A09E667F3BCC909ULL);
  for (std::uint64_t v : path) s = splitmix64_mix(s ^ splitmix64_mix(v + kGoldenGamma));
  return s;
}

/// Counter-based random stream: the value at any position is a pure function
/// of (seed, position), so skipping ahead is O(1).
class SeededStream {
 public:
  using result_type = std::uint64_t;

  explicit constexpr SeededStream(std::uint64_t seed, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  constexpr std::uint64_t seed() const { return seed_; }
  constexpr std::uint64_t counter() const { return counter_; }

  constexpr std::uint64_t next_u64() { return splitmix64_at(seed_, counter_++); }
  constexpr double next_unit() { return to_unit_interval(next_u64()); }

  /// Value at absolute position `index` without moving the counter.
  constexpr std::uint64_t u64_at(std::uint64_t index) const { return splitmix64_at(seed_, index); }
  constexpr double unit_at(std::uint64_t index) const { return to_unit_interval(u64_at(index)); }

  constexpr void advance(std::uint64_t draws) { counter_ += draws; }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  constexpr result_type operator()() { return next_u64(); }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace mdrefe
