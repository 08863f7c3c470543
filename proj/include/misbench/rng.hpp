#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace misbench {

// Seed discipline (version 1):
//   stream seed = mix64(seed ^ mix64(fnv1a64(key) + ordinal))
//   engine      = std::mt19937_64(stream seed)
//   below(n)    = rejection sampling on the raw 64-bit output
//   uniform()   = top 53 bits / 2^53
// Every step is fully specified, so replays are bit-identical across
// compilers and platforms.
inline constexpr int kSeedSchemeVersion = 1;

std::uint64_t fnv1a64(std::string_view bytes) noexcept;

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

std::uint64_t derive_seed(std::uint64_t seed, std::string_view key,
                          std::uint64_t ordinal = 0) noexcept;

std::string hex64(std::uint64_t value);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  // Uniform real in [0, 1).
  double uniform();

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  // k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
};

}  // namespace misbench
