#pragma once

#include <bit>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>

namespace ldseg {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

/// Invalid tensor/grid dimensions or mismatched shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Invalid argument values (out-of-range labels, bad config, bad geometry).
struct ValueError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed or unreadable input/output files.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Derives an independent seed from a base seed and stream indices.
/// Used to make per-scene / per-tile / per-epoch randomness schedule-independent.
inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t state = 0x6c62272e07bb0142ULL;
  for (std::uint64_t p : parts) {
    state ^= p;
    state = detail::splitmix64(state);
  }
  return state;
}

/// Deterministic RNG with pinned value mappings. std::mt19937_64 is fully
/// specified by the standard; the distributions below avoid the
/// implementation-defined std::*_distribution algorithms so that a seed
/// reproduces bit-identical streams everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Multiply-shift mapping; bias is O(n / 2^64).
  std::int64_t uniform_int(std::int64_t n) {
    return static_cast<std::int64_t>(
        (static_cast<unsigned __int128>(eng_()) * static_cast<std::uint64_t>(n)) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace ldseg
