#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace railkd {

/// SplitMix64 generator.
///
/// Chosen over the <random> engines and distributions because their outputs
/// are implementation-defined; every draw here is specified bit-for-bit, so a
/// seed reproduces the same selections, batches and initial weights on any
/// platform. State advances by the golden-ratio increment and each output is
/// passed through the MurmurHash3-style finalizer.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform integer in [0, bound). Rejection sampling, no modulo bias.
  std::uint64_t uniform_below(std::uint64_t bound);

  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(
                    uniform_below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller (no cached second value).
  double normal();

  /// Independent child generator; advances this one by one draw.
  Rng split() { return Rng(next_u64()); }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

/// Seed for a derived stream, e.g. derive_seed(run_seed, "student-init").
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace railkd
