#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace combo {

/// Derives an independent stream seed from the run's master seed.
///
/// Streams are keyed by a purpose tag ("plan", "data", ...) and an index
/// (usually the worker id), so adding a worker never perturbs the streams
/// of existing workers. The mixing is SplitMix64 over an FNV-1a hash of the
/// tag; both are fixed here and must not change between releases, or traces
/// recorded with older builds stop being reproducible.
std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose,
                          std::uint64_t index = 0) noexcept;

// mt19937_64 output is fixed by the standard; the conversions below avoid
// the implementation-defined std distributions so streams are portable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() {
    ++draws_;
    return engine_();
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double normal();

  // Uniform integer in [0, bound); bound must be positive.
  std::size_t below(std::size_t bound);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  // Number of raw draws so far; with the seed this pins the stream position.
  std::uint64_t draws() const noexcept { return draws_; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t draws_ = 0;
};

}  // namespace combo
