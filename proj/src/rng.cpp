#include "combo/rng.hpp"

#include <cmath>
#include <numbers>

namespace combo {
namespace {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose,
                          std::uint64_t index) noexcept {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ fnv1a(purpose));
  return splitmix64(h ^ index);
}

double Rng::normal() {
  // Box-Muller, one variate per call; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t bound) {
  // Rejection sampling removes modulo bias.
  const std::uint64_t b = bound;
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % b);
  std::uint64_t x = next();
  while (x >= limit) {
    x = next();
  }
  return static_cast<std::size_t>(x % b);
}

}  // namespace combo
