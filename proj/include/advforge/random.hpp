#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace advforge {

/// SplitMix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Child seed for a named consumer ("model", "shuffle", "attack", ...).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose) {
  return mix_seed(master ^ mix_seed(fnv1a(purpose)));
}

/// mt19937_64 with platform-independent float conversions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 24 bits of resolution.
  float uniform01() { return static_cast<float>(engine_() >> 40) * 0x1.0p-24f; }

  // Uniform in [lo, hi].
  float uniform(float lo, float hi) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return static_cast<float>(static_cast<double>(lo) + u * (static_cast<double>(hi) - static_cast<double>(lo)));
  }

  std::size_t below(std::size_t bound) { return static_cast<std::size_t>(engine_() % bound); }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace advforge
