#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sdba {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream key from a base seed and a path of
/// discriminators, e.g. (seed, round, client_id).
inline std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

inline Rng make_rng(std::initializer_list<std::uint64_t> parts) { return Rng(stream_key(parts)); }

// Stream tags keep the seed spaces of different consumers apart.
enum class Stream : std::uint64_t {
  kInit = 1,
  kCorpus = 2,
  kPoison = 3,
  kBackdoorTest = 4,
  kBenignTest = 5,
  kSampling = 6,
  kClientOrder = 7,
  kServerNoise = 8,
};

inline std::uint64_t tag(Stream s) noexcept { return static_cast<std::uint64_t>(s); }

}  // namespace sdba
