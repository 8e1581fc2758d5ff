#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace upg {

using Engine = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic child stream keyed by (seed, path...). Streams with different
// paths are statistically independent; the same path always yields the same
// stream, which is what makes per-question / per-rollout work reorderable.
inline Engine derive_stream(std::uint64_t seed,
                            std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(seed);
  for (auto p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return Engine{h};
}

// Uniform in [0, 1) with 53 random bits; independent of the standard
// library's distribution implementations, so results are portable.
inline double uniform01(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n) by rejection (n > 0).
inline std::uint64_t uniform_index(Engine& rng, std::uint64_t n) {
  const std::uint64_t limit = Engine::max() - Engine::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

// Stream-key tags so derived paths do not collide across subsystems.
enum class StreamTag : std::uint64_t {
  kQuestionPool = 1,
  kBatch = 2,
  kRollout = 3,
  kEval = 4,
  kInit = 5,
  kBootstrap = 6,
  kInstance = 7,
};

inline std::uint64_t tag(StreamTag t) { return static_cast<std::uint64_t>(t); }

}  // namespace upg
