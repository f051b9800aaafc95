#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace biaslens {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer. Used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// 64-bit FNV-1a. Stable across platforms and runs, unlike std::hash.
constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for the stream owned by one named operation. Operations that derive
/// their own stream never perturb each other's draws.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view operation) noexcept {
  return mix64(root ^ mix64(fnv1a64(operation)));
}

/// Seed for replicate `index` of an operation stream. Replicates seeded this
/// way give identical results whatever order (or thread) they run on.
constexpr std::uint64_t replicate_seed(std::uint64_t stream, std::uint64_t index) noexcept {
  return mix64(stream ^ mix64(index + 0x632be59bd9b4e019ULL));
}

inline Engine make_engine(std::uint64_t seed) { return Engine(seed); }

inline double uniform01(Engine& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace biaslens
