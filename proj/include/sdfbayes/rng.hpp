#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sdfb {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; decorrelates nearby seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent sub-stream seed from a parent seed and a path of
/// labels, e.g. derive_seed(replicate, {kOutcomeStream}).
inline std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(parent);
  for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

// Stream labels.
inline constexpr std::uint64_t kOutcomeStream = 1;
inline constexpr std::uint64_t kEngineStream = 2;
inline constexpr std::uint64_t kSamplerStream = 3;
inline constexpr std::uint64_t kThompsonStream = 4;
inline constexpr std::uint64_t kExpectedImprovementStream = 5;
inline constexpr std::uint64_t kPriorSeedStream = 6;

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

/// Beta(a, b) via two gamma draws.
inline double beta_draw(Rng& rng, double a, double b) {
  const double x = std::gamma_distribution<double>(a, 1.0)(rng);
  const double y = std::gamma_distribution<double>(b, 1.0)(rng);
  const double s = x + y;
  return s > 0.0 ? x / s : 0.5;
}

}  // namespace sdfb
