#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace rcnnlab {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Mixes a base seed with a sequence of stream tags (scene id, head index,
/// step, ...). Distinct tag sequences give decorrelated streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = splitmix64(base);
  for (std::uint64_t t : tags) s = splitmix64(s ^ splitmix64(t + 0x632be59bd9b4e019ULL));
  return s;
}

// Stream tags used across the pipeline.
namespace stream {
inline constexpr std::uint64_t kTrainScenes = 1;
inline constexpr std::uint64_t kEvalScenes = 2;
inline constexpr std::uint64_t kInit = 3;
inline constexpr std::uint64_t kSceneChoice = 4;
inline constexpr std::uint64_t kProposals = 5;
inline constexpr std::uint64_t kSampling = 6;
inline constexpr std::uint64_t kEvalProposals = 7;
}  // namespace stream

}  // namespace rcnnlab
