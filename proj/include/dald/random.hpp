#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dald {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Order-sensitive hash of a key tuple. Streams derived from it do not depend
/// on the order in which other streams were consumed.
constexpr std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

inline Engine make_engine(std::initializer_list<std::uint64_t> parts) {
  return Engine(derive_seed(parts));
}

// Domain tags keep streams for different purposes apart.
namespace stream {
inline constexpr std::uint64_t kFeatureNoise = 0x11;
inline constexpr std::uint64_t kDropout = 0x22;
inline constexpr std::uint64_t kSynthetic = 0x33;
inline constexpr std::uint64_t kBandwidth = 0x44;
inline constexpr std::uint64_t kSplit = 0x55;
inline constexpr std::uint64_t kPower = 0x66;
inline constexpr std::uint64_t kInit = 0x77;
inline constexpr std::uint64_t kShuffle = 0x88;
inline constexpr std::uint64_t kRound = 0x99;
inline constexpr std::uint64_t kRandomPick = 0xaa;
}  // namespace stream

}  // namespace dald
