#pragma once

// Seed derivation for independent, order-free random substreams. Every draw
// in the simulator comes from an engine keyed by (seed, path...), so results
// do not depend on thread scheduling or loop order.

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace trybuy::rng {

using Engine = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t tag(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t state = splitmix64(seed);
  for (std::uint64_t p : path) state = splitmix64(state ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return state;
}

inline Engine substream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = derive(seed, path);
  std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32),
                    static_cast<std::uint32_t>(splitmix64(s)),
                    static_cast<std::uint32_t>(splitmix64(s) >> 32)};
  return Engine(seq);
}

}  // namespace trybuy::rng
