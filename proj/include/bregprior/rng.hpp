#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace bregprior {

/// Purpose tags that separate the keyed random streams. Every random draw in
/// the library is addressed by (seed, tag, indices...), so results never
/// depend on evaluation order or thread schedule.
enum class StreamTag : std::uint64_t {
  ExperimentDraw = 1,
  Sgld = 2,
  LatentInit = 3,
  NetInit = 4,
  Sample = 5,
  DotTest = 6,
  Noise = 7,
  Mask = 8,
  Truth = 9,
  Check = 10,
};

using Engine = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Hashes a key tuple to a single 64-bit value.
std::uint64_t stream_key(std::uint64_t seed, StreamTag tag, std::initializer_list<std::uint64_t> idx = {});

/// Fresh engine for the given key tuple.
Engine make_stream(std::uint64_t seed, StreamTag tag, std::initializer_list<std::uint64_t> idx = {});

/// Counter-based uniform draw from {0, ..., n-1}; unbiased (rejection on the
/// 64-bit hash chain).
std::size_t keyed_index(std::uint64_t seed, StreamTag tag, std::initializer_list<std::uint64_t> idx, std::size_t n);

void fill_standard_normal(Engine& eng, std::span<double> out);

}  // namespace bregprior
