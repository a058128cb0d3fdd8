#include "bregprior/rng.hpp"

#include <limits>

namespace bregprior {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_key(std::uint64_t seed, StreamTag tag, std::initializer_list<std::uint64_t> idx) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(tag));
  for (std::uint64_t i : idx) h = splitmix64(h ^ (i + 0x632be59bd9b4e019ULL));
  return h;
}

Engine make_stream(std::uint64_t seed, StreamTag tag, std::initializer_list<std::uint64_t> idx) {
  const std::uint64_t h = stream_key(seed, tag, idx);
  std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Engine(seq);
}

std::size_t keyed_index(std::uint64_t seed, StreamTag tag, std::initializer_list<std::uint64_t> idx, std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  // Largest multiple of n representable; values above it are rejected.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t h = stream_key(seed, tag, idx);
  while (h >= limit) h = splitmix64(h);
  return static_cast<std::size_t>(h % bound);
}

void fill_standard_normal(Engine& eng, std::span<double> out) {
  std::normal_distribution<double> nd(0.0, 1.0);
  for (double& v : out) v = nd(eng);
}

}  // namespace bregprior
