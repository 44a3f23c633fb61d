#pragma once

// Counter-friendly RNG for the pulse simulator. splitmix64 is tiny, passes
// BigCrush-level avalanche for this use, and makes per-chunk seeding trivial,
// which is what buys bit-identical results under any thread count. std's
// engines are avoided on purpose: distribution implementations vary across
// standard libraries and would break cross-build reproducibility.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace cvqkd {

class SplitMix64 {
public:
  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  constexpr std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe as a log argument.
  double uniform_pos() { return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53; }

  struct NormalPair {
    double z0, z1;
  };

  // Box-Muller. Consumes exactly two raw draws; callers rely on that for the
  // documented per-pulse draw budget.
  NormalPair normal_pair() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(a), r * std::sin(a)};
  }

private:
  std::uint64_t state_;
};

// Simulation work is split into fixed-size chunks; chunk c of logical stream
// s under user seed q is generated by a fresh SplitMix64 seeded with
// chunk_seed(q, c, s). The extra mixing pass decorrelates the (seed, chunk,
// stream) lattice so nearby seeds do not share nearby sequences.
inline constexpr std::size_t kRngChunk = 1u << 16;

inline constexpr std::uint64_t chunk_seed(std::uint64_t seed, std::uint64_t chunk_index,
                                          std::uint64_t stream) {
  SplitMix64 g(seed);
  const std::uint64_t base = g.next();
  SplitMix64 h(base ^ (0xd1342543de82ef95ULL * (chunk_index + 1)) ^
               (0xac564b05d7c3f9ddULL * (stream + 1)));
  return h.next();
}

}  // namespace cvqkd
