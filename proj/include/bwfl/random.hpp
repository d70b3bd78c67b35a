#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace bwfl {

using Rng = std::mt19937_64;

// Named sub-streams. Every consumer of randomness draws from its own stream
// derived from (experiment seed, purpose, index) so that skipping work in one
// place never shifts the draws seen elsewhere.
enum class Stream : std::uint32_t {
  init = 1,
  partition = 2,
  holdout = 3,
  channel = 4,
  minibatch = 5,
  scheduler = 6,
  planning = 7,
  estimation = 8,
  synthetic = 9,
  placement = 10,
};

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace bwfl
