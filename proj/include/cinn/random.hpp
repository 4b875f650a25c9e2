#pragma once

#include <cstdint>
#include <random>

namespace cinn {

// Independent random streams derived from one master seed, so that toggling
// one stochastic feature never shifts the draws of another.
enum class Stream : std::uint32_t {
  kFolds = 1,
  kInit = 2,
  kShuffle = 3,
  kDropout = 4,
  kInputNoise = 5,
  kPcgradOrder = 6,
  kSynthetic = 7,
};

inline std::mt19937_64 make_stream(std::uint64_t master_seed, Stream stream,
                                   std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed),
                    static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace cinn
