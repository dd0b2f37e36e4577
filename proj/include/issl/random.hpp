#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace issl {

// Deterministic seeded randomness. Every consumer derives its own engine
// from (master seed, stream id, path...) so streams never interleave:
// disabling one consumer cannot shift the draws of another, and resume
// needs only the counters that make up the path.

std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

enum class Stream : std::uint64_t {
  kWeightInit = 1,
  kBatchOrder = 2,
  kSelfSample = 3,
  kTexture = 4,
  kTest = 100,
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1). mt19937_64 output is pinned by the standard; the mapping below
  // avoids the implementation-defined std:: distributions.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; consumes exactly two draws per call.
  double normal();

 private:
  std::mt19937_64 engine_;
};

inline Rng stream_rng(std::uint64_t master, Stream s,
                      std::initializer_list<std::uint64_t> path) {
  std::uint64_t x = derive_seed(master, {static_cast<std::uint64_t>(s)});
  for (std::uint64_t p : path) x = derive_seed(x, {p});
  return Rng(x);
}

}  // namespace issl
