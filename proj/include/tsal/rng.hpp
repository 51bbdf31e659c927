#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace tsal {

// Mixes a base seed with a stream index so independent substreams (per image,
// per iteration) can be derived without sharing generator state.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Deterministic random source. All draws are built from raw mt19937_64 output
// so results do not depend on the standard library's distribution classes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t index(std::uint64_t n);
  double normal();
  // Knuth's multiplication method; fine for the small means used here.
  std::uint64_t poisson(double mean);

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace tsal
