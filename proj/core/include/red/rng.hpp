#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace red {

// Seed splitting: every random stream in an experiment is derived from a
// single root seed and a stream name. The mapping is
//   splitmix64(root ^ fnv1a64(stream))
// which is stable across platforms and releases.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

// Thin wrapper over mt19937_64 with portable uniform draws. The standard
// distributions are implementation-defined, which would break bit-exact
// reproducibility across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace red
