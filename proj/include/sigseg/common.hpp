#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sigseg {

// Error taxonomy used across the library. The CLI maps these onto its
// exit-code contract: ConfigError/ShapeError/ContractError -> 1, the
// rest -> 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct MetricError : Error {
  using Error::Error;
};

// Counter-based splitmix64 generator. Used everywhere a random stream is
// needed so that results do not depend on the standard library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // uniform integer in [0, n)
  std::uint32_t below(std::uint32_t n) {
    return static_cast<std::uint32_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // uniform float in [0, 1)
  float unit() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  float uniform(float lo, float hi) { return lo + (hi - lo) * unit(); }

  double unit_d() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // standard normal via Box-Muller (pair cached)
  double normal();

  bool chance(float p) { return unit() < p; }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Stable seed derivation: mixes (seed, stream, index) into a new seed so
// that per-sample / per-epoch streams never collide.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                          std::uint64_t index);

// IEEE CRC-32 (same polynomial PNG uses); seed with 0.
std::uint32_t crc32_ieee(const unsigned char* data, std::size_t len,
                         std::uint32_t crc = 0);

// Worker-count cap from SIGSEG_THREADS (default 1). apply_thread_cap() feeds
// it to OpenMP when compiled in; harmless otherwise.
int configured_threads();
void apply_thread_cap();

}  // namespace sigseg
