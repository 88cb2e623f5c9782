#include "sigseg/common.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sigseg {

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  double u1 = 1.0 - unit_d();  // (0, 1]
  double u2 = unit_d();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * 3.14159265358979323846 * u2;
  cached_ = r * std::sin(a);
  has_cached_ = true;
  return r * std::cos(a);
}

namespace {
std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                          std::uint64_t index) {
  std::uint64_t h = mix64(seed + 0x9E3779B97F4A7C15ull);
  h = mix64(h ^ (stream + 0xD1B54A32D192ED03ull));
  h = mix64(h ^ (index + 0x8CB92BA72F3D8DD7ull));
  return h;
}

std::uint32_t crc32_ieee(const unsigned char* data, std::size_t len,
                         std::uint32_t crc) {
  return static_cast<std::uint32_t>(
      ::crc32_z(crc, reinterpret_cast<const Bytef*>(data), len));
}

int configured_threads() {
  const char* env = std::getenv("SIGSEG_THREADS");
  if (!env) return 1;
  int v = std::atoi(env);
  return v >= 1 ? v : 1;
}

void apply_thread_cap() {
#ifdef _OPENMP
  omp_set_num_threads(configured_threads());
#endif
}

}  // namespace sigseg
