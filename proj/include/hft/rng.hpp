#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hft/errors.hpp"

namespace hft {

// FNV-1a, used for corpus fingerprints, checkpoint hashes and seed derivation.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 14695981039346656037ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}
}  // namespace detail

// Deterministic random source. All sampling goes through explicit integer ->
// double mappings so that streams are reproducible bit-for-bit for a given
// seed; none of the <random> distribution classes are used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Uniform in [0, n) without modulo bias.
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw ContractError("uniform_index: empty range");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return static_cast<std::size_t>(v % un);
  }

  // Standard normal via Box-Muller. The second value of each pair is
  // discarded to keep the stream position a pure function of call count.
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Normal(0, stddev) with rejection outside +-cutoff_sigmas.
  double truncated_normal(double stddev, double cutoff_sigmas = 2.0) {
    double z = normal();
    while (std::fabs(z) > cutoff_sigmas) z = normal();
    return z * stddev;
  }

  // Fisher-Yates.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (!is) throw FormatError("invalid rng state string");
  }

  // Independent substreams derived from one master seed.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    return detail::splitmix64(seed ^ detail::splitmix64(stream + 1));
  }

  static std::uint64_t derive(std::uint64_t seed, std::string_view tag) {
    return derive(seed, fnv1a64(tag));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace hft
