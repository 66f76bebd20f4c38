// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace genreg {

/// Errors thrown across the library. Each maps to one failure class so the
/// CLI can emit a stable machine-parsable code.
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct SizeMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DegenerateConfiguration : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EstimationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CompatibilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
constexpr Scalar pi() {
  return Scalar(3.14159265358979323846264338327950288L);
}

template <typename Scalar>
Scalar deg_to_rad(Scalar d) {
  return d * pi<Scalar>() / Scalar(180);
}

template <typename Scalar>
Scalar rad_to_deg(Scalar r) {
  return r * Scalar(180) / pi<Scalar>();
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derive an independent stream seed from a base seed and a stream tag.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

/// Deterministic RNG with portable distributions. std:: distributions are
/// implementation-defined, so uniform/normal are generated explicitly from
/// the raw xoshiro-style stream to keep outputs stable across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0x2545f4914f6cdd1dULL)) {
    // warm up so small seeds diverge immediately
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() {
    state_ = splitmix64(state_);
    return state_;
  }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n) {
    // rejection-free modulo bias is negligible at desk scale, but stay exact:
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  /// Standard normal via Box-Muller; one value per call keeps state simple.
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * pi<double>() * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// k distinct indices from [0, n), partial Fisher-Yates, order as drawn.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    if (k > n) throw InvalidArgument("sample_without_replacement: k > n");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out(k);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + std::size_t(uniform_index(n - i));
      std::swap(pool[i], pool[j]);
      out[i] = pool[i];
    }
    return out;
  }

 private:
  std::uint64_t state_;
};

}  // namespace genreg
