#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace mftmes {

inline constexpr double kVarianceFloor = 1e-12;

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// log Phi(z); uses the asymptotic tail series where erfc underflows.
inline double log_normal_cdf(double z) {
  if (z > -30.0) return std::log(normal_cdf(z));
  const double s = 1.0 / (z * z);
  const double series = 1.0 - s + 3.0 * s * s - 15.0 * s * s * s;
  return -0.5 * z * z - std::log(-z) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

/// phi(z) / Phi(z) together with z + phi(z)/Phi(z). Below z = -8 both come from
/// the tail expansion so that the sum does not cancel catastrophically.
struct MillsTerms {
  double ratio;
  double shifted;
};

inline MillsTerms inverse_mills(double z) {
  if (z >= -8.0) {
    const double r = normal_pdf(z) / normal_cdf(z);
    return {r, z + r};
  }
  // Continued fraction phi(w)/Phi(-w) = w + 1/(w + 2/(w + 3/(w + ...))).
  const double w = -z;
  double tail = w;
  for (int k = 60; k >= 1; --k) tail = w + (k + 1) / tail;
  const double excess = 1.0 / tail;
  return {w + excess, excess};
}

/// splitmix64 finalizer; all sub-seeds in the project are derived through it.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic child seed of `base` addressed by an ordered list of tags.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = mix64(base);
  for (auto t : tags) s = mix64(s ^ mix64(t + 0x632be59bd9b4e019ULL));
  return s;
}

/// FNV-1a over raw bytes; stable across platforms and runs.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace mftmes
