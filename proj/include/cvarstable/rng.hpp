#pragma once

#include <cstdint>
#include <random>

namespace cvarstable {

/// Every sampler takes its generator explicitly; there is no global stream.
using Rng = std::mt19937_64;

/// splitmix64 finaliser; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for replicate `id` (and optional sub-stream) under a master seed.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t id, std::uint64_t stream = 0) noexcept {
  return mix_seed(mix_seed(master ^ mix_seed(id + 1)) ^ mix_seed(stream + 0x5bd1e995ULL));
}

inline double std_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

/// Uniform on the open interval (0, 1).
inline double open_uniform(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double v = 0.0;
  do {
    v = u(rng);
  } while (v <= 0.0);
  return v;
}

}  // namespace cvarstable
