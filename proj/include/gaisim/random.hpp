#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "gaisim/tensor.hpp"

namespace gaisim {

/// Derives a decorrelated seed for a named stream (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Tensor uniform_tensor(std::vector<int> shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data) v = dist(rng);
  return t;
}

/// Fan-balanced uniform init with bound sqrt(6 / (fan_in + fan_out)).
inline Tensor fan_uniform(std::vector<int> shape, int fan_in, int fan_out, std::mt19937_64& rng) {
  double bound = std::sqrt(6.0 / (static_cast<double>(fan_in) + fan_out));
  return uniform_tensor(std::move(shape), bound, rng);
}

/// Identity matrix with small uniform noise, used for state transforms.
inline Tensor identity_plus_noise(int n, double noise, std::mt19937_64& rng) {
  Tensor t = uniform_tensor({n, n}, noise, rng);
  for (int i = 0; i < n; ++i) t.at2(i, i) += 1.0;
  return t;
}

}  // namespace gaisim
