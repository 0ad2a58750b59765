#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace freehunch {

using Rng = std::mt19937_64;

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Independent generator for stream `stream` of a run seeded with `seed`.
/// Streams depend only on (seed, stream), so trajectories can be scheduled
/// on any thread without changing their draws.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  const std::uint64_t a = detail::splitmix64(seed);
  const std::uint64_t b = detail::splitmix64(a ^ detail::splitmix64(stream + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return Rng(seq);
}

inline Eigen::VectorXd standard_normal(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = dist(rng);
  return out;
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace freehunch
