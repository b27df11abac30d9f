#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace pbll {

/// SplitMix64 finalizer. Used to derive independent, order-free substreams
/// from a single top-level seed.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

// Counter-based substream: the result depends only on (seed, stream), never on
// how many other streams were created before it.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  return Rng(derive_seed(seed, stream));
}

inline Eigen::MatrixXd gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                                       double stddev = 1.0) {
  // Scaling a standard draw also covers stddev = 0, and keeps the stream
  // position independent of the scale.
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(rows, cols);
  // Column-major fill order is part of the determinism contract.
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = stddev * normal(rng);
  return out;
}

inline Eigen::VectorXd gaussian_vector(Rng& rng, Eigen::Index n, double stddev = 1.0) {
  return gaussian_matrix(rng, n, 1, stddev);
}

}  // namespace pbll
