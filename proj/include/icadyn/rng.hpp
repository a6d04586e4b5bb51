#pragma once

#include <cstdint>
#include <random>

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include <Eigen/Core>

namespace icadyn {

using Rng = std::mt19937_64;

// splitmix64 step; good avalanche, used only to expand seeds.
inline std::uint64_t splitmix64(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Child generator for (master, stream). Distinct streams never share state,
// so replicas can be drawn in any order and still reproduce bit for bit.
inline Rng make_stream(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t s = master ^ (stream * 0xda942042e4dd58b5ULL + 0x6a09e667f3bcc909ULL);
  std::uint32_t words[16];
  for (int i = 0; i < 8; ++i) {
    std::uint64_t w = splitmix64(s);
    words[2 * i] = static_cast<std::uint32_t>(w);
    words[2 * i + 1] = static_cast<std::uint32_t>(w >> 32);
  }
  std::seed_seq seq(words, words + 16);
  return Rng(seq);
}

inline double draw_normal(Rng& rng) {
  boost::random::normal_distribution<double> n01;
  return n01(rng);
}

inline double draw_uniform01(Rng& rng) {
  boost::random::uniform_01<double> u01;
  return u01(rng);
}

// Fill order is fixed (column major) so results do not depend on expression
// templates or matrix shape tricks.
inline void fill_gaussian(Rng& rng, Eigen::Ref<Eigen::MatrixXd> out) {
  boost::random::normal_distribution<double> n01;
  for (Eigen::Index c = 0; c < out.cols(); ++c)
    for (Eigen::Index r = 0; r < out.rows(); ++r) out(r, c) = n01(rng);
}

inline Eigen::MatrixXd gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  fill_gaussian(rng, m);
  return m;
}

inline Eigen::VectorXd gaussian_vector(Rng& rng, Eigen::Index size) {
  Eigen::VectorXd v(size);
  boost::random::normal_distribution<double> n01;
  for (Eigen::Index i = 0; i < size; ++i) v(i) = n01(rng);
  return v;
}

}  // namespace icadyn
