#pragma once

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "icadyn/rng.hpp"

namespace testutil {

// Largest entrywise deviation; the workhorse for matrix comparisons.
inline double max_abs_diff(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  REQUIRE(A.rows() == B.rows());
  REQUIRE(A.cols() == B.cols());
  return (A - B).cwiseAbs().maxCoeff();
}

// Overlap matrix with independent rows drawn uniformly inside a ball of
// squared norm max_sq, so every row is strictly feasible.
inline Eigen::MatrixXd random_feasible_overlap(icadyn::Rng& rng, int rows, int cols,
                                               double max_sq = 0.9) {
  Eigen::MatrixXd Q(rows, cols);
  for (int i = 0; i < rows; ++i) {
    Eigen::VectorXd v = icadyn::gaussian_vector(rng, cols);
    const double r = std::pow(icadyn::draw_uniform01(rng), 1.0 / cols);
    Q.row(i) = (v / v.norm() * r * std::sqrt(max_sq)).transpose();
  }
  return Q;
}

inline double runif(icadyn::Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * icadyn::draw_uniform01(rng);
}

}  // namespace testutil
