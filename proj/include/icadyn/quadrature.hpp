#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "icadyn/sources.hpp"

namespace icadyn {

// Nodes and weights of a probability measure; weights sum to one.
struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

namespace detail {

// Golub-Welsch: eigen-decompose the Jacobi matrix of the three-term
// recurrence. Weights are the squared first components of the eigenvectors.
inline QuadratureRule golub_welsch(const Eigen::VectorXd& offdiag) {
  const int k = static_cast<int>(offdiag.size()) + 1;
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(k, k);
  for (int i = 0; i + 1 < k; ++i) {
    J(i, i + 1) = offdiag(i);
    J(i + 1, i) = offdiag(i);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  QuadratureRule rule;
  rule.nodes = es.eigenvalues();
  rule.weights = es.eigenvectors().row(0).transpose().array().square();
  return rule;
}

}  // namespace detail

// Gauss-Hermite for the standard normal (probabilists' convention).
inline QuadratureRule gauss_hermite(int k) {
  if (k < 1) throw std::invalid_argument("quadrature order must be positive");
  if (k == 1) return {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
  Eigen::VectorXd off(k - 1);
  for (int i = 1; i < k; ++i) off(i - 1) = std::sqrt(static_cast<double>(i));
  return detail::golub_welsch(off);
}

// Gauss-Legendre for the uniform law on [-1, 1] (probability weights).
inline QuadratureRule gauss_legendre(int k) {
  if (k < 1) throw std::invalid_argument("quadrature order must be positive");
  if (k == 1) return {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
  Eigen::VectorXd off(k - 1);
  for (int i = 1; i < k; ++i) {
    const double ii = static_cast<double>(i);
    off(i - 1) = std::sqrt(ii * ii / (4.0 * ii * ii - 1.0));
  }
  return detail::golub_welsch(off);
}

// Exact node set for one source coordinate. BetaMixture combines the two-point
// sign factor with a scaled Gauss-Legendre rule; degenerate betas collapse to
// the pure factor so no wasted nodes appear.
inline QuadratureRule source_rule(const SourceSpec& spec, int k) {
  switch (spec.kind) {
    case SourceKind::Rademacher: {
      QuadratureRule r;
      r.nodes = Eigen::Vector2d(-1.0, 1.0);
      r.weights = Eigen::Vector2d(0.5, 0.5);
      return r;
    }
    case SourceKind::UniformSym: {
      QuadratureRule r = gauss_legendre(k);
      r.nodes *= std::sqrt(3.0);
      return r;
    }
    case SourceKind::BetaMixture: {
      const double b = spec.beta;
      if (b == 1.0) return source_rule(SourceSpec::rademacher(), k);
      if (b == 0.0) return source_rule(SourceSpec::uniform_sym(), k);
      const double g = std::sqrt(1.0 - b * b);
      QuadratureRule gl = gauss_legendre(k);
      QuadratureRule r;
      r.nodes.resize(2 * k);
      r.weights.resize(2 * k);
      for (int s = 0; s < 2; ++s) {
        const double sign = s == 0 ? -1.0 : 1.0;
        for (int i = 0; i < k; ++i) {
          r.nodes(s * k + i) = b * sign + g * std::sqrt(3.0) * gl.nodes(i);
          r.weights(s * k + i) = 0.5 * gl.weights(i);
        }
      }
      return r;
    }
    case SourceKind::Custom:
      throw std::runtime_error("quadrature unavailable for custom source '" + spec.sampler + "'");
  }
  throw std::logic_error("unreachable source kind");
}

}  // namespace icadyn
