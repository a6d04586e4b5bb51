#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>

#include "icadyn/io.hpp"
#include "icadyn/rng.hpp"
#include "icadyn/sources.hpp"

namespace icadyn {

enum class BasisConstruction { Haar, SparseBernoulli, External };

// Ground-truth component directions: n x p, orthogonal columns of norm
// sqrt(n). rho keeps the occupancy used for a sparse draw (empty otherwise).
struct ComponentBasis {
  Eigen::MatrixXd U;
  std::vector<double> rho;
  int n() const { return static_cast<int>(U.rows()); }
  int p() const { return static_cast<int>(U.cols()); }
};

inline void validate_basis(const ComponentBasis& basis) {
  const int n = basis.n(), p = basis.p();
  const double sqn = std::sqrt(static_cast<double>(n));
  for (int j = 0; j < p; ++j) {
    const double norm = basis.U.col(j).norm();
    if (std::abs(norm - sqn) > 1e-10 * sqn)
      throw std::runtime_error("basis column " + std::to_string(j) +
                               " has norm " + std::to_string(norm) +
                               ", expected sqrt(n)");
  }
  for (int a = 0; a < p; ++a)
    for (int b = a + 1; b < p; ++b) {
      const double dot = std::abs(basis.U.col(a).dot(basis.U.col(b)));
      if (dot > 1e-8 * n)
        throw std::runtime_error("basis columns " + std::to_string(a) + " and " +
                                 std::to_string(b) + " are not orthogonal (|dot| = " +
                                 std::to_string(dot) + ")");
    }
}

namespace detail {

// Modified Gram-Schmidt on columns; rescales each survivor to sqrt(n).
inline void orthonormalize_columns(Eigen::MatrixXd& U) {
  const Eigen::Index n = U.rows(), p = U.cols();
  const double sqn = std::sqrt(static_cast<double>(n));
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index k = 0; k < j; ++k)
      U.col(j) -= (U.col(k).dot(U.col(j)) / static_cast<double>(n)) * U.col(k);
    const double norm = U.col(j).norm();
    if (norm < 1e-8 * sqn)
      throw std::runtime_error("column " + std::to_string(j) +
                               " collapsed during orthonormalization; "
                               "draw again with another seed");
    U.col(j) *= sqn / norm;
  }
}

}  // namespace detail

inline ComponentBasis build_basis(int n, int p, BasisConstruction kind, Rng& rng,
                                  const std::vector<double>& rho = {}) {
  if (n < 1 || p < 1) throw std::invalid_argument("dimensions must be positive");
  if (p > n)
    throw std::invalid_argument("p = " + std::to_string(p) + " exceeds n = " +
                                std::to_string(n) + "; cannot build orthogonal columns");
  ComponentBasis basis;
  switch (kind) {
    case BasisConstruction::Haar: {
      basis.U = gaussian_matrix(rng, n, p);
      detail::orthonormalize_columns(basis.U);
      break;
    }
    case BasisConstruction::SparseBernoulli: {
      if (static_cast<int>(rho.size()) != p)
        throw std::invalid_argument("sparse construction needs one occupancy per column");
      for (double r : rho)
        if (!(r > 0.0 && r <= 1.0))
          throw std::invalid_argument("occupancy must lie in (0, 1], got " + std::to_string(r));
      basis.U.setZero(n, p);
      for (int j = 0; j < p; ++j) {
        const double scale = 1.0 / std::sqrt(rho[j]);
        for (int i = 0; i < n; ++i)
          if (draw_uniform01(rng) < rho[j]) basis.U(i, j) = scale;
      }
      detail::orthonormalize_columns(basis.U);
      basis.rho = rho;
      break;
    }
    case BasisConstruction::External:
      throw std::invalid_argument("external basis must be supplied via external_basis()");
  }
  validate_basis(basis);
  return basis;
}

// Adopts caller-provided directions: rescales columns to sqrt(n) exactly, then
// insists they are orthogonal. No implicit re-orthogonalization happens here.
inline ComponentBasis external_basis(const Eigen::MatrixXd& U) {
  if (U.cols() > U.rows())
    throw std::invalid_argument("p exceeds n; cannot build orthogonal columns");
  ComponentBasis basis;
  basis.U = U;
  const double sqn = std::sqrt(static_cast<double>(U.rows()));
  for (Eigen::Index j = 0; j < U.cols(); ++j) {
    const double norm = basis.U.col(j).norm();
    if (norm < 1e-12)
      throw std::invalid_argument("external column " + std::to_string(j) + " is zero");
    basis.U.col(j) *= sqn / norm;
  }
  validate_basis(basis);
  return basis;
}

struct Observation {
  Eigen::VectorXd y;
  Eigen::VectorXd c;
};

inline Eigen::VectorXd draw_sources(const std::vector<SourceSpec>& specs, Rng& rng) {
  Eigen::VectorXd c(static_cast<Eigen::Index>(specs.size()));
  for (size_t j = 0; j < specs.size(); ++j) c(static_cast<Eigen::Index>(j)) = specs[j].sample(rng);
  return c;
}

// y = U c / sqrt(n) + a with a Gaussian in the orthogonal complement of U, so
// that cov(y) = I exactly in law.
inline Observation draw_observation(const ComponentBasis& basis,
                                    const std::vector<SourceSpec>& specs, Rng& rng) {
  if (static_cast<int>(specs.size()) != basis.p())
    throw std::invalid_argument("need one source spec per component");
  const int n = basis.n();
  Observation obs;
  obs.c = draw_sources(specs, rng);
  Eigen::VectorXd g = gaussian_vector(rng, n);
  g -= basis.U * (basis.U.transpose() * g) / static_cast<double>(n);
  obs.y = basis.U * obs.c / std::sqrt(static_cast<double>(n)) + g;
  return obs;
}

// Binary layout: 8-byte magic, uint32 n, uint32 p (16-byte header), then
// row-major doubles.
namespace detail {
inline constexpr char kBasisMagic[8] = {'I', 'C', 'D', 'N', 'B', 'A', 'S', '1'};
}

inline void save_basis(const std::filesystem::path& path, const ComponentBasis& basis) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(detail::kBasisMagic, 8);
  const std::uint32_t n = static_cast<std::uint32_t>(basis.n());
  const std::uint32_t p = static_cast<std::uint32_t>(basis.p());
  out.write(reinterpret_cast<const char*>(&n), 4);
  out.write(reinterpret_cast<const char*>(&p), 4);
  for (int i = 0; i < basis.n(); ++i)
    for (int j = 0; j < basis.p(); ++j) {
      const double v = basis.U(i, j);
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
}

inline ComponentBasis load_basis(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kBasisMagic, 8) != 0)
    throw std::runtime_error("'" + path.string() + "' is not a basis file (bad magic)");
  std::uint32_t n = 0, p = 0;
  in.read(reinterpret_cast<char*>(&n), 4);
  in.read(reinterpret_cast<char*>(&p), 4);
  if (!in || n == 0 || p == 0 || p > n)
    throw std::runtime_error("'" + path.string() + "' has an invalid header");
  ComponentBasis basis;
  basis.U.resize(n, p);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < p; ++j) {
      double v;
      in.read(reinterpret_cast<char*>(&v), 8);
      if (!in) throw std::runtime_error("'" + path.string() + "' is truncated");
      basis.U(i, j) = v;
    }
  validate_basis(basis);
  return basis;
}

inline void save_basis_csv(const std::filesystem::path& path, const ComponentBasis& basis) {
  CsvWriter csv(path, "row,col,value");
  for (int i = 0; i < basis.n(); ++i)
    for (int j = 0; j < basis.p(); ++j)
      csv.row({std::to_string(i), std::to_string(j), format_double(basis.U(i, j))});
}

}  // namespace icadyn
