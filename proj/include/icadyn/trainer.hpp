#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "icadyn/nonlinearity.hpp"
#include "icadyn/world.hpp"

namespace icadyn {

enum class OrthoScheme { GramSchmidt, HouseholderQR, LowdinPolar };

inline std::string to_string(OrthoScheme s) {
  switch (s) {
    case OrthoScheme::GramSchmidt: return "gram_schmidt";
    case OrthoScheme::HouseholderQR: return "householder_qr";
    case OrthoScheme::LowdinPolar: return "lowdin_polar";
  }
  return "?";
}

inline OrthoScheme ortho_from_string(const std::string& s) {
  if (s == "gram_schmidt") return OrthoScheme::GramSchmidt;
  if (s == "householder_qr") return OrthoScheme::HouseholderQR;
  if (s == "lowdin_polar") return OrthoScheme::LowdinPolar;
  throw std::invalid_argument("unknown orthonormalization scheme '" + s + "'");
}

// Online estimate: p rows of length n, each row kept at norm sqrt(n).
struct EstimateState {
  Eigen::MatrixXd X;
  int n() const { return static_cast<int>(X.cols()); }
  int p() const { return static_cast<int>(X.rows()); }
};

inline void check_state(const EstimateState& state) {
  const int n = state.n(), p = state.p();
  const double sqn = std::sqrt(static_cast<double>(n));
  for (int i = 0; i < p; ++i) {
    const double norm = state.X.row(i).norm();
    if (std::abs(norm - sqn) > 1e-9 * sqn)
      throw std::runtime_error("estimate row " + std::to_string(i) + " has norm " +
                               std::to_string(norm) + ", expected sqrt(n)");
  }
  for (int a = 0; a < p; ++a)
    for (int b = a + 1; b < p; ++b) {
      const double dot = std::abs(state.X.row(a).dot(state.X.row(b))) / n;
      if (dot > 1e-8)
        throw std::runtime_error("estimate rows " + std::to_string(a) + " and " +
                                 std::to_string(b) + " lost orthogonality (|dot|/n = " +
                                 std::to_string(dot) + ")");
    }
}

// One stochastic ascent step before re-orthonormalization:
//   X~ = X + (tau / sqrt(n)) f(X y / sqrt(n)) y^T - (tau / n) phi(X).
inline Eigen::MatrixXd sgd_step(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                double tau, Nonlinearity f, const Regularizer& phi) {
  const double n = static_cast<double>(X.cols());
  const double sqn = std::sqrt(n);
  Eigen::ArrayXd proj = (X * y).array() / sqn;
  Eigen::ArrayXd fv(proj.size());
  f_apply(f, proj, fv);
  Eigen::MatrixXd Xt = X + (tau / sqn) * fv.matrix() * y.transpose();
  if (phi.active())
    Xt -= (tau / n) * X.unaryExpr([&phi](double v) { return phi.eval(v); });
  if (!Xt.allFinite())
    throw std::runtime_error("divergence detected: update produced non-finite entries "
                             "(tau may be too large)");
  return Xt;
}

namespace detail {

inline void check_collapse(const Eigen::MatrixXd& Xt) {
  const double n = static_cast<double>(Xt.cols());
  Eigen::MatrixXd G = Xt * Xt.transpose() / n;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  // Eigenvalues of G are squared singular values of X~ / sqrt(n).
  if (es.eigenvalues().minCoeff() < 1e-12)
    throw std::runtime_error("estimate collapse: update lost row rank");
}

}  // namespace detail

// Restores row norms sqrt(n) and mutual orthogonality. All three schemes fix
// the same invariant but walk different paths there; Lowdin is the symmetric
// (minimum-motion) choice.
inline void orthonormalize(Eigen::MatrixXd& Xt, OrthoScheme scheme) {
  const Eigen::Index p = Xt.rows(), n = Xt.cols();
  const double sqn = std::sqrt(static_cast<double>(n));
  detail::check_collapse(Xt);
  switch (scheme) {
    case OrthoScheme::GramSchmidt: {
      for (Eigen::Index i = 0; i < p; ++i) {
        for (Eigen::Index k = 0; k < i; ++k)
          Xt.row(i) -= (Xt.row(k).dot(Xt.row(i)) / static_cast<double>(n)) * Xt.row(k);
        Xt.row(i) *= sqn / Xt.row(i).norm();
      }
      break;
    }
    case OrthoScheme::HouseholderQR: {
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(Xt.transpose());
      Eigen::MatrixXd Qthin = qr.householderQ() * Eigen::MatrixXd::Identity(n, p);
      // QR fixes signs arbitrarily; keep each row aligned with its input.
      for (Eigen::Index i = 0; i < p; ++i) {
        if (Qthin.col(i).dot(Xt.row(i).transpose()) < 0.0) Qthin.col(i) = -Qthin.col(i);
        Xt.row(i) = Qthin.col(i).transpose() * sqn;
      }
      for (Eigen::Index i = 0; i < p; ++i) Xt.row(i) *= sqn / Xt.row(i).norm();
      break;
    }
    case OrthoScheme::LowdinPolar: {
      Eigen::MatrixXd G = Xt * Xt.transpose() / static_cast<double>(n);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
      Eigen::VectorXd inv_sqrt = es.eigenvalues().array().sqrt().inverse();
      Eigen::MatrixXd Ginv =
          es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose();
      Xt = Ginv * Xt;
      for (Eigen::Index i = 0; i < p; ++i) Xt.row(i) *= sqn / Xt.row(i).norm();
      break;
    }
  }
}

struct InitResult {
  EstimateState state;
  Eigen::MatrixXd realized_Q;
};

// Plants the estimate at a prescribed overlap Q0 = X U^T / n, exactly. The
// residual rows live in the orthogonal complement of U with Gram matrix
// S^{-1} (I - Q0 Q0^T) S^{-1}, which makes X X^T / n = I by construction.
inline InitResult init_estimates(const ComponentBasis& basis, const Eigen::MatrixXd& Q0,
                                 Rng& rng) {
  const int n = basis.n(), p = basis.p();
  if (Q0.rows() != p || Q0.cols() != p)
    throw std::invalid_argument("Q0 must be p x p");
  if (2 * p > n)
    throw std::invalid_argument("need n >= 2p to host residual directions");
  Eigen::MatrixXd QQ = Q0 * Q0.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(QQ);
  const double top = es.eigenvalues().maxCoeff();
  if (top >= 1.0 - 1e-12)
    throw std::invalid_argument("initial overlap is infeasible: Q0 Q0^T has eigenvalue " +
                                std::to_string(top) + " >= 1");
  Eigen::VectorXd s(p);
  for (int i = 0; i < p; ++i) s(i) = std::sqrt(1.0 - Q0.row(i).squaredNorm());
  Eigen::MatrixXd B = Eigen::MatrixXd::Identity(p, p) - QQ;
  Eigen::MatrixXd A = s.cwiseInverse().asDiagonal() * B * s.cwiseInverse().asDiagonal();
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("residual Gram factorization failed");

  // Residual frame: random rows, projected off U, then row-orthonormalized.
  Eigen::MatrixXd G = gaussian_matrix(rng, p, n);
  G -= (G * basis.U) * basis.U.transpose() / static_cast<double>(n);
  const double sqn = std::sqrt(static_cast<double>(n));
  for (int i = 0; i < p; ++i) {
    for (int k = 0; k < i; ++k)
      G.row(i) -= (G.row(k).dot(G.row(i)) / static_cast<double>(n)) * G.row(k);
    const double norm = G.row(i).norm();
    if (norm < 1e-8 * sqn) throw std::runtime_error("residual frame collapsed; retry");
    G.row(i) *= sqn / norm;
  }

  InitResult out;
  out.state.X = Q0 * basis.U.transpose() +
                s.asDiagonal() * (llt.matrixL() * G).eval();
  orthonormalize(out.state.X, OrthoScheme::GramSchmidt);
  out.realized_Q = out.state.X * basis.U / static_cast<double>(n);
  return out;
}

struct TrajectoryPoint {
  double t = 0.0;
  Eigen::MatrixXd Q;
  std::optional<Eigen::MatrixXd> R;  // X phi(X)^T / n when a penalty is active
};

struct RunResult {
  std::vector<TrajectoryPoint> points;
  EstimateState final_state;
};

inline Eigen::MatrixXd penalty_overlap(const Eigen::MatrixXd& X, const Regularizer& phi) {
  Eigen::MatrixXd P = X.unaryExpr([&phi](double v) { return phi.eval(v); });
  return X * P.transpose() / static_cast<double>(X.cols());
}

// Streams observations, records Q = X U / n on a fixed cadence (and R when a
// penalty is active). record_every <= 0 picks the default of n / 50 steps.
//
// The inner loop keeps the estimate transposed (rows stored as contiguous
// columns) and reuses one set of buffers, so a step costs two matrix-vector
// passes, one rank-1 update, one Gram pass, and the orthonormalization sweep.
// Gram-Schmidt runs directly on the contiguous columns; the other schemes fall
// back to the row-layout routine.
inline RunResult run_online(const ComponentBasis& basis, const std::vector<SourceSpec>& specs,
                            const EstimateState& init, double tau, Nonlinearity f,
                            const Regularizer& phi, long steps, long record_every,
                            OrthoScheme scheme, Rng& rng) {
  if (tau <= 0.0) throw std::invalid_argument("tau must be positive");
  if (steps < 0) throw std::invalid_argument("steps must be nonnegative");
  if (static_cast<int>(specs.size()) != basis.p())
    throw std::invalid_argument("need one source spec per component");
  const int n = basis.n(), p = basis.p();
  const double dn = static_cast<double>(n);
  const double sqn = std::sqrt(dn), inv_sqn = 1.0 / sqn;
  if (record_every <= 0) record_every = std::max(1L, static_cast<long>(n) / 50);

  Eigen::MatrixXd Xc = init.X.transpose();  // n x p, estimate rows in columns
  Eigen::VectorXd y(n), c(p), w(p), proj(p), fv(p);
  Eigen::MatrixXd G(p, p), Pen;
  if (phi.active()) Pen.resize(n, p);

  RunResult out;
  auto record = [&](long k) {
    TrajectoryPoint pt;
    pt.t = static_cast<double>(k) / n;
    pt.Q = (basis.U.transpose() * Xc).transpose() / dn;
    if (phi.active()) {
      Eigen::MatrixXd P = Xc.unaryExpr([&phi](double v) { return phi.eval(v); });
      pt.R = (Xc.transpose() * P) / dn;
    }
    out.points.push_back(std::move(pt));
  };
  record(0);

  const bool fused = scheme == OrthoScheme::GramSchmidt;
  for (long k = 1; k <= steps; ++k) {
    for (int j = 0; j < p; ++j) c(j) = specs[static_cast<size_t>(j)].sample(rng);
    fill_gaussian(rng, y);
    w.noalias() = basis.U.transpose() * y / dn;
    w = c * inv_sqn - w;
    y.noalias() += basis.U * w;  // y = U c / sqrt(n) + (I - U U^T / n) g

    proj.noalias() = Xc.transpose() * y * inv_sqn;
    for (int i = 0; i < p; ++i) fv(i) = f_eval(f, proj(i)) * tau * inv_sqn;
    if (phi.active()) Pen = Xc.unaryExpr([&phi](double v) { return phi.eval(v); });
    Xc.noalias() += y * fv.transpose();
    if (phi.active()) Xc -= (tau / dn) * Pen;

    G.noalias() = Xc.transpose() * Xc / dn;
    if (!G.allFinite() || !fv.allFinite())
      throw std::runtime_error("divergence detected: update produced non-finite entries "
                               "(tau may be too large) (at step " + std::to_string(k) + ")");
    double min_eig;
    if (p == 1) {
      min_eig = G(0, 0);
    } else if (p == 2) {
      const double mean = 0.5 * (G(0, 0) + G(1, 1));
      const double disc = std::sqrt(0.25 * (G(0, 0) - G(1, 1)) * (G(0, 0) - G(1, 1)) +
                                    G(0, 1) * G(0, 1));
      min_eig = mean - disc;
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
      min_eig = es.eigenvalues().minCoeff();
    }
    if (min_eig < 1e-12)
      throw std::runtime_error("estimate collapse: update lost row rank (at step " +
                               std::to_string(k) + ")");

    if (fused) {
      for (int i = 0; i < p; ++i) {
        for (int j = 0; j < i; ++j)
          Xc.col(i) -= (Xc.col(j).dot(Xc.col(i)) / dn) * Xc.col(j);
        Xc.col(i) *= sqn / Xc.col(i).norm();
      }
    } else {
      Eigen::MatrixXd Xt = Xc.transpose();
      try {
        orthonormalize(Xt, scheme);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string(e.what()) + " (at step " + std::to_string(k) + ")");
      }
      Xc = Xt.transpose();
    }
    if (k % record_every == 0 || k == steps) record(k);
  }
  out.final_state.X = Xc.transpose();
  return out;
}

inline void write_trajectory_csv(const std::filesystem::path& path, const RunResult& run) {
  const bool with_R = !run.points.empty() && run.points.front().R.has_value();
  CsvWriter csv(path, with_R ? "t,i,j,Q_ij,R_ij" : "t,i,j,Q_ij");
  for (const auto& pt : run.points)
    for (Eigen::Index i = 0; i < pt.Q.rows(); ++i)
      for (Eigen::Index j = 0; j < pt.Q.cols(); ++j) {
        std::vector<std::string> cells = {format_double(pt.t), std::to_string(i),
                                          std::to_string(j), format_double(pt.Q(i, j))};
        if (with_R) cells.push_back(format_double((*pt.R)(i, j)));
        csv.row(cells);
      }
}

}  // namespace icadyn
