#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "icadyn/ode.hpp"
#include "icadyn/trainer.hpp"

namespace icadyn {

// Row-per-sample data matrix with integer labels; label 0 means unlabeled.
struct LabeledMatrix {
  Eigen::MatrixXd Y;  // N x B
  std::vector<int> labels;
  long N() const { return static_cast<long>(Y.rows()); }
  int B() const { return static_cast<int>(Y.cols()); }
};

struct WhitenResult {
  Eigen::MatrixXd Yw;    // N x B, identity covariance
  Eigen::MatrixXd W;     // B x B whitening map
  Eigen::RowVectorXd mean;
};

// Center, then rotate-and-rescale by the inverse square root of the
// empirical covariance. A near-singular covariance is refused outright:
// whitening would amplify noise by 1/sqrt(eigenvalue).
inline WhitenResult whiten(const Eigen::MatrixXd& Y) {
  WhitenResult out;
  out.mean = Y.colwise().mean();
  Eigen::MatrixXd Yc = Y.rowwise() - out.mean;
  Eigen::MatrixXd Sigma = Yc.transpose() * Yc / static_cast<double>(Y.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Sigma);
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double largest = ev.maxCoeff();
  if (ev.minCoeff() <= 1e-10 * largest) {
    int rank = 0;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
      if (ev(i) > 1e-10 * largest) ++rank;
    throw std::runtime_error(
        "covariance is numerically singular (rank " + std::to_string(rank) + " of " +
        std::to_string(ev.size()) + "); prune dead or duplicated bands before whitening");
  }
  out.W = ev.array().rsqrt().matrix().asDiagonal() * es.eigenvectors().transpose();
  out.Yw = Yc * out.W.transpose();
  return out;
}

// Class centroids in whitened space, orthogonalized by QR and rescaled to
// norm sqrt(B). Signs follow the raw centroids so components keep their
// physical orientation.
inline ComponentBasis extract_components(const Eigen::MatrixXd& Yw,
                                         const std::vector<int>& labels,
                                         const std::vector<int>& class_ids) {
  const int B = static_cast<int>(Yw.cols());
  const int p = static_cast<int>(class_ids.size());
  Eigen::MatrixXd centroids(B, p);
  for (int c = 0; c < p; ++c) {
    long count = 0;
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(B);
    for (long k = 0; k < Yw.rows(); ++k)
      if (labels[static_cast<size_t>(k)] == class_ids[c]) {
        acc += Yw.row(k);
        ++count;
      }
    if (count == 0)
      throw std::runtime_error("class " + std::to_string(class_ids[c]) + " has no samples");
    centroids.col(c) = (acc / static_cast<double>(count)).transpose();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(centroids);
  Eigen::MatrixXd R = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
  for (int c = 0; c < p; ++c)
    if (std::abs(R(c, c)) < 1e-10 * centroids.col(c).norm())
      throw std::runtime_error("class centroids are rank deficient (column " +
                               std::to_string(class_ids[c]) +
                               " is a combination of earlier ones)");
  Eigen::MatrixXd Qthin = qr.householderQ() * Eigen::MatrixXd::Identity(B, p);
  const double sqB = std::sqrt(static_cast<double>(B));
  for (int c = 0; c < p; ++c) {
    if (Qthin.col(c).dot(centroids.col(c)) < 0.0) Qthin.col(c) = -Qthin.col(c);
    Qthin.col(c) *= sqB / Qthin.col(c).norm();
  }
  ComponentBasis basis;
  basis.U = Qthin;
  validate_basis(basis);
  return basis;
}

// Deterministic stand-in for a banded sensor scene: a full-rank correlated
// background plus two sparse spectral classes. Layout and labels depend only
// on the generator state.
inline LabeledMatrix synthetic_standin(long N, int B, long n1, long n2, Rng& rng) {
  if (n1 + n2 > N) throw std::invalid_argument("class sizes exceed N");
  LabeledMatrix out;
  // Background mixing: identity plus a mild random coupling keeps the
  // covariance well conditioned but far from diagonal.
  Eigen::MatrixXd G =
      Eigen::MatrixXd::Identity(B, B) + 0.3 / std::sqrt(static_cast<double>(B)) *
                                            gaussian_matrix(rng, B, B);
  Eigen::RowVectorXd sig1 = Eigen::RowVectorXd::Zero(B);
  Eigen::RowVectorXd sig2 = Eigen::RowVectorXd::Zero(B);
  for (int b = 0; b < B; ++b) {
    const double roll = draw_uniform01(rng);
    if (roll < 0.1) sig1(b) = 2.0 + draw_uniform01(rng);
    else if (roll < 0.2) sig2(b) = -2.0 - draw_uniform01(rng);
  }
  out.Y.resize(N, B);
  out.labels.assign(static_cast<size_t>(N), 0);
  for (long k = 0; k < N; ++k) {
    Eigen::RowVectorXd row = (G * gaussian_vector(rng, B)).transpose();
    if (k < n1) {
      row += sig1 * (1.0 + 0.1 * draw_normal(rng));
      out.labels[static_cast<size_t>(k)] = 1;
    } else if (k < n1 + n2) {
      row += sig2 * (1.0 + 0.1 * draw_normal(rng));
      out.labels[static_cast<size_t>(k)] = 2;
    }
    out.Y.row(k) = row;
  }
  return out;
}

struct RealExperimentConfig {
  std::vector<int> class_ids;
  std::vector<SourceSpec> specs;
  double tau = 0.01;
  Nonlinearity f = Nonlinearity::CubicMinus;
  Eigen::MatrixXd Q0;
  int replicas = 20;
  long steps = 0;          // 0: horizon * n
  double horizon = 200.0;
  long record_every = 0;   // 0: n / 50
  OrthoScheme scheme = OrthoScheme::GramSchmidt;
  std::uint64_t seed = 1;
};

struct RealExperimentResult {
  ComponentBasis basis;
  Eigen::MatrixXd realized_Q0;
  std::vector<RunResult> replicas;
  OdeResult ode;
  Eigen::MatrixXd activations;           // N x p: sample projections on final rows
  std::vector<int> matched_component;    // greedy row -> component
  std::vector<double> matched_sign;
};

// Greedy |Q|-based assignment of estimate rows to components.
inline std::vector<int> greedy_match(const Eigen::MatrixXd& Q) {
  const Eigen::Index p = Q.rows();
  std::vector<int> assign(static_cast<size_t>(p), -1);
  std::vector<bool> row_used(static_cast<size_t>(p), false), col_used(static_cast<size_t>(Q.cols()), false);
  for (Eigen::Index it = 0; it < std::min(Q.rows(), Q.cols()); ++it) {
    double best = -1.0;
    Eigen::Index bi = -1, bj = -1;
    for (Eigen::Index i = 0; i < Q.rows(); ++i)
      for (Eigen::Index j = 0; j < Q.cols(); ++j)
        if (!row_used[static_cast<size_t>(i)] && !col_used[static_cast<size_t>(j)] &&
            std::abs(Q(i, j)) > best) {
          best = std::abs(Q(i, j));
          bi = i;
          bj = j;
        }
    row_used[static_cast<size_t>(bi)] = true;
    col_used[static_cast<size_t>(bj)] = true;
    assign[static_cast<size_t>(bi)] = static_cast<int>(bj);
  }
  return assign;
}

// Whiten, derive components from labeled classes, then rerun the synthetic
// dynamics against those components: replicas of the online rule plus the
// matching ODE overlay from the realized initial overlap.
inline RealExperimentResult run_real_experiment(const LabeledMatrix& data,
                                                const RealExperimentConfig& cfg) {
  WhitenResult wh = whiten(data.Y);
  RealExperimentResult out;
  out.basis = extract_components(wh.Yw, data.labels, cfg.class_ids);
  const int n = out.basis.n();
  const long steps = cfg.steps > 0 ? cfg.steps : static_cast<long>(cfg.horizon * n);
  const long record_every = cfg.record_every > 0 ? cfg.record_every : std::max(1L, static_cast<long>(n) / 50);

  Rng init_rng = make_stream(cfg.seed, 0);
  InitResult init = init_estimates(out.basis, cfg.Q0, init_rng);
  out.realized_Q0 = init.realized_Q;

  for (int r = 0; r < cfg.replicas; ++r) {
    Rng rng = make_stream(cfg.seed, 1000 + static_cast<std::uint64_t>(r));
    InitResult rep_init = init_estimates(out.basis, cfg.Q0, rng);
    out.replicas.push_back(run_online(out.basis, cfg.specs, rep_init.state, cfg.tau, cfg.f,
                                      Regularizer::none(), steps, record_every, cfg.scheme,
                                      rng));
  }

  RhsFn rhs = [&](const Eigen::MatrixXd& Q) {
    return rhs_generic(Q, cfg.tau, cfg.f, cfg.specs, CoeffMethod::closed_form());
  };
  OdeOpts oopts;
  oopts.t_end = cfg.horizon;
  oopts.record_dt = static_cast<double>(record_every) / n;
  out.ode = integrate_overlap(rhs, out.realized_Q0, oopts);

  // Activation maps from the first replica's terminal rows.
  const Eigen::MatrixXd& X = out.replicas.front().final_state.X;
  out.activations = wh.Yw * X.transpose() / std::sqrt(static_cast<double>(n));
  const Eigen::MatrixXd Qfin = out.replicas.front().points.back().Q;
  out.matched_component = greedy_match(Qfin);
  out.matched_sign.resize(out.matched_component.size());
  for (size_t i = 0; i < out.matched_component.size(); ++i) {
    const double v = Qfin(static_cast<Eigen::Index>(i), out.matched_component[i]);
    out.matched_sign[i] = v >= 0.0 ? 1.0 : -1.0;
  }
  return out;
}

// Intersection-over-union of the top-|activation| sample set against the
// labeled mask of a class.
inline double activation_iou(const Eigen::VectorXd& activation, const std::vector<int>& labels,
                             int class_id) {
  long mask_count = 0;
  for (int l : labels)
    if (l == class_id) ++mask_count;
  if (mask_count == 0) return 0.0;
  std::vector<long> order(static_cast<size_t>(activation.size()));
  for (size_t k = 0; k < order.size(); ++k) order[k] = static_cast<long>(k);
  std::sort(order.begin(), order.end(), [&](long a, long b) {
    return std::abs(activation(a)) > std::abs(activation(b));
  });
  long inter = 0;
  for (long k = 0; k < mask_count; ++k)
    if (labels[static_cast<size_t>(order[static_cast<size_t>(k)])] == class_id) ++inter;
  return static_cast<double>(inter) / static_cast<double>(2 * mask_count - inter);
}

}  // namespace icadyn
