#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "icadyn/coefficients.hpp"
#include "icadyn/trainer.hpp"

namespace icadyn {

// Finite population of the limiting coordinate process. Each particle carries
// its estimate coordinates x (one per row) and its frozen component
// coordinates u; the u's never move.
struct ParticleCloud {
  Eigen::MatrixXd xs;  // N x p
  Eigen::MatrixXd us;  // N x p
  double t = 0.0;
  long N() const { return static_cast<long>(xs.rows()); }
  int p() const { return static_cast<int>(xs.cols()); }
};

// Empirical overlap Q^ = xs^T us / N.
inline Eigen::MatrixXd empirical_overlap(const ParticleCloud& cloud) {
  return cloud.xs.transpose() * cloud.us / static_cast<double>(cloud.N());
}

// Sparse component coordinates with disjoint supports: a particle sits on
// stratum j with probability rho_j (value 1/sqrt(rho_j) there, zero
// elsewhere) and in the silent background otherwise. This keeps
// E[u u^T] = I exactly, which the drift closure needs.
inline ParticleCloud init_cloud_sparse(long N, const std::vector<double>& rho,
                                       const Eigen::MatrixXd& Q0, Rng& rng) {
  const int p = static_cast<int>(rho.size());
  if (Q0.rows() != p || Q0.cols() != p) throw std::invalid_argument("Q0 must be p x p");
  double total = 0.0;
  for (double r : rho) {
    if (!(r > 0.0 && r <= 1.0))
      throw std::invalid_argument("occupancy must lie in (0, 1], got " + std::to_string(r));
    total += r;
  }
  if (total > 1.0 + 1e-12)
    throw std::invalid_argument("occupancies sum to " + std::to_string(total) +
                                " > 1; disjoint supports are impossible");
  ResidualScale scale = residual_scale(Q0, 1e-9);
  ParticleCloud cloud;
  cloud.us.setZero(N, p);
  cloud.xs.resize(N, p);
  for (long k = 0; k < N; ++k) {
    const double roll = draw_uniform01(rng);
    double acc = 0.0;
    int stratum = -1;
    for (int j = 0; j < p; ++j) {
      acc += rho[j];
      if (roll < acc) {
        stratum = j;
        break;
      }
    }
    if (stratum >= 0) cloud.us(k, stratum) = 1.0 / std::sqrt(rho[stratum]);
    for (int i = 0; i < p; ++i)
      cloud.xs(k, i) = Q0.row(i).dot(cloud.us.row(k)) + scale.s(i) * draw_normal(rng);
  }
  return cloud;
}

// Exact finite-n lift: coordinates of a concrete estimate against a concrete
// basis. Q^ of the lifted cloud equals X U / n with no sampling error.
inline ParticleCloud lift_state(const EstimateState& state, const ComponentBasis& basis) {
  if (state.n() != basis.n()) throw std::invalid_argument("state and basis disagree on n");
  ParticleCloud cloud;
  cloud.xs = state.X.transpose();
  cloud.us = basis.U;
  return cloud;
}

struct CloudOpts {
  double dt = 0.05;
  double t_end = 200.0;
  long record_every = 20;        // in steps
  CoeffMethod method = CoeffMethod::closed_form();
  double feas_tol = 0.2;         // empirical overlaps may overshoot slightly
  double qhat_lo = -1.05;        // soft monitor band
  double qhat_hi = 1.05;
};

struct CloudRecord {
  double t;
  Eigen::MatrixXd Qhat;
};

struct CloudRunResult {
  std::vector<CloudRecord> records;
  std::vector<std::string> warnings;
};

// Euler-Maruyama on the frozen-coefficient drift: coefficients are evaluated
// once per step at the cloud's own empirical overlap, then every particle
// moves under the same matrices. The noise is the full tau^2 C diffusion.
inline CloudRunResult evolve_cloud(ParticleCloud& cloud, double tau, Nonlinearity f,
                                   const Regularizer& phi, const std::vector<SourceSpec>& specs,
                                   const CloudOpts& opts, Rng& rng) {
  if (!(opts.dt > 0.0 && opts.dt <= 0.1))
    throw std::invalid_argument("dt must lie in (0, 0.1]");
  const int p = cloud.p();
  const long N = cloud.N();
  const long steps = static_cast<long>(std::llround(opts.t_end / opts.dt));
  const double sqdt = std::sqrt(opts.dt);
  CloudRunResult out;
  auto record = [&]() { out.records.push_back({cloud.t, empirical_overlap(cloud)}); };
  record();
  Eigen::MatrixXd noise(N, p);
  for (long k = 1; k <= steps; ++k) {
    Eigen::MatrixXd Qhat = empirical_overlap(cloud);
    const double lo = Qhat.minCoeff(), hi = Qhat.maxCoeff();
    if (lo < opts.qhat_lo || hi > opts.qhat_hi)
      out.warnings.push_back("empirical overlap left [" + std::to_string(opts.qhat_lo) + ", " +
                             std::to_string(opts.qhat_hi) + "] at t = " + std::to_string(cloud.t));
    MeanFieldCoeffs co = eval_coeffs(Qhat, specs, f, opts.method, opts.feas_tol);
    Eigen::MatrixXd A = -(tau * tau / 2.0) * tril_mix(co.C) - tau * tril_mix(co.M);
    std::optional<Eigen::MatrixXd> Rhat;
    if (phi.active()) {
      Eigen::MatrixXd phix = cloud.xs.unaryExpr([&phi](double v) { return phi.eval(v); });
      Rhat = cloud.xs.transpose() * phix / static_cast<double>(N);
      A += tau * tril_mix(*Rhat);
    }
    Eigen::MatrixXd drift = cloud.xs * A.transpose() + tau * cloud.us * co.Psi;
    if (phi.active())
      drift -= tau * cloud.xs.unaryExpr([&phi](double v) { return phi.eval(v); });
    cloud.xs += opts.dt * drift;
    // Lambda = tau^2 C; jitter guards the Cholesky when C is barely PSD. A
    // zero diffusion (tau = 0) skips the factorization so the cloud stays put.
    Eigen::MatrixXd Lambda = tau * tau * co.C;
    if (Lambda.diagonal().maxCoeff() > 0.0) {
      Lambda.diagonal().array() += 1e-12;
      Eigen::LLT<Eigen::MatrixXd> llt(Lambda);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("diffusion factorization failed at t = " + std::to_string(cloud.t));
      Eigen::MatrixXd L = llt.matrixL();
      fill_gaussian(rng, noise);
      cloud.xs += sqdt * noise * L.transpose();
    }
    cloud.t += opts.dt;
    if (!cloud.xs.allFinite())
      throw std::runtime_error("particle update diverged at t = " + std::to_string(cloud.t));
    if (k % opts.record_every == 0 || k == steps) record();
  }
  return out;
}

struct Histogram1D {
  int axis = 0;
  double lo = 0.0, width = 0.0;
  Eigen::VectorXd mass;  // sums to the fraction of in-range particles
};

struct Histogram2D {
  int axis_a = 0, axis_b = 1;
  double lo = 0.0, width = 0.0;
  Eigen::MatrixXd mass;  // (bin_a, bin_b)
};

inline Histogram1D histogram1d(const ParticleCloud& cloud, int axis, int bins, double lo,
                               double hi) {
  if (bins < 1 || !(hi > lo)) throw std::invalid_argument("bad histogram geometry");
  Histogram1D h;
  h.axis = axis;
  h.lo = lo;
  h.width = (hi - lo) / bins;
  h.mass = Eigen::VectorXd::Zero(bins);
  const double inv_n = 1.0 / static_cast<double>(cloud.N());
  for (long k = 0; k < cloud.N(); ++k) {
    const int b = static_cast<int>(std::floor((cloud.xs(k, axis) - lo) / h.width));
    if (b >= 0 && b < bins) h.mass(b) += inv_n;
  }
  return h;
}

inline Histogram2D histogram2d(const ParticleCloud& cloud, int axis_a, int axis_b, int bins,
                               double lo, double hi) {
  if (bins < 1 || !(hi > lo)) throw std::invalid_argument("bad histogram geometry");
  Histogram2D h;
  h.axis_a = axis_a;
  h.axis_b = axis_b;
  h.lo = lo;
  h.width = (hi - lo) / bins;
  h.mass = Eigen::MatrixXd::Zero(bins, bins);
  const double inv_n = 1.0 / static_cast<double>(cloud.N());
  for (long k = 0; k < cloud.N(); ++k) {
    const int ba = static_cast<int>(std::floor((cloud.xs(k, axis_a) - lo) / h.width));
    const int bb = static_cast<int>(std::floor((cloud.xs(k, axis_b) - lo) / h.width));
    if (ba >= 0 && ba < bins && bb >= 0 && bb < bins) h.mass(ba, bb) += inv_n;
  }
  return h;
}

// Fixed-bandwidth mode counter: box-smooth with the given radius, then count
// strict local maxima above a floor relative to the tallest cell. Bandwidth
// and floor are part of the definition, not tuned per dataset.
inline int count_modes(const Histogram2D& h, int radius = 2, double floor_frac = 0.05) {
  const int n = static_cast<int>(h.mass.rows());
  Eigen::MatrixXd smooth = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      int cnt = 0;
      for (int di = -radius; di <= radius; ++di)
        for (int dj = -radius; dj <= radius; ++dj) {
          const int a = i + di, b = j + dj;
          if (a < 0 || a >= n || b < 0 || b >= n) continue;
          acc += h.mass(a, b);
          ++cnt;
        }
      smooth(i, j) = acc / cnt;
    }
  const double peak = smooth.maxCoeff();
  if (peak <= 0.0) return 0;
  int modes = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (smooth(i, j) < floor_frac * peak) continue;
      bool is_max = true;
      for (int di = -1; di <= 1 && is_max; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          if (di == 0 && dj == 0) continue;
          const int a = i + di, b = j + dj;
          const double v = (a < 0 || a >= n || b < 0 || b >= n) ? -1.0 : smooth(a, b);
          if (v >= smooth(i, j)) {
            is_max = false;
            break;
          }
        }
      if (is_max) ++modes;
    }
  return modes;
}

// One-sample Kolmogorov-Smirnov distance against a reference CDF.
inline double ks_distance(std::vector<double> sample, const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (size_t k = 0; k < sample.size(); ++k) {
    const double F = cdf(sample[k]);
    d = std::max(d, std::abs(F - static_cast<double>(k) / n));
    d = std::max(d, std::abs(F - static_cast<double>(k + 1) / n));
  }
  return d;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace icadyn
