#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "icadyn/ode.hpp"

namespace icadyn {

// Diagonal steady-state query for f(x) = -x^3. In q = Q^2 the diagonal drift
// factors as dQ/dt = -(tau^2/2) Q P(q) with P cubic; the coefficients are
// derived accessors so they can never go stale against (tau, m4, m6).
struct PhaseQuery {
  double tau;
  double m4;
  double m6;

  double varpi() const { return 15.0; }
  double xi() const { return (m6 - 15.0) - 15.0 * (m4 - 3.0); }
  double eta() const { return (m4 - 3.0) * (15.0 - 2.0 / tau); }
  double zeta() const { return 2.0 * (m4 - 3.0) / tau; }

  double P(double q) const { return ((xi() * q + eta()) * q + zeta()) * q + varpi(); }
  double dP(double q) const { return (3.0 * xi() * q + 2.0 * eta()) * q + zeta(); }
};

inline void require_cubic_minus(Nonlinearity f) {
  if (f != Nonlinearity::CubicMinus)
    throw std::invalid_argument("phase formulas hold for the contracting cubic only");
}

// Both gates together: the cubic discriminant admits the double-dip root
// pattern, and the reciprocal polynomial slope at 1 keeps the root inside
// (0, 1).
inline bool is_learnable(const PhaseQuery& q, Nonlinearity f = Nonlinearity::CubicMinus) {
  require_cubic_minus(f);
  const double xi = q.xi(), eta = q.eta(), zeta = q.zeta(), varpi = q.varpi();
  const double disc = eta * eta * zeta * zeta - 4.0 * xi * zeta * zeta * zeta -
                      4.0 * eta * eta * eta * varpi - 27.0 * xi * xi * varpi * varpi +
                      18.0 * xi * eta * zeta * varpi;
  const double slope = 3.0 * varpi + 2.0 * zeta + eta;
  return disc > 0.0 && slope < 0.0;
}

namespace detail {

// Real roots of xi q^3 + eta q^2 + zeta q + varpi, Newton-polished. Degrades
// to the quadratic / linear cases when leading coefficients vanish.
inline std::vector<double> real_cubic_roots(double xi, double eta, double zeta, double varpi) {
  std::vector<double> roots;
  const double scale = std::max({std::abs(xi), std::abs(eta), std::abs(zeta), std::abs(varpi)});
  if (scale == 0.0) return roots;
  if (std::abs(xi) < 1e-14 * scale) {
    if (std::abs(eta) < 1e-14 * scale) {
      if (std::abs(zeta) >= 1e-14 * scale) roots.push_back(-varpi / zeta);
      return roots;
    }
    const double disc = zeta * zeta - 4.0 * eta * varpi;
    if (disc < 0.0) return roots;
    const double sq = std::sqrt(disc);
    // Citardauq form keeps the small root accurate.
    const double q = -0.5 * (zeta + (zeta >= 0.0 ? sq : -sq));
    roots.push_back(q / eta);
    if (q != 0.0) roots.push_back(varpi / q);
    return roots;
  }
  // Depressed form t^3 + pt + r with q = t - eta / (3 xi).
  const double a = eta / xi, b = zeta / xi, c = varpi / xi;
  const double p = b - a * a / 3.0;
  const double r = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
  const double shift = -a / 3.0;
  const double disc = -(4.0 * p * p * p + 27.0 * r * r);
  if (disc > 0.0) {
    // three real roots, trigonometric form
    const double m = 2.0 * std::sqrt(-p / 3.0);
    const double arg = std::clamp(3.0 * r / (p * m), -1.0, 1.0);
    const double theta = std::acos(arg) / 3.0;
    for (int k = 0; k < 3; ++k)
      roots.push_back(shift + m * std::cos(theta - 2.0 * M_PI * k / 3.0));
  } else {
    // single real root, Cardano with stable sign handling
    const double half_r = r / 2.0;
    const double s = std::sqrt(std::max(0.0, half_r * half_r + p * p * p / 27.0));
    const double u = std::cbrt(-half_r + s);
    const double w = std::cbrt(-half_r - s);
    roots.push_back(shift + u + w);
  }
  // Newton polish against the original coefficients.
  for (double& q : roots)
    for (int it = 0; it < 4; ++it) {
      const double f = ((xi * q + eta) * q + zeta) * q + varpi;
      const double df = (3.0 * xi * q + 2.0 * eta) * q + zeta;
      if (df == 0.0) break;
      q -= f / df;
    }
  std::sort(roots.begin(), roots.end());
  roots.erase(std::unique(roots.begin(), roots.end(),
                          [](double x, double y) { return std::abs(x - y) < 1e-9; }),
              roots.end());
  return roots;
}

}  // namespace detail

struct FixedPointReport {
  std::optional<double> q_star;       // largest steady q in (0, 1)
  std::optional<bool> stable;         // diagonal Jacobian verdict at sqrt(q_star)
  double jacobian_value = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> roots_in_unit;  // every root of P inside (0, 1)
};

// Diagonal-entry Jacobian of the contracting cubic at overlap value Q.
inline double diagonal_jacobian(double Q, double tau, double m4, double m6) {
  const double q2 = Q * Q;
  const double q4 = q2 * q2;
  const double q6 = q4 * q2;
  return tau * (q6 * (7.0 * tau / 2.0) * (-m6 + 15.0 * m4 - 30.0) +
                q4 * (m4 - 3.0) * (-75.0 * tau / 2.0 + 5.0) -
                3.0 * q2 * (m4 - 3.0) - 15.0 * tau / 2.0);
}

inline FixedPointReport steady_overlap(const PhaseQuery& query,
                                       Nonlinearity f = Nonlinearity::CubicMinus) {
  require_cubic_minus(f);
  FixedPointReport rep;
  for (double q : detail::real_cubic_roots(query.xi(), query.eta(), query.zeta(), query.varpi()))
    if (q > 1e-12 && q < 1.0 - 1e-12) rep.roots_in_unit.push_back(q);
  if (!is_learnable(query) || rep.roots_in_unit.empty()) return rep;
  // A double root carries no basin; the discriminant gate already rejected it.
  rep.q_star = rep.roots_in_unit.back();
  rep.jacobian_value = diagonal_jacobian(std::sqrt(*rep.q_star), query.tau, query.m4, query.m6);
  rep.stable = rep.jacobian_value < 0.0;
  return rep;
}

// Separatrix slope of the autonomous first row: Q_12 = +- slope * Q_11.
inline std::optional<double> competition_boundary(double m14, double m24) {
  const double den = m24 - 3.0;
  if (std::abs(den) < 1e-12)
    throw std::invalid_argument("degenerate denominator: second source has m4 = 3");
  const double ratio = (m14 - 3.0) / den;
  if (ratio <= 0.0) return std::nullopt;
  return std::sqrt(ratio);
}

// Pairwise differences of relative growth rates tau (<c_b gamma>/Q_b -
// <c_a gamma>/Q_a) for one overlap row; zero on the separatrix. Entries are
// ordered (a, b) lexicographically over a < b.
inline Eigen::VectorXd general_competition_residual(const Eigen::RowVectorXd& q_row, double tau,
                                                    const std::vector<SourceSpec>& specs,
                                                    Nonlinearity f, const CoeffMethod& method) {
  const Eigen::Index p = q_row.size();
  for (Eigen::Index j = 0; j < p; ++j)
    if (q_row(j) == 0.0)
      throw std::invalid_argument("competition residual undefined: overlap entry " +
                                  std::to_string(j) + " is zero");
  MeanFieldCoeffs co = eval_coeffs(q_row, specs, f, method);
  // <c_j gamma> = Psi(j, 0) + Q(0, j) <gamma'>
  Eigen::VectorXd rel(p);
  for (Eigen::Index j = 0; j < p; ++j)
    rel(j) = (co.Psi(j, 0) + q_row(j) * co.fprime_mean(0)) / q_row(j);
  Eigen::VectorXd out(p * (p - 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = a + 1; b < p; ++b) out(k++) = tau * (rel(b) - rel(a));
  return out;
}

struct StaircaseOpts {
  double q0_decoupled = 0.3;   // per-component init in the decoupled count
  double q0_competition = 0.28;
  double t_end = 4000.0;
  double record_dt = 20.0;
  double steady_tol = 1e-9;
  double recovery_threshold = 0.5;
};

// Greedy |Q| assignment; returns the number of matched pairs at or above the
// threshold. Each row and component is used at most once.
inline int count_recovered(const Eigen::MatrixXd& Q, double threshold) {
  const Eigen::Index p = Q.rows();
  Eigen::MatrixXd A = Q.cwiseAbs();
  std::vector<bool> row_used(p, false), col_used(Q.cols(), false);
  int matched = 0;
  for (Eigen::Index it = 0; it < std::min(Q.rows(), Q.cols()); ++it) {
    double best = -1.0;
    Eigen::Index bi = -1, bj = -1;
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      if (row_used[i]) continue;
      for (Eigen::Index j = 0; j < A.cols(); ++j) {
        if (col_used[j]) continue;
        if (A(i, j) > best) {
          best = A(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    if (bi < 0) break;
    row_used[bi] = true;
    col_used[bj] = true;
    if (best >= threshold) ++matched;
  }
  return matched;
}

// Per-tau recovery counts along two routes: the decoupled criterion applies
// the learnability gates per component; the competition route integrates the
// full coupled system from a shared small overlap and counts matched
// components at the end. ODE failures land in the per-point flag instead of
// aborting the scan.
struct StaircaseRow {
  double tau = 0.0;
  int count_decoupled = 0;
  int count_competition = 0;
  bool ode_failed = false;
  std::string error;
};

inline std::vector<StaircaseRow> staircase(const std::vector<double>& taus,
                                           const std::vector<MomentSet>& moments,
                                           const StaircaseOpts& opts = {}) {
  const int p = static_cast<int>(moments.size());
  std::vector<StaircaseRow> out;
  out.reserve(taus.size());
  for (double tau : taus) {
    StaircaseRow row;
    row.tau = tau;
    for (const auto& m : moments)
      if (is_learnable({tau, m.m4, m.m6})) ++row.count_decoupled;
    try {
      Eigen::MatrixXd Q0 =
          Eigen::MatrixXd::Constant(p, p, opts.q0_competition / std::sqrt(static_cast<double>(p)));
      RhsFn rhs = [&](const Eigen::MatrixXd& Q) {
        return rhs_cubic_general(Q, tau, moments, -1);
      };
      OdeOpts oopts;
      oopts.t_end = opts.t_end;
      oopts.record_dt = opts.record_dt;
      oopts.steady_tol = opts.steady_tol;
      OdeResult res = integrate_overlap(rhs, Q0, oopts);
      row.count_competition = count_recovered(res.Qs.back(), opts.recovery_threshold);
    } catch (const std::exception& e) {
      row.ode_failed = true;
      row.error = e.what();
    }
    out.push_back(std::move(row));
  }
  return out;
}

struct TauMaxReport {
  std::optional<double> tau_max;
  std::optional<double> conv_time;  // at tau_max / 2
};

struct TauMaxOpts {
  double tau_lo = 1e-4;
  double tau_hi = 0.5;
  int bisection_iters = 20;
  double recovery_threshold = 0.5;
  double q0_value = 0.3;  // diagonal init
  double t_end = 4000.0;
  double record_dt = 5.0;
  double steady_tol = 1e-9;
};

// Largest tau for which every component is recovered, by bisection on the
// integrated endpoint. An impossible threshold (> 1) reports no tau_max.
inline TauMaxReport tau_max_and_time(const std::vector<MomentSet>& moments,
                                     const TauMaxOpts& opts = {}) {
  TauMaxReport rep;
  if (opts.recovery_threshold > 1.0) return rep;
  const int p = static_cast<int>(moments.size());
  auto run = [&](double tau) {
    Eigen::MatrixXd Q0 = Eigen::MatrixXd::Identity(p, p) * opts.q0_value;
    RhsFn rhs = [&](const Eigen::MatrixXd& Q) { return rhs_cubic_general(Q, tau, moments, -1); };
    OdeOpts oopts;
    oopts.t_end = opts.t_end;
    oopts.record_dt = opts.record_dt;
    oopts.steady_tol = opts.steady_tol;
    return integrate_overlap(rhs, Q0, oopts);
  };
  auto recovers = [&](double tau) {
    try {
      OdeResult res = run(tau);
      return count_recovered(res.Qs.back(), opts.recovery_threshold) == p;
    } catch (const std::exception&) {
      return false;
    }
  };
  double lo = opts.tau_lo, hi = opts.tau_hi;
  if (!recovers(lo)) return rep;
  if (recovers(hi)) {
    rep.tau_max = hi;
  } else {
    for (int it = 0; it < opts.bisection_iters; ++it) {
      const double mid = 0.5 * (lo + hi);
      (recovers(mid) ? lo : hi) = mid;
    }
    rep.tau_max = lo;
  }
  // Convergence time at half the critical rate: first recorded time at which
  // every terminally-matched overlap has crossed the threshold.
  const double tau_half = *rep.tau_max / 2.0;
  OdeResult res = run(tau_half);
  if (count_recovered(res.Qs.back(), opts.recovery_threshold) == p) {
    const Eigen::MatrixXd term = res.Qs.back().cwiseAbs();
    std::vector<int> assign(p, -1);
    std::vector<bool> row_used(p, false), col_used(p, false);
    for (int it = 0; it < p; ++it) {
      double best = -1.0;
      int bi = -1, bj = -1;
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j)
          if (!row_used[i] && !col_used[j] && term(i, j) > best) {
            best = term(i, j);
            bi = i;
            bj = j;
          }
      row_used[bi] = true;
      col_used[bj] = true;
      assign[bi] = bj;
    }
    for (size_t k = 0; k < res.ts.size(); ++k) {
      bool all = true;
      for (int i = 0; i < p; ++i)
        if (std::abs(res.Qs[k](i, assign[i])) < opts.recovery_threshold) {
          all = false;
          break;
        }
      if (all) {
        rep.conv_time = res.ts[k];
        break;
      }
    }
  }
  return rep;
}

}  // namespace icadyn
