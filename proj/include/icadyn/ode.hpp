#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <boost/numeric/odeint.hpp>
#include <boost/numeric/odeint/external/eigen/eigen.hpp>

#include <Eigen/Core>

#include "icadyn/coefficients.hpp"

namespace icadyn {

using RhsFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

// dQ/dt = -(tau^2/2) T(C) Q - tau T(M) Q + tau Psi^T, coefficients evaluated
// fresh at Q by any method. Valid for every nonlinearity without a penalty.
inline Eigen::MatrixXd rhs_generic(const Eigen::MatrixXd& Q, double tau, Nonlinearity f,
                                   const std::vector<SourceSpec>& specs,
                                   const CoeffMethod& method, double feas_tol = 1e-6) {
  MeanFieldCoeffs co = eval_coeffs(Q, specs, f, method, feas_tol);
  return -(tau * tau / 2.0) * tril_mix(co.C) * Q - tau * tril_mix(co.M) * Q +
         tau * co.Psi.transpose();
}

// Same drift through the moments-only cubic coefficients; any p.
inline Eigen::MatrixXd rhs_cubic_general(const Eigen::MatrixXd& Q, double tau,
                                         const std::vector<MomentSet>& moments, int sign,
                                         double feas_tol = 1e-6) {
  MeanFieldCoeffs co = eval_coeffs_cubic(Q, moments, sign, feas_tol);
  return -(tau * tau / 2.0) * tril_mix(co.C) * Q - tau * tril_mix(co.M) * Q +
         tau * co.Psi.transpose();
}

namespace detail {

inline double cross_gain_p2(const Eigen::MatrixXd& Q, const std::array<MomentSet, 2>& m) {
  // D = sum over the off-diagonal score couplings q_i . psi_l, both orders.
  return Q(0, 0) * std::pow(Q(1, 0), 3) * m[0].kappa4() +
         Q(0, 1) * std::pow(Q(1, 1), 3) * m[1].kappa4() +
         Q(1, 0) * std::pow(Q(0, 0), 3) * m[0].kappa4() +
         Q(1, 1) * std::pow(Q(0, 1), 3) * m[1].kappa4();
}

}  // namespace detail

// First-row drift of the two-component cubic system. The first row is
// autonomous: it never feels the second row.
inline Eigen::Vector2d first_row_rhs_p2(double a, double b, double tau,
                                        const std::array<MomentSet, 2>& m, int sign) {
  const double s = static_cast<double>(sign);
  const double k14 = m[0].kappa4(), k24 = m[1].kappa4();
  const double W = detail::score_var_p2(a, b, m[0], m[1]);
  const double gain = a * a * a * a * k14 + b * b * b * b * k24;
  Eigen::Vector2d d;
  d(0) = s * tau * a * a * a * k14 - (tau * tau / 2.0) * a * W - s * tau * a * gain;
  d(1) = s * tau * b * b * b * k24 - (tau * tau / 2.0) * b * W - s * tau * b * gain;
  return d;
}

// Fully expanded two-component cubic drift. This is a literal transcription
// of the degree-six polynomial system and shares no assembly code with
// rhs_generic; the agreement between the two is a tested property.
inline Eigen::MatrixXd rhs_cubic_p2(const Eigen::MatrixXd& Q, double tau,
                                    const std::array<MomentSet, 2>& m, int sign) {
  if (Q.rows() != 2 || Q.cols() != 2)
    throw std::invalid_argument("explicit two-component drift needs a 2 x 2 overlap");
  const double s = static_cast<double>(sign);
  const double k14 = m[0].kappa4(), k24 = m[1].kappa4();
  Eigen::MatrixXd d(2, 2);
  const Eigen::Vector2d row1 = first_row_rhs_p2(Q(0, 0), Q(0, 1), tau, m, sign);
  d(0, 0) = row1(0);
  d(0, 1) = row1(1);
  const double W2 = detail::score_var_p2(Q(1, 0), Q(1, 1), m[0], m[1]);
  const double F = detail::score_cross_p2(Q, m[0], m[1]);
  const double D = detail::cross_gain_p2(Q, m);
  const double gain2 =
      std::pow(Q(1, 0), 4) * k14 + std::pow(Q(1, 1), 4) * k24;
  for (int j = 0; j < 2; ++j) {
    const double q = Q(1, j);
    const double kj4 = j == 0 ? k14 : k24;
    d(1, j) = s * tau * q * q * q * kj4 - (tau * tau / 2.0) * q * W2 -
              tau * tau * Q(0, j) * F - s * tau * Q(0, j) * D - s * tau * q * gain2;
  }
  return d;
}

enum class OdeStepper { RK45, RK4 };

struct OdeOpts {
  double t_end = 200.0;
  double record_dt = 0.5;
  double atol = 1e-9;
  double rtol = 1e-7;
  double steady_tol = 1e-8;   // Frobenius norm of the drift
  OdeStepper stepper = OdeStepper::RK45;
  double rk4_dt = 0.01;
  double init_dt = 1e-3;
};

struct OdeResult {
  std::vector<double> ts;
  std::vector<Eigen::MatrixXd> Qs;
  bool steady = false;
  double t_steady = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

[[noreturn]] inline void throw_underflow(double t, double dt, const Eigen::MatrixXd& Q) {
  std::ostringstream os;
  os << "step size underflow at t = " << t << " (dt = " << dt << "); last state:";
  for (Eigen::Index i = 0; i < Q.rows(); ++i)
    for (Eigen::Index j = 0; j < Q.cols(); ++j)
      os << ' ' << "Q(" << i << ',' << j << ")=" << Q(i, j);
  throw std::runtime_error(os.str());
}

}  // namespace detail

// Integrates dQ/dt = rhs(Q) on a fixed recording grid. Stops early once the
// drift norm falls under steady_tol. Throws on step-size underflow with the
// last state embedded in the message.
inline OdeResult integrate_overlap(const RhsFn& rhs, const Eigen::MatrixXd& Q0,
                                   const OdeOpts& opts) {
  namespace ode = boost::numeric::odeint;
  if (opts.t_end < 0.0 || opts.record_dt <= 0.0)
    throw std::invalid_argument("invalid integration horizon");
  const Eigen::Index rows = Q0.rows(), cols = Q0.cols();
  using State = Eigen::VectorXd;
  State v = Eigen::Map<const State>(Q0.data(), rows * cols);
  auto unpack = [rows, cols](const State& s) {
    return Eigen::MatrixXd(Eigen::Map<const Eigen::MatrixXd>(s.data(), rows, cols));
  };
  auto sys = [&](const State& s, State& dsdt, double) {
    Eigen::MatrixXd d = rhs(unpack(s));
    dsdt = Eigen::Map<const State>(d.data(), rows * cols);
  };

  OdeResult out;
  auto record = [&](double t, const State& s) -> bool {
    out.ts.push_back(t);
    out.Qs.push_back(unpack(s));
    const double drift = rhs(out.Qs.back()).norm();
    if (drift < opts.steady_tol) {
      out.steady = true;
      out.t_steady = t;
      return true;
    }
    return false;
  };

  if (record(0.0, v)) return out;

  const long n_rec = static_cast<long>(std::floor(opts.t_end / opts.record_dt + 1e-9));
  double t = 0.0;

  if (opts.stepper == OdeStepper::RK4) {
    ode::runge_kutta4<State, double, State, double, ode::vector_space_algebra> rk4;
    for (long k = 1; k <= n_rec; ++k) {
      const double target = k * opts.record_dt;
      while (t < target - 1e-12 * std::max(1.0, target)) {
        const double h = std::min(opts.rk4_dt, target - t);
        rk4.do_step(sys, v, t, h);
        t += h;
      }
      if (record(target, v)) return out;
    }
    return out;
  }

  using Base = ode::runge_kutta_dopri5<State, double, State, double, ode::vector_space_algebra>;
  auto ctrl = ode::make_controlled(opts.atol, opts.rtol, Base());
  double dt = opts.init_dt;
  for (long k = 1; k <= n_rec; ++k) {
    const double target = k * opts.record_dt;
    while (t < target - 1e-12 * std::max(1.0, target)) {
      double step = std::min(dt, target - t);
      ode::controlled_step_result res;
      try {
        res = ctrl.try_step(sys, v, t, step);
      } catch (const std::domain_error&) {
        // A trial stage probed outside the feasible set. The state is
        // untouched, so treat it as a rejection and retry shorter; rebuild
        // the controller to drop its cached derivative.
        if (step < 1e-14 * std::max(1.0, std::abs(t)))
          detail::throw_underflow(t, step, unpack(v));
        ctrl = ode::make_controlled(opts.atol, opts.rtol, Base());
        dt = 0.5 * step;
        continue;
      }
      if (res == ode::fail) {
        if (step < 1e-14 * std::max(1.0, std::abs(t)))
          detail::throw_underflow(t, step, unpack(v));
        dt = step;
      } else {
        dt = step;  // accepted; step now carries the suggested next size
      }
    }
    if (record(target, v)) return out;
  }
  return out;
}

struct PhaseFieldPoint {
  double qa, qb, dqa, dqb;
};

// Drift field of the autonomous first row over a rectangular grid.
inline std::vector<PhaseFieldPoint> phase_field(const std::vector<double>& grid_a,
                                                const std::vector<double>& grid_b, double tau,
                                                const std::array<MomentSet, 2>& m, int sign) {
  std::vector<PhaseFieldPoint> out;
  out.reserve(grid_a.size() * grid_b.size());
  for (double a : grid_a)
    for (double b : grid_b) {
      const Eigen::Vector2d d = first_row_rhs_p2(a, b, tau, m, sign);
      out.push_back({a, b, d(0), d(1)});
    }
  return out;
}

}  // namespace icadyn
