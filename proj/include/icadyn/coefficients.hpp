#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "icadyn/nonlinearity.hpp"
#include "icadyn/quadrature.hpp"
#include "icadyn/rng.hpp"
#include "icadyn/sources.hpp"

namespace icadyn {

// Residual amplitudes s_i = sqrt(1 - |q_i|^2). Rows may poke past the unit
// ball by at most feas_tol (roundoff); those get clamped to s = 0 and flagged.
struct ResidualScale {
  Eigen::VectorXd s;
  bool clamped = false;
};

inline ResidualScale residual_scale(const Eigen::MatrixXd& Q, double feas_tol = 1e-9) {
  ResidualScale out;
  out.s.resize(Q.rows());
  for (Eigen::Index i = 0; i < Q.rows(); ++i) {
    double deficit = 1.0 - Q.row(i).squaredNorm();
    if (deficit < -feas_tol)
      throw std::domain_error("overlap row " + std::to_string(i) +
                              " is infeasible: squared norm " +
                              std::to_string(Q.row(i).squaredNorm()) + " exceeds 1");
    if (deficit < 0.0) {
      out.clamped = true;
      deficit = 0.0;
    }
    out.s(i) = std::sqrt(deficit);
  }
  return out;
}

// T(A) = tril(A + A^T) - diag(A). Row l of T(A) x reads
// A_ll x_l + sum_{i<l} (A_li + A_il) x_i: each unordered pair enters once.
inline Eigen::MatrixXd tril_mix(const Eigen::MatrixXd& A) {
  Eigen::MatrixXd T = (A + A.transpose()).triangularView<Eigen::Lower>();
  T.diagonal() -= A.diagonal();
  return T;
}

struct CoeffMethod {
  enum class Kind { ClosedFormCubic, Quadrature, MonteCarlo };
  Kind kind = Kind::ClosedFormCubic;
  int nodes = 16;              // per-axis order (Quadrature)
  long samples = 1000000;      // MonteCarlo
  std::uint64_t seed = 0;      // MonteCarlo

  static CoeffMethod closed_form() { return {}; }
  static CoeffMethod quadrature(int nodes = 16) {
    CoeffMethod m;
    m.kind = Kind::Quadrature;
    m.nodes = nodes;
    return m;
  }
  static CoeffMethod monte_carlo(long samples, std::uint64_t seed) {
    CoeffMethod m;
    m.kind = Kind::MonteCarlo;
    m.samples = samples;
    m.seed = seed;
    return m;
  }
};

// Averages of the score functions gamma_i = f(v_i) under the surrogate law
// v_i = q_i . c + s_i e_i with e_i independent standard normals per row.
//   Psi(j, i) = <c_j gamma_i> - Q(i, j) <gamma_i'>   (columns index rows of Q)
//   M = Q Psi,  C(i, l) = <gamma_i gamma_l>
struct MeanFieldCoeffs {
  Eigen::MatrixXd Psi;
  Eigen::MatrixXd M;
  Eigen::MatrixXd C;
  Eigen::VectorXd fmean;
  Eigen::VectorXd fprime_mean;
  ResidualScale scale;
  Eigen::MatrixXd Psi_se;  // Monte Carlo standard errors; zero for exact routes
  Eigen::MatrixXd C_se;
};

namespace detail {

// Cubic closed form for any p, via joint cumulants of (v_i, v_l). All mixed
// cumulants of order r+s reduce to sums over the shared sources because the
// row noises are independent; the sixth-moment expansion then needs only the
// pair-partition bookkeeping below.
inline MeanFieldCoeffs eval_cumulant_cubic(const Eigen::MatrixXd& Q,
                                           const std::vector<MomentSet>& moments, int sign,
                                           ResidualScale scale) {
  const Eigen::Index r = Q.rows(), p = Q.cols();
  Eigen::VectorXd m3(p), k4(p), k6(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    m3(j) = moments[j].m3;
    k4(j) = moments[j].kappa4();
    k6(j) = moments[j].kappa6();
  }
  Eigen::MatrixXd Q2 = Q.array().square();
  Eigen::MatrixXd Q3 = Q2.array() * Q.array();
  Eigen::VectorXd v(r), K3(r), K4(r), K6(r);
  for (Eigen::Index i = 0; i < r; ++i) {
    v(i) = Q.row(i).squaredNorm() + scale.s(i) * scale.s(i);
    K3(i) = Q3.row(i).dot(m3);
    K4(i) = Q2.row(i).cwiseProduct(Q2.row(i)).dot(k4);
    K6(i) = Q3.row(i).cwiseProduct(Q3.row(i)).dot(k6);
  }

  MeanFieldCoeffs out;
  out.scale = std::move(scale);
  out.fmean = sign * K3;
  out.fprime_mean = sign * 3.0 * v;
  out.Psi.resize(p, r);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < p; ++j) out.Psi(j, i) = sign * Q3(i, j) * k4(j);

  out.C.resize(r, r);
  for (Eigen::Index i = 0; i < r; ++i) {
    out.C(i, i) = K6(i) + 15.0 * K4(i) * v(i) + 10.0 * K3(i) * K3(i) +
                  15.0 * v(i) * v(i) * v(i);
    for (Eigen::Index l = i + 1; l < r; ++l) {
      double k11 = Q.row(i).dot(Q.row(l));
      double k13 = 0, k31 = 0, k22 = 0, k33 = 0, k21 = 0, k12 = 0;
      for (Eigen::Index j = 0; j < p; ++j) {
        k13 += Q(i, j) * Q3(l, j) * k4(j);
        k31 += Q3(i, j) * Q(l, j) * k4(j);
        k22 += Q2(i, j) * Q2(l, j) * k4(j);
        k33 += Q3(i, j) * Q3(l, j) * k6(j);
        k21 += Q2(i, j) * Q(l, j) * m3(j);
        k12 += Q(i, j) * Q2(l, j) * m3(j);
      }
      // E[A^3 B^3] over all partitions of three A's and three B's.
      const double mu33 = k33 + 3.0 * v(i) * k13 + 3.0 * v(l) * k31 + 9.0 * k11 * k22 +
                          K3(i) * K3(l) + 9.0 * k21 * k12 +
                          9.0 * v(i) * k11 * v(l) + 6.0 * k11 * k11 * k11;
      out.C(i, l) = out.C(l, i) = mu33;  // the two cubic signs cancel in products
    }
  }
  out.M = Q * out.Psi;
  out.Psi_se = Eigen::MatrixXd::Zero(p, r);
  out.C_se = Eigen::MatrixXd::Zero(r, r);
  return out;
}

inline MeanFieldCoeffs eval_quadrature(const Eigen::MatrixXd& Q,
                                       const std::vector<SourceSpec>& specs, Nonlinearity f,
                                       int nodes, ResidualScale scale) {
  const Eigen::Index r = Q.rows(), p = Q.cols();
  std::vector<QuadratureRule> rules;
  rules.reserve(p);
  for (Eigen::Index j = 0; j < p; ++j) rules.push_back(source_rule(specs[j], nodes));
  const QuadratureRule gh = gauss_hermite(nodes);

  Eigen::VectorXd fbar = Eigen::VectorXd::Zero(r);
  Eigen::VectorXd fpbar = Eigen::VectorXd::Zero(r);
  Eigen::MatrixXd Cacc = Eigen::MatrixXd::Zero(r, r);
  Eigen::MatrixXd cf = Eigen::MatrixXd::Zero(p, r);  // <c_j f_i>

  std::vector<int> idx(p, 0);
  Eigen::VectorXd c(p);
  Eigen::VectorXd F1(r), F2(r), FP(r);
  Eigen::ArrayXd u, fv, fpv;
  bool done = p == 0;
  while (!done) {
    double w = 1.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      c(j) = rules[j].nodes(idx[j]);
      w *= rules[j].weights(idx[j]);
    }
    // Conditionally on c the rows decouple: one Gauss-Hermite sweep per row.
    for (Eigen::Index i = 0; i < r; ++i) {
      const double m = Q.row(i).dot(c);
      const double s = scale.s(i);
      if (s > 1e-14) {
        u = m + s * gh.nodes.array();
        f_apply(f, u, fv);
        f_prime_apply(f, u, fpv);
        F1(i) = (gh.weights.array() * fv).sum();
        F2(i) = (gh.weights.array() * fv * fv).sum();
        FP(i) = (gh.weights.array() * fpv).sum();
      } else {
        const double fm = f_eval(f, m);
        F1(i) = fm;
        F2(i) = fm * fm;
        FP(i) = f_prime(f, m);
      }
    }
    fbar += w * F1;
    fpbar += w * FP;
    cf += w * c * F1.transpose();
    for (Eigen::Index i = 0; i < r; ++i) {
      Cacc(i, i) += w * F2(i);
      for (Eigen::Index l = i + 1; l < r; ++l) Cacc(i, l) += w * F1(i) * F1(l);
    }
    // odometer over the tensor grid
    done = true;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (++idx[j] < rules[j].nodes.size()) {
        done = false;
        break;
      }
      idx[j] = 0;
    }
  }

  MeanFieldCoeffs out;
  out.scale = std::move(scale);
  out.fmean = fbar;
  out.fprime_mean = fpbar;
  out.Psi.resize(p, r);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < p; ++j) out.Psi(j, i) = cf(j, i) - Q(i, j) * fpbar(i);
  out.C = Cacc.selfadjointView<Eigen::Upper>();
  out.M = Q * out.Psi;
  out.Psi_se = Eigen::MatrixXd::Zero(p, r);
  out.C_se = Eigen::MatrixXd::Zero(r, r);
  return out;
}

inline MeanFieldCoeffs eval_monte_carlo(const Eigen::MatrixXd& Q,
                                        const std::vector<SourceSpec>& specs, Nonlinearity f,
                                        long samples, std::uint64_t seed,
                                        ResidualScale scale) {
  if (samples < 2) throw std::invalid_argument("need at least 2 Monte Carlo samples");
  const Eigen::Index r = Q.rows(), p = Q.cols();
  Rng rng = make_stream(seed, 0x636f6566ULL);
  Eigen::VectorXd sum_f = Eigen::VectorXd::Zero(r), sum_fp = Eigen::VectorXd::Zero(r);
  Eigen::MatrixXd sum_C = Eigen::MatrixXd::Zero(r, r), sum_C2 = Eigen::MatrixXd::Zero(r, r);
  Eigen::MatrixXd sum_P = Eigen::MatrixXd::Zero(p, r), sum_P2 = Eigen::MatrixXd::Zero(p, r);
  Eigen::VectorXd c(p), fv(r), fpv(r);
  for (long it = 0; it < samples; ++it) {
    for (Eigen::Index j = 0; j < p; ++j) c(j) = specs[j].sample(rng);
    for (Eigen::Index i = 0; i < r; ++i) {
      const double u = Q.row(i).dot(c) + scale.s(i) * draw_normal(rng);
      fv(i) = f_eval(f, u);
      fpv(i) = f_prime(f, u);
    }
    sum_f += fv;
    sum_fp += fpv;
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index l = i; l < r; ++l) {
        const double prod = fv(i) * fv(l);
        sum_C(i, l) += prod;
        sum_C2(i, l) += prod * prod;
      }
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < p; ++j) {
        const double val = c(j) * fv(i) - Q(i, j) * fpv(i);
        sum_P(j, i) += val;
        sum_P2(j, i) += val * val;
      }
  }
  const double S = static_cast<double>(samples);
  auto stderr_of = [S](double sum, double sumsq) {
    const double mean = sum / S;
    return std::sqrt(std::max(0.0, sumsq / S - mean * mean) / S);
  };
  MeanFieldCoeffs out;
  out.scale = std::move(scale);
  out.fmean = sum_f / S;
  out.fprime_mean = sum_fp / S;
  out.Psi = sum_P / S;
  out.Psi_se.resize(p, r);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < p; ++j)
      out.Psi_se(j, i) = stderr_of(sum_P(j, i), sum_P2(j, i));
  out.C.resize(r, r);
  out.C_se.resize(r, r);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index l = i; l < r; ++l) {
      out.C(i, l) = out.C(l, i) = sum_C(i, l) / S;
      out.C_se(i, l) = out.C_se(l, i) = stderr_of(sum_C(i, l), sum_C2(i, l));
    }
  out.M = Q * out.Psi;
  return out;
}

}  // namespace detail

inline MeanFieldCoeffs eval_coeffs(const Eigen::MatrixXd& Q,
                                   const std::vector<SourceSpec>& specs, Nonlinearity f,
                                   const CoeffMethod& method, double feas_tol = 1e-9) {
  if (static_cast<size_t>(Q.cols()) != specs.size())
    throw std::invalid_argument("need one source spec per overlap column");
  ResidualScale scale = residual_scale(Q, feas_tol);
  switch (method.kind) {
    case CoeffMethod::Kind::ClosedFormCubic: {
      const int sign = cubic_sign(f);  // rejects non-cubic shapes
      std::vector<MomentSet> moments;
      moments.reserve(specs.size());
      for (const auto& s : specs) moments.push_back(s.moments());
      return detail::eval_cumulant_cubic(Q, moments, sign, std::move(scale));
    }
    case CoeffMethod::Kind::Quadrature:
      return detail::eval_quadrature(Q, specs, f, method.nodes, std::move(scale));
    case CoeffMethod::Kind::MonteCarlo:
      return detail::eval_monte_carlo(Q, specs, f, method.samples, method.seed,
                                      std::move(scale));
  }
  throw std::logic_error("unreachable coefficient method");
}

// Moments-only entry point for the cubic closed form (no samplers needed).
inline MeanFieldCoeffs eval_coeffs_cubic(const Eigen::MatrixXd& Q,
                                         const std::vector<MomentSet>& moments, int sign,
                                         double feas_tol = 1e-9) {
  if (static_cast<size_t>(Q.cols()) != moments.size())
    throw std::invalid_argument("need one moment set per overlap column");
  if (sign != 1 && sign != -1) throw std::invalid_argument("sign must be +1 or -1");
  return detail::eval_cumulant_cubic(Q, moments, sign, residual_scale(Q, feas_tol));
}

namespace detail {

// Hand-expanded two-component score variance <gamma_i^2> for f = +-x^3,
// written as a polynomial in the overlap row (a, b).
inline double score_var_p2(double a, double b, const MomentSet& m1, const MomentSet& m2) {
  const double a2 = a * a, b2 = b * b;
  const double res = 1.0 - a2 - b2;
  return a2 * a2 * a2 * m1.m6 + b2 * b2 * b2 * m2.m6 + 15.0 * res * res * res +
         15.0 * b2 * b2 * (1.0 - b2) * m2.m4 + 15.0 * a2 * a2 * (1.0 - a2) * m1.m4 +
         45.0 * res * res * (a2 + b2) + 90.0 * a2 * b2 * res +
         20.0 * (a2 * a) * (b2 * b) * m1.m3 * m2.m3;
}

// Hand-expanded cross moment <gamma_1 gamma_2> for two rows, f = +-x^3.
inline double score_cross_p2(const Eigen::MatrixXd& Q, const MomentSet& m1,
                             const MomentSet& m2) {
  const double A = Q(0, 0), B = Q(0, 1), X = Q(1, 0), Y = Q(1, 1);
  const double res1 = 1.0 - A * A - B * B;
  const double res2 = 1.0 - X * X - Y * Y;
  const double X3 = X * X * X, Y3 = Y * Y * Y, A3 = A * A * A, B3 = B * B * B;
  return A3 * (X3 * m1.m6 + Y3 * m1.m3 * m2.m3 + 3.0 * (1.0 - X * X) * X * m1.m4) +
         B3 * (Y3 * m2.m6 + X3 * m1.m3 * m2.m3 + 3.0 * (1.0 - Y * Y) * Y * m2.m4) +
         3.0 * A * A * B *
             (Y3 * m2.m4 + 3.0 * X * X * Y * m1.m4 + 3.0 * Y * Y * X * m1.m3 * m2.m3 +
              3.0 * res2 * Y) +
         3.0 * B * B * A *
             (X3 * m1.m4 + 3.0 * Y * Y * X * m2.m4 + 3.0 * X * X * Y * m1.m3 * m2.m3 +
              3.0 * res2 * X) +
         3.0 * A * res1 * (X3 * m1.m4 + 3.0 * (1.0 - X * X) * X) +
         3.0 * B * res1 * (Y3 * m2.m4 + 3.0 * (1.0 - Y * Y) * Y);
}

}  // namespace detail

// Two-component cubic coefficients from the explicit degree-six polynomials.
// Independent of the cumulant route above; the two must agree and tests hold
// them to that.
inline MeanFieldCoeffs closed_form_cubic(const Eigen::MatrixXd& Q,
                                         const std::array<MomentSet, 2>& m, int sign,
                                         double feas_tol = 1e-9) {
  if (Q.rows() != 2 || Q.cols() != 2)
    throw std::invalid_argument("closed form unavailable for p != 2");
  if (sign != 1 && sign != -1) throw std::invalid_argument("sign must be +1 or -1");
  MeanFieldCoeffs out;
  out.scale = residual_scale(Q, feas_tol);
  out.C.resize(2, 2);
  out.C(0, 0) = detail::score_var_p2(Q(0, 0), Q(0, 1), m[0], m[1]);
  out.C(1, 1) = detail::score_var_p2(Q(1, 0), Q(1, 1), m[0], m[1]);
  out.C(0, 1) = out.C(1, 0) = detail::score_cross_p2(Q, m[0], m[1]);
  out.Psi.resize(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      const double q = Q(i, j);
      out.Psi(j, i) = sign * q * q * q * m[j].kappa4();
    }
  out.M = Q * out.Psi;
  out.fmean.resize(2);
  out.fprime_mean.resize(2);
  for (int i = 0; i < 2; ++i) {
    const double vi = Q.row(i).squaredNorm() + out.scale.s(i) * out.scale.s(i);
    out.fmean(i) =
        sign * (Q(i, 0) * Q(i, 0) * Q(i, 0) * m[0].m3 + Q(i, 1) * Q(i, 1) * Q(i, 1) * m[1].m3);
    out.fprime_mean(i) = sign * 3.0 * vi;
  }
  out.Psi_se = Eigen::MatrixXd::Zero(2, 2);
  out.C_se = Eigen::MatrixXd::Zero(2, 2);
  return out;
}

struct DriftDiffusion {
  Eigen::VectorXd omega;
  Eigen::MatrixXd Lambda;
};

// Frozen-coefficient drift and diffusion of one particle:
//   omega = -(tau^2/2) T(C) x - tau T(M) x + tau T(R) x + tau Psi^T u - tau phi(x)
//   Lambda = tau^2 C
inline DriftDiffusion drift_diffusion(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                      const MeanFieldCoeffs& co,
                                      const std::optional<Eigen::MatrixXd>& R, double tau,
                                      const Regularizer& phi) {
  if (phi.active() && !R.has_value())
    throw std::invalid_argument("penalized drift requires the penalty overlap R");
  Eigen::MatrixXd A = -(tau * tau / 2.0) * tril_mix(co.C) - tau * tril_mix(co.M);
  if (R.has_value()) A += tau * tril_mix(*R);
  DriftDiffusion dd;
  dd.omega = A * x + tau * co.Psi.transpose() * u;
  if (phi.active())
    dd.omega -= tau * x.unaryExpr([&phi](double v) { return phi.eval(v); });
  dd.Lambda = tau * tau * co.C;
  return dd;
}

}  // namespace icadyn
