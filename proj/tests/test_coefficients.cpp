#include "test_util.hpp"

#include "icadyn/coefficients.hpp"
#include "icadyn/quadrature.hpp"

using namespace icadyn;
using testutil::max_abs_diff;
using testutil::random_feasible_overlap;

namespace {

Eigen::MatrixXd fixture_overlap() {
  Eigen::MatrixXd Q(2, 2);
  Q << 0.25, 0.35, 0.10, -0.40;
  return Q;
}

std::vector<SourceSpec> fixture_specs() {
  return {SourceSpec::beta_mixture(0.2), SourceSpec::beta_mixture(1.0)};
}

}  // namespace

TEST_CASE("pairwise mixing operator on a hand case") {
  Eigen::MatrixXd A(2, 2);
  A << 1.0, 2.0, 3.0, 4.0;
  Eigen::MatrixXd T = tril_mix(A);
  Eigen::MatrixXd expect(2, 2);
  expect << 1.0, 0.0, 5.0, 4.0;
  CHECK(max_abs_diff(T, expect) == 0.0);

  // Row l of T(A) x counts each unordered pair once.
  Eigen::Vector2d x(0.7, -1.3);
  Eigen::Vector2d tx = T * x;
  CHECK(tx(0) == A(0, 0) * x(0));
  CHECK(tx(1) == A(1, 1) * x(1) + (A(1, 0) + A(0, 1)) * x(0));
}

TEST_CASE("residual scales and feasibility clamping") {
  Eigen::MatrixXd Q = fixture_overlap();
  ResidualScale rs = residual_scale(Q);
  CHECK_FALSE(rs.clamped);
  CHECK(rs.s(0) == Catch::Approx(0.9027735042633894).epsilon(1e-14));
  CHECK(rs.s(1) == Catch::Approx(0.9110433579144299).epsilon(1e-14));

  Eigen::MatrixXd edge(1, 1);
  edge << std::sqrt(1.0 + 5e-10);
  ResidualScale clamped = residual_scale(edge);
  CHECK(clamped.clamped);
  CHECK(clamped.s(0) == 0.0);

  Eigen::MatrixXd bad(1, 1);
  bad << std::sqrt(1.0 + 1e-8);
  CHECK_THROWS_WITH(residual_scale(bad), Catch::Matchers::ContainsSubstring("row 0"));
}

TEST_CASE("decoupled rows yield the one-dimensional averages") {
  SECTION("zero overlap") {
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(2, 2);
    for (auto f : {Nonlinearity::CubicMinus, Nonlinearity::CubicPlus}) {
      MeanFieldCoeffs co = eval_coeffs(Q, fixture_specs(), f, CoeffMethod::closed_form());
      CAPTURE(to_string(f));
      CHECK(max_abs_diff(co.Psi, Eigen::MatrixXd::Zero(2, 2)) == 0.0);
      CHECK(max_abs_diff(co.M, Eigen::MatrixXd::Zero(2, 2)) == 0.0);
      CHECK(max_abs_diff(co.C, 15.0 * Eigen::MatrixXd::Identity(2, 2)) <= 1e-14);
      const double expect_slope = f == Nonlinearity::CubicMinus ? -3.0 : 3.0;
      CHECK(co.fprime_mean(0) == expect_slope);
      CHECK(co.fprime_mean(1) == expect_slope);
    }
  }

  SECTION("diagonal overlap picks up one excess-kurtosis term per row") {
    Eigen::MatrixXd Q = Eigen::Vector2d(0.3, -0.5).asDiagonal();
    std::vector<SourceSpec> specs = {SourceSpec::beta_mixture(0.2),
                                     SourceSpec::beta_mixture(0.6)};
    MeanFieldCoeffs co =
        eval_coeffs(Q, specs, Nonlinearity::CubicMinus, CoeffMethod::closed_form());
    const double k4_a = specs[0].moments().kappa4();
    const double k4_b = specs[1].moments().kappa4();
    CHECK(co.Psi(0, 0) == Catch::Approx(-0.027 * k4_a).epsilon(1e-13));
    CHECK(co.Psi(1, 1) == Catch::Approx(0.125 * k4_b).epsilon(1e-13));
    CHECK(co.Psi(0, 1) == 0.0);
    CHECK(co.Psi(1, 0) == 0.0);
  }

  SECTION("sources with no excess kurtosis produce no pull") {
    std::vector<MomentSet> gauss = {MomentSet{0.0, 3.0, 15.0}, MomentSet{0.0, 3.0, 15.0}};
    MeanFieldCoeffs co = eval_coeffs_cubic(Eigen::MatrixXd::Identity(2, 2), gauss, -1);
    CHECK(max_abs_diff(co.Psi, Eigen::MatrixXd::Zero(2, 2)) == 0.0);
    CHECK(max_abs_diff(co.C, 15.0 * Eigen::MatrixXd::Identity(2, 2)) <= 1e-12);
  }
}

TEST_CASE("cubic averages on a frozen 2x2 state") {
  Eigen::MatrixXd Q = fixture_overlap();
  auto specs = fixture_specs();

  Eigen::MatrixXd Psi_expect(2, 2), C_expect(2, 2), M_expect(2, 2);
  Psi_expect << 0.01733, 0.00110912, 0.08575, -0.128;
  C_expect << 14.51571864285716, -0.8153758188571426,
      -0.8153758188571426, 14.295878387785153;
  M_expect << 0.034345, -0.04452272, -0.032567, 0.05131091200000001;

  auto check_all = [&](const MeanFieldCoeffs& co, double tol) {
    CHECK(max_abs_diff(co.Psi, Psi_expect) <= tol);
    CHECK(max_abs_diff(co.C, C_expect) <= tol * 20.0);
    CHECK(max_abs_diff(co.M, M_expect) <= tol);
    CHECK(co.fmean.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(std::abs(co.fprime_mean(0) + 3.0) <= tol);
    CHECK(std::abs(co.fprime_mean(1) + 3.0) <= tol);
  };

  SECTION("closed form") {
    MeanFieldCoeffs co =
        eval_coeffs(Q, specs, Nonlinearity::CubicMinus, CoeffMethod::closed_form());
    check_all(co, 1e-9);
    CHECK(max_abs_diff(co.Psi_se, Eigen::MatrixXd::Zero(2, 2)) == 0.0);
    CHECK(max_abs_diff(co.C_se, Eigen::MatrixXd::Zero(2, 2)) == 0.0);
  }

  SECTION("moments-only entry point") {
    std::vector<MomentSet> moments = {specs[0].moments(), specs[1].moments()};
    MeanFieldCoeffs co = eval_coeffs_cubic(Q, moments, -1);
    check_all(co, 1e-9);
  }

  SECTION("tensor quadrature") {
    MeanFieldCoeffs co =
        eval_coeffs(Q, specs, Nonlinearity::CubicMinus, CoeffMethod::quadrature(64));
    check_all(co, 1e-9);
  }

  SECTION("sampling route lands within its own error bars") {
    MeanFieldCoeffs co = eval_coeffs(Q, specs, Nonlinearity::CubicMinus,
                                     CoeffMethod::monte_carlo(2000000, 123));
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        REQUIRE(co.Psi_se(a, b) > 0.0);
        REQUIRE(co.C_se(a, b) >= 0.0);
        CHECK(std::abs(co.Psi(a, b) - Psi_expect(a, b)) <= 5.0 * co.Psi_se(a, b));
        CHECK(std::abs(co.C(a, b) - C_expect(a, b)) <= 5.0 * std::max(co.C_se(a, b), 1e-6));
      }
  }
}

TEST_CASE("closed form and quadrature agree on random feasible states") {
  const double betas[] = {0.0, 0.2, 0.6, 0.95, 1.0};
  Rng rng = make_stream(53, 0);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::MatrixXd Q = random_feasible_overlap(rng, 2, 2);
    std::vector<SourceSpec> specs = {
        SourceSpec::beta_mixture(betas[trial % 5]),
        SourceSpec::beta_mixture(betas[(trial + 2) % 5])};
    for (auto f : {Nonlinearity::CubicMinus, Nonlinearity::CubicPlus}) {
      MeanFieldCoeffs a = eval_coeffs(Q, specs, f, CoeffMethod::closed_form());
      MeanFieldCoeffs b = eval_coeffs(Q, specs, f, CoeffMethod::quadrature(64));
      const double tol = 1e-10 * std::max(1.0, b.C.cwiseAbs().maxCoeff());
      REQUIRE(max_abs_diff(a.Psi, b.Psi) <= tol);
      REQUIRE(max_abs_diff(a.M, b.M) <= tol);
      REQUIRE(max_abs_diff(a.C, b.C) <= tol);
      REQUIRE(max_abs_diff(a.fmean, b.fmean) <= tol);
      REQUIRE(max_abs_diff(a.fprime_mean, b.fprime_mean) <= tol);

      // Score covariance must stay positive semidefinite.
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a.C);
      REQUIRE(es.eigenvalues().minCoeff() >= -1e-10);
      ++checked;
    }
  }
  CHECK(checked == 200);
}

TEST_CASE("symmetries of the averages") {
  Eigen::MatrixXd Q = fixture_overlap();
  auto specs = fixture_specs();
  MeanFieldCoeffs minus =
      eval_coeffs(Q, specs, Nonlinearity::CubicMinus, CoeffMethod::closed_form());
  MeanFieldCoeffs plus =
      eval_coeffs(Q, specs, Nonlinearity::CubicPlus, CoeffMethod::closed_form());
  // Flipping the sign of f flips first-order averages; quadratic ones cancel.
  CHECK(max_abs_diff(minus.Psi, Eigen::MatrixXd(-plus.Psi)) <= 1e-14);
  CHECK(max_abs_diff(minus.M, Eigen::MatrixXd(-plus.M)) <= 1e-14);
  CHECK(max_abs_diff(minus.C, plus.C) <= 1e-14);
  CHECK(max_abs_diff(minus.fprime_mean, Eigen::VectorXd(-plus.fprime_mean)) <= 1e-14);

  // Negating the overlap negates the pull but not the covariance (odd f).
  MeanFieldCoeffs neg =
      eval_coeffs(Eigen::MatrixXd(-Q), specs, Nonlinearity::CubicMinus, CoeffMethod::closed_form());
  CHECK(max_abs_diff(neg.Psi, Eigen::MatrixXd(-minus.Psi)) <= 1e-14);
  CHECK(max_abs_diff(neg.C, minus.C) <= 1e-13);
  CHECK(max_abs_diff(neg.M, minus.M) <= 1e-14);
}

TEST_CASE("shape and method guards") {
  Eigen::MatrixXd Q = fixture_overlap();
  CHECK_THROWS_WITH(
      eval_coeffs(Q, {SourceSpec::beta_mixture(1.0)}, Nonlinearity::CubicMinus,
                  CoeffMethod::closed_form()),
      Catch::Matchers::ContainsSubstring("one source spec per overlap column"));
  CHECK_THROWS_WITH(
      eval_coeffs(Q, fixture_specs(), Nonlinearity::Tanh, CoeffMethod::closed_form()),
      Catch::Matchers::ContainsSubstring("not cubic"));
  CHECK_THROWS_AS(eval_coeffs_cubic(Q, {MomentSet{}, MomentSet{}}, 2), std::invalid_argument);
}

TEST_CASE("saturating score averages on the frozen state") {
  Eigen::MatrixXd Q = fixture_overlap();
  auto specs = fixture_specs();
  Eigen::MatrixXd Psi_expect(2, 2), C_expect(2, 2);
  Psi_expect << 1.0745574752516474e-03, 6.6458151021187017e-05,
      5.7090549276152536e-03, -8.7978304700870591e-03;
  C_expect << 0.3953761454344972, -0.0452175289256417,
      -0.04521752892564168, 0.39598747981464244;

  MeanFieldCoeffs co = eval_coeffs(Q, specs, Nonlinearity::Tanh, CoeffMethod::quadrature(64));
  CHECK(max_abs_diff(co.Psi, Psi_expect) <= 1e-7);
  CHECK(max_abs_diff(co.C, C_expect) <= 1e-7);
  CHECK(co.fprime_mean(0) == Catch::Approx(0.6046238545655029).margin(1e-7));
  CHECK(co.fprime_mean(1) == Catch::Approx(0.6040125201853578).margin(1e-7));

  // Node refinement has converged: 32 against 64 nodes. The integrand is
  // smooth but not polynomial, so convergence plateaus near 1e-7 here.
  MeanFieldCoeffs co32 = eval_coeffs(Q, specs, Nonlinearity::Tanh, CoeffMethod::quadrature(32));
  CHECK(max_abs_diff(co32.Psi, co.Psi) <= 1e-6);
  CHECK(max_abs_diff(co32.C, co.C) <= 1e-6);

  MeanFieldCoeffs mc = eval_coeffs(Q, specs, Nonlinearity::Tanh,
                                   CoeffMethod::monte_carlo(2000000, 7));
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      CHECK(std::abs(mc.Psi(a, b) - co.Psi(a, b)) <= 5.0 * std::max(mc.Psi_se(a, b), 1e-8));
}

TEST_CASE("per-coordinate quadrature rules are exact for the stated moments") {
  SECTION("sign source") {
    QuadratureRule r = source_rule(SourceSpec::rademacher(), 8);
    REQUIRE(r.nodes.size() == 2);
    CHECK(r.weights.sum() == Catch::Approx(1.0).margin(1e-15));
    CHECK(r.nodes.cwiseAbs().maxCoeff() == 1.0);
  }

  SECTION("uniform and mixture sources") {
    for (double beta : {0.0, 0.6}) {
      SourceSpec spec = SourceSpec::beta_mixture(beta);
      MomentSet m = spec.moments();
      QuadratureRule r = source_rule(spec, 8);
      CAPTURE(beta);
      CHECK(std::abs(r.weights.sum() - 1.0) <= 1e-12);
      CHECK(std::abs(r.weights.dot(r.nodes.array().square().matrix()) - 1.0) <= 1e-12);
      CHECK(std::abs(r.weights.dot(r.nodes.array().pow(4).matrix()) - m.m4) <= 1e-12);
      CHECK(std::abs(r.weights.dot(r.nodes.array().pow(6).matrix()) - m.m6) <= 1e-12);
    }
  }

  SECTION("custom sources have no rule") {
    CHECK_THROWS(source_rule(SourceSpec::custom("mystery"), 8));
  }
}

TEST_CASE("particle drift assembles the frozen-coefficient pieces") {
  Eigen::MatrixXd Q = fixture_overlap();
  auto specs = fixture_specs();
  MeanFieldCoeffs co =
      eval_coeffs(Q, specs, Nonlinearity::CubicMinus, CoeffMethod::closed_form());
  const double tau = 0.05;

  SECTION("origin with no receptive field feels nothing") {
    DriftDiffusion dd = drift_diffusion(Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(), co,
                                        std::nullopt, tau, Regularizer::none());
    CHECK(dd.omega.cwiseAbs().maxCoeff() == 0.0);
    CHECK(max_abs_diff(dd.Lambda, Eigen::MatrixXd(tau * tau * co.C)) == 0.0);
  }

  SECTION("two-coordinate drift matches a scalar summation") {
    Eigen::Vector2d x(0.8, -1.1), u(1.4, 0.3);
    DriftDiffusion dd =
        drift_diffusion(x, u, co, std::nullopt, tau, Regularizer::none());
    for (int l = 0; l < 2; ++l) {
      double tc = co.C(l, l) * x(l);
      double tm = co.M(l, l) * x(l);
      for (int i = 0; i < l; ++i) {
        tc += (co.C(l, i) + co.C(i, l)) * x(i);
        tm += (co.M(l, i) + co.M(i, l)) * x(i);
      }
      double psi_u = 0.0;
      for (int j = 0; j < 2; ++j) psi_u += co.Psi(j, l) * u(j);
      const double expect = -(tau * tau / 2.0) * tc - tau * tm + tau * psi_u;
      REQUIRE(dd.omega(l) == Catch::Approx(expect).margin(1e-14));
    }
  }

  SECTION("penalty requires its overlap and subtracts pointwise") {
    Eigen::Vector2d x(0.8, -1.1), u(1.4, 0.3);
    Regularizer phi = Regularizer::l1(0.1);
    CHECK_THROWS_AS(drift_diffusion(x, u, co, std::nullopt, tau, phi), std::invalid_argument);

    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(2, 2);
    DriftDiffusion plain = drift_diffusion(x, u, co, R, tau, Regularizer::none());
    DriftDiffusion pen = drift_diffusion(x, u, co, R, tau, phi);
    for (int l = 0; l < 2; ++l)
      CHECK(pen.omega(l) == Catch::Approx(plain.omega(l) - tau * phi.eval(x(l))).margin(1e-15));
  }
}
