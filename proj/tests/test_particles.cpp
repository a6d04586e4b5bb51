#include "test_util.hpp"

#include <algorithm>

#include "icadyn/particles.hpp"
#include "icadyn/ode.hpp"
#include "icadyn/world.hpp"

using namespace icadyn;
using testutil::max_abs_diff;

namespace {

std::vector<SourceSpec> sign_and_uniform() {
  return {SourceSpec::beta_mixture(1.0), SourceSpec::beta_mixture(0.0)};
}

// Deposits a round bump of the given height at (ci, cj), sigma in cells.
void add_bump(Eigen::MatrixXd& mass, int ci, int cj, double sigma, double height) {
  for (int i = 0; i < mass.rows(); ++i)
    for (int j = 0; j < mass.cols(); ++j) {
      const double d2 = (i - ci) * (i - ci) + (j - cj) * (j - cj);
      mass(i, j) += height * std::exp(-d2 / (2.0 * sigma * sigma));
    }
}

}  // namespace

TEST_CASE("sparse receptive fields have disjoint supports and unit power") {
  const long N = 20000;
  const std::vector<double> rho = {0.5, 0.3};
  Rng rng = make_stream(71, 0);
  ParticleCloud cloud = init_cloud_sparse(N, rho, Eigen::MatrixXd::Zero(2, 2), rng);
  REQUIRE(cloud.N() == N);
  REQUIRE(cloud.p() == 2);

  long overlap_count = 0;
  for (long k = 0; k < N; ++k) {
    int live = 0;
    for (int j = 0; j < 2; ++j) {
      const double u = cloud.us(k, j);
      if (u != 0.0) {
        ++live;
        REQUIRE(u == 1.0 / std::sqrt(rho[static_cast<size_t>(j)]));
      }
    }
    if (live > 1) ++overlap_count;
  }
  CHECK(overlap_count == 0);

  // E[u_j^2] = 1 by construction; check within binomial error.
  for (int j = 0; j < 2; ++j) {
    const double second = cloud.us.col(j).squaredNorm() / static_cast<double>(N);
    const double se = std::sqrt((1.0 / rho[static_cast<size_t>(j)] - 1.0) / N);
    CHECK(std::abs(second - 1.0) <= 3.0 * se);
  }

  // With Q0 = 0 the coordinates are independent of the fields.
  CHECK(max_abs_diff(empirical_overlap(cloud), Eigen::MatrixXd::Zero(2, 2)) <=
        4.0 / std::sqrt(static_cast<double>(N)));
}

TEST_CASE("impossible occupancies are refused") {
  Rng rng = make_stream(71, 1);
  CHECK_THROWS_WITH(init_cloud_sparse(100, {0.5, 1.5}, Eigen::MatrixXd::Zero(2, 2), rng),
                    Catch::Matchers::ContainsSubstring("occupancy"));
  CHECK_THROWS_WITH(init_cloud_sparse(100, {0.7, 0.6}, Eigen::MatrixXd::Zero(2, 2), rng),
                    Catch::Matchers::ContainsSubstring("impossible"));
  CHECK_THROWS_WITH(init_cloud_sparse(100, {0.5, 0.3}, Eigen::MatrixXd::Zero(3, 3), rng),
                    Catch::Matchers::ContainsSubstring("p x p"));
}

TEST_CASE("lifting a concrete estimate reproduces its overlap exactly") {
  Rng rng = make_stream(73, 0);
  ComponentBasis basis = build_basis(80, 2, BasisConstruction::Haar, rng);
  Eigen::MatrixXd Q0(2, 2);
  Q0 << 0.25, 0.35, 0.10, -0.40;
  InitResult init = init_estimates(basis, Q0, rng);
  ParticleCloud cloud = lift_state(init.state, basis);
  Eigen::MatrixXd direct = init.state.X * basis.U / 80.0;
  CHECK(max_abs_diff(empirical_overlap(cloud), direct) <= 1e-14);

  Rng rng2 = make_stream(73, 1);
  ComponentBasis other = build_basis(60, 2, BasisConstruction::Haar, rng2);
  CHECK_THROWS_WITH(lift_state(init.state, other),
                    Catch::Matchers::ContainsSubstring("disagree on n"));
}

TEST_CASE("initial coordinates follow the two-group normal mixture") {
  const long N = 40000;
  Rng rng = make_stream(79, 0);
  Eigen::MatrixXd Q0 = Eigen::Vector2d(0.6, 0.6).asDiagonal();
  ParticleCloud cloud = init_cloud_sparse(N, {0.5, 0.3}, Q0, rng);

  // Coordinate 0: with probability 0.5 the particle sits on stratum 0 where
  // x = 0.6 / sqrt(0.5) + 0.8 z; anywhere else x = 0.8 z.
  const double shift = 0.6 / std::sqrt(0.5);
  const double s = 0.8;
  std::vector<double> sample(static_cast<size_t>(N));
  for (long k = 0; k < N; ++k) sample[static_cast<size_t>(k)] = cloud.xs(k, 0);
  auto cdf = [&](double x) {
    return 0.5 * normal_cdf((x - shift) / s) + 0.5 * normal_cdf(x / s);
  };
  CHECK(ks_distance(sample, cdf) <= 2.0 / std::sqrt(static_cast<double>(N)));
}

TEST_CASE("a zero rate freezes the cloud") {
  Rng rng = make_stream(83, 0);
  ParticleCloud cloud =
      init_cloud_sparse(3000, {0.5, 0.3}, Eigen::Vector2d(0.3, 0.3).asDiagonal(), rng);
  Eigen::MatrixXd xs_before = cloud.xs;
  CloudOpts opts;
  opts.t_end = 1.0;
  opts.record_every = 10;
  CloudRunResult run = evolve_cloud(cloud, 0.0, Nonlinearity::CubicMinus, Regularizer::none(),
                                    sign_and_uniform(), opts, rng);
  CHECK(max_abs_diff(cloud.xs, xs_before) == 0.0);
  CHECK(run.warnings.empty());
  CHECK(cloud.t == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("step size is bounded for stability") {
  Rng rng = make_stream(83, 1);
  ParticleCloud cloud =
      init_cloud_sparse(100, {0.5, 0.3}, Eigen::MatrixXd::Zero(2, 2), rng);
  CloudOpts opts;
  opts.dt = 0.2;
  CHECK_THROWS_WITH(evolve_cloud(cloud, 0.01, Nonlinearity::CubicMinus, Regularizer::none(),
                                 sign_and_uniform(), opts, rng),
                    Catch::Matchers::ContainsSubstring("(0, 0.1]"));
}

TEST_CASE("short-time cloud motion matches the mean-field drift") {
  const long N = 100000;
  Rng rng = make_stream(89, 0);
  Eigen::MatrixXd Q0 = Eigen::Vector2d(0.3, 0.3).asDiagonal();
  ParticleCloud cloud = init_cloud_sparse(N, {0.5, 0.3}, Q0, rng);
  auto specs = sign_and_uniform();
  const double tau = 0.05;

  Eigen::MatrixXd Q_start = empirical_overlap(cloud);
  CloudOpts opts;
  opts.dt = 0.02;
  opts.t_end = 2.0;
  opts.record_every = 1000000;  // endpoint only
  CloudRunResult run = evolve_cloud(cloud, tau, Nonlinearity::CubicMinus, Regularizer::none(),
                                    specs, opts, rng);
  REQUIRE(run.records.size() == 2);
  Eigen::MatrixXd secant = (run.records.back().Qhat - Q_start) / 2.0;
  Eigen::MatrixXd drift =
      rhs_generic(Q_start, tau, Nonlinearity::CubicMinus, specs, CoeffMethod::closed_form());
  CHECK(max_abs_diff(secant, drift) <= 0.002);
}

TEST_CASE("out-of-band overlaps are reported but not fatal") {
  const long N = 4000;
  Rng rng = make_stream(97, 0);
  ParticleCloud cloud =
      init_cloud_sparse(N, {0.5, 0.3}, Eigen::MatrixXd::Zero(2, 2), rng);
  cloud.xs = 1.07 * cloud.us;  // overlap ~ 1.07 I: over the band, under feas_tol
  CloudOpts opts;
  opts.dt = 0.05;
  opts.t_end = 0.05;
  CloudRunResult run = evolve_cloud(cloud, 0.001, Nonlinearity::CubicMinus, Regularizer::none(),
                                    sign_and_uniform(), opts, rng);
  REQUIRE_FALSE(run.warnings.empty());
  CHECK(run.warnings.front().find("empirical overlap left") != std::string::npos);
}

TEST_CASE("an absolute-value penalty concentrates mass at zero") {
  const long N = 20000;
  Rng seed_rng = make_stream(101, 0);
  Eigen::MatrixXd Q0 = Eigen::Vector2d(0.6, 0.6).asDiagonal();
  ParticleCloud start = init_cloud_sparse(N, {0.5, 0.3}, Q0, seed_rng);
  auto specs = sign_and_uniform();

  CloudOpts opts;
  opts.dt = 0.05;
  opts.t_end = 200.0;
  opts.record_every = 1000000;

  ParticleCloud plain = start;
  Rng r1 = make_stream(101, 1);
  evolve_cloud(plain, 0.01, Nonlinearity::CubicMinus, Regularizer::none(), specs, opts, r1);

  ParticleCloud pinned = start;
  Rng r2 = make_stream(101, 1);
  evolve_cloud(pinned, 0.01, Nonlinearity::CubicMinus, Regularizer::l1(0.1), specs, opts, r2);

  Histogram1D h_plain = histogram1d(plain, 0, 61, -3.0, 3.0);
  Histogram1D h_pinned = histogram1d(pinned, 0, 61, -3.0, 3.0);
  const int center = 30;  // bin containing x = 0
  CHECK(h_pinned.mass(center) > 1.2 * h_plain.mass(center));
}

TEST_CASE("histograms bin correctly and report in-range mass") {
  SECTION("hand-placed particles") {
    ParticleCloud cloud;
    cloud.xs.resize(3, 2);
    cloud.xs << 0.5, 2.5, 1.5, 3.5, -1.0, 0.5;  // third particle out of range on axis 0
    cloud.us = Eigen::MatrixXd::Zero(3, 2);
    Histogram2D h = histogram2d(cloud, 0, 1, 4, 0.0, 4.0);
    CHECK(h.mass(0, 2) == Catch::Approx(1.0 / 3.0));
    CHECK(h.mass(1, 3) == Catch::Approx(1.0 / 3.0));
    CHECK(h.mass.sum() == Catch::Approx(2.0 / 3.0));

    Histogram1D h1 = histogram1d(cloud, 0, 4, 0.0, 4.0);
    CHECK(h1.mass(0) == Catch::Approx(1.0 / 3.0));
    CHECK(h1.mass(1) == Catch::Approx(1.0 / 3.0));
    CHECK(h1.mass.sum() == Catch::Approx(2.0 / 3.0));
    CHECK_THROWS(histogram1d(cloud, 0, 0, 0.0, 1.0));
    CHECK_THROWS(histogram2d(cloud, 0, 1, 4, 1.0, 1.0));
  }

  SECTION("uniform coordinates fill bins evenly") {
    const long N = 50000;
    const int bins = 20;
    Rng rng = make_stream(103, 0);
    ParticleCloud cloud;
    cloud.xs.resize(N, 1);
    for (long k = 0; k < N; ++k) cloud.xs(k, 0) = draw_uniform01(rng);
    cloud.us = Eigen::MatrixXd::Zero(N, 1);
    Histogram1D h = histogram1d(cloud, 0, bins, 0.0, 1.0);
    CHECK(h.mass.sum() == Catch::Approx(1.0).margin(1e-12));
    const double expect = 1.0 / bins;
    const double se = std::sqrt(expect * (1.0 - expect) / static_cast<double>(N));
    for (int b = 0; b < bins; ++b) REQUIRE(std::abs(h.mass(b) - expect) <= 4.0 * se);
  }
}

TEST_CASE("mode counting on synthetic densities") {
  Histogram2D h;
  h.lo = -3.0;
  h.width = 6.0 / 61.0;

  SECTION("three separated bumps") {
    h.mass = Eigen::MatrixXd::Zero(61, 61);
    add_bump(h.mass, 15, 15, 3.0, 1.0);
    add_bump(h.mass, 15, 45, 3.0, 0.8);
    add_bump(h.mass, 45, 30, 3.0, 0.9);
    CHECK(count_modes(h) == 3);
  }

  SECTION("one bump") {
    h.mass = Eigen::MatrixXd::Zero(61, 61);
    add_bump(h.mass, 30, 30, 4.0, 1.0);
    CHECK(count_modes(h) == 1);
  }

  SECTION("a faint fourth bump below the floor is ignored") {
    h.mass = Eigen::MatrixXd::Zero(61, 61);
    add_bump(h.mass, 15, 15, 3.0, 1.0);
    add_bump(h.mass, 45, 45, 3.0, 0.02);  // under the 5% floor
    CHECK(count_modes(h) == 1);
  }

  SECTION("empty mass has no modes") {
    h.mass = Eigen::MatrixXd::Zero(61, 61);
    CHECK(count_modes(h) == 0);
  }
}

TEST_CASE("distribution distance on hand samples") {
  auto uniform_cdf = [](double x) { return std::clamp(x, 0.0, 1.0); };
  std::vector<double> sample = {0.1, 0.3, 0.5, 0.7, 0.9};
  CHECK(ks_distance(sample, uniform_cdf) == Catch::Approx(0.1).margin(1e-15));

  std::vector<double> shuffled = {0.7, 0.1, 0.9, 0.5, 0.3};
  CHECK(ks_distance(shuffled, uniform_cdf) == ks_distance(sample, uniform_cdf));

  CHECK(normal_cdf(0.0) == Catch::Approx(0.5).margin(1e-15));
  CHECK(normal_cdf(1.959963984540054) == Catch::Approx(0.975).margin(1e-9));
}

TEST_CASE("cloud evolution is reproducible from the seed") {
  auto run_once = [] {
    Rng rng = make_stream(107, 0);
    ParticleCloud cloud =
        init_cloud_sparse(2000, {0.5, 0.3}, Eigen::Vector2d(0.3, 0.3).asDiagonal(), rng);
    CloudOpts opts;
    opts.t_end = 1.0;
    opts.record_every = 10;
    evolve_cloud(cloud, 0.05, Nonlinearity::CubicMinus, Regularizer::none(),
                 sign_and_uniform(), opts, rng);
    return cloud.xs;
  };
  Eigen::MatrixXd a = run_once();
  Eigen::MatrixXd b = run_once();
  CHECK(max_abs_diff(a, b) == 0.0);
}
