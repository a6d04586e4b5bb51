#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "icadyn/pipeline.hpp"
#include "test_util.hpp"

using namespace icadyn;
using Catch::Matchers::ContainsSubstring;
using testutil::max_abs_diff;

namespace {

Eigen::MatrixXd empirical_cov(const Eigen::MatrixXd& Y) {
  Eigen::RowVectorXd mu = Y.colwise().mean();
  Eigen::MatrixXd Yc = Y.rowwise() - mu;
  return Yc.transpose() * Yc / static_cast<double>(Y.rows());
}

}  // namespace

TEST_CASE("whitening produces identity covariance", "[pipeline]") {
  SECTION("axis-aligned toy with variances 4 and 1") {
    const double r2 = std::sqrt(2.0);
    Eigen::MatrixXd Y(4, 2);
    Y << 2.0 * r2, 0.0, -2.0 * r2, 0.0, 0.0, r2, 0.0, -r2;
    WhitenResult wh = whiten(Y);
    CHECK(wh.mean.norm() <= 1e-14);
    CHECK(max_abs_diff(empirical_cov(wh.Yw), Eigen::MatrixXd::Identity(2, 2)) <= 1e-12);
    // The high-variance axis is shrunk by exactly half, whatever basis the
    // eigensolver happens to return.
    CHECK((wh.W * Eigen::Vector2d(1.0, 0.0)).norm() == Catch::Approx(0.5).margin(1e-12));
    CHECK((wh.W * Eigen::Vector2d(0.0, 1.0)).norm() == Catch::Approx(1.0).margin(1e-12));
  }

  SECTION("random data, then idempotence on the whitened output") {
    Rng rng = make_stream(501, 0);
    Eigen::MatrixXd Y = gaussian_matrix(rng, 500, 8);
    Y.col(3) *= 2.5;  // anisotropy so the transform is nontrivial
    WhitenResult wh = whiten(Y);
    CHECK(max_abs_diff(empirical_cov(wh.Yw), Eigen::MatrixXd::Identity(8, 8)) <= 1e-10);
    // Whitening already-white data can only rotate: the second map is orthogonal.
    WhitenResult wh2 = whiten(wh.Yw);
    CHECK((wh2.W * wh2.W.transpose() - Eigen::MatrixXd::Identity(8, 8)).norm() <= 1e-8);
  }
}

TEST_CASE("degenerate bands are refused with a pruning hint", "[pipeline]") {
  Rng rng = make_stream(502, 0);
  Eigen::MatrixXd Y = gaussian_matrix(rng, 50, 6);
  Y.col(4) = Y.col(2);
  CHECK_THROWS_WITH(whiten(Y), ContainsSubstring("singular") && ContainsSubstring("prune"));
}

TEST_CASE("component extraction aligns with class centroids", "[pipeline]") {
  const int B = 6;
  const double sqB = std::sqrt(static_cast<double>(B));
  Rng rng = make_stream(503, 0);

  SECTION("exactly orthogonal centroids come back rescaled in place") {
    Eigen::MatrixXd Yw(35, B);
    std::vector<int> labels(35, 0);
    for (int k = 0; k < 35; ++k) {
      Eigen::VectorXd row = Eigen::VectorXd::Zero(B);
      if (k < 20) {
        row(0) = 4.0;
        labels[static_cast<size_t>(k)] = 1;
      } else if (k < 35 - 3) {
        row(1) = -4.0;
        labels[static_cast<size_t>(k)] = 2;
      }
      Yw.row(k) = row;
    }
    ComponentBasis basis = extract_components(Yw, labels, {1, 2});
    REQUIRE(basis.U.rows() == B);
    REQUIRE(basis.U.cols() == 2);
    CHECK(basis.U.col(0).norm() == Catch::Approx(sqB).margin(1e-12));
    CHECK(basis.U.col(1).norm() == Catch::Approx(sqB).margin(1e-12));
    // Sign fixed toward the raw centroid: component 2 points along -e1.
    CHECK(basis.U(0, 0) == Catch::Approx(sqB).margin(1e-12));
    CHECK(basis.U(1, 1) == Catch::Approx(-sqB).margin(1e-12));
  }

  SECTION("noisy centroids stay highly correlated with the raw means") {
    const int N = 300;
    Eigen::MatrixXd Yw(N, B);
    std::vector<int> labels(static_cast<size_t>(N), 0);
    Eigen::VectorXd c1 = Eigen::VectorXd::Zero(B), c2 = Eigen::VectorXd::Zero(B);
    c1(0) = 3.0;
    c1(2) = 1.0;
    c2(1) = -2.5;
    c2(3) = 0.5;
    for (int k = 0; k < N; ++k) {
      Eigen::VectorXd noise = gaussian_vector(rng, B);
      if (k < 100) {
        Yw.row(k) = (c1 + 0.3 * noise).transpose();
        labels[static_cast<size_t>(k)] = 1;
      } else if (k < 200) {
        Yw.row(k) = (c2 + 0.3 * noise).transpose();
        labels[static_cast<size_t>(k)] = 2;
      } else {
        Yw.row(k) = noise.transpose();
      }
    }
    ComponentBasis basis = extract_components(Yw, labels, {1, 2});
    Eigen::VectorXd m1 = Eigen::VectorXd::Zero(B), m2 = Eigen::VectorXd::Zero(B);
    for (int k = 0; k < 100; ++k) m1 += Yw.row(k).transpose();
    for (int k = 100; k < 200; ++k) m2 += Yw.row(k).transpose();
    m1 /= 100.0;
    m2 /= 100.0;
    const double cos1 = basis.U.col(0).dot(m1) / (sqB * m1.norm());
    const double cos2 = basis.U.col(1).dot(m2) / (sqB * m2.norm());
    CHECK(cos1 >= 0.99);
    CHECK(cos2 >= 0.7);  // second column is re-orthogonalized against the first
  }

  SECTION("an absent class is reported by id") {
    Eigen::MatrixXd Yw = gaussian_matrix(rng, 40, B);
    std::vector<int> labels(40, 1);
    CHECK_THROWS_WITH(extract_components(Yw, labels, {1, 5}),
                      ContainsSubstring("class 5") && ContainsSubstring("has no samples"));
  }

  SECTION("coincident centroids are a rank failure") {
    Eigen::MatrixXd Yw(20, B);
    std::vector<int> labels(20, 1);
    for (int k = 0; k < 20; ++k) {
      Yw.row(k).setZero();
      Yw(k, 0) = 4.0;
      if (k >= 10) labels[static_cast<size_t>(k)] = 2;
    }
    CHECK_THROWS_WITH(extract_components(Yw, labels, {1, 2}), ContainsSubstring("rank deficient"));
  }
}

TEST_CASE("the synthetic stand-in has the requested layout", "[pipeline]") {
  Rng rng = make_stream(504, 0);
  LabeledMatrix data = synthetic_standin(2400, 200, 300, 260, rng);
  REQUIRE(data.N() == 2400);
  REQUIRE(data.B() == 200);
  REQUIRE(data.labels.size() == 2400);
  CHECK(std::count(data.labels.begin(), data.labels.end(), 1) == 300);
  CHECK(std::count(data.labels.begin(), data.labels.end(), 2) == 260);
  CHECK(std::count(data.labels.begin(), data.labels.end(), 0) == 1840);
  CHECK(data.labels.front() == 1);
  CHECK(data.labels[300] == 2);
  CHECK(data.labels.back() == 0);

  WhitenResult wh = whiten(data.Y);
  const double frob =
      (empirical_cov(wh.Yw) - Eigen::MatrixXd::Identity(200, 200)).norm();
  CHECK(frob <= 1e-8);

  Rng rng2 = make_stream(504, 1);
  CHECK_THROWS_AS(synthetic_standin(100, 20, 60, 50, rng2), std::invalid_argument);
  CHECK_THROWS_WITH(synthetic_standin(100, 20, 60, 50, rng2),
                    ContainsSubstring("class sizes exceed N"));
}

TEST_CASE("greedy matching assigns rows to distinct components", "[pipeline]") {
  SECTION("hand cases") {
    Eigen::MatrixXd Q(2, 2);
    Q << 0.1, 0.9, 0.8, 0.2;
    std::vector<int> a = greedy_match(Q);
    CHECK(a == std::vector<int>{1, 0});

    Q << 0.9, 0.85, 0.8, 0.2;  // row 1 is forced onto the leftover column
    a = greedy_match(Q);
    CHECK(a == std::vector<int>{0, 1});

    Q << -0.95, 0.1, 0.3, -0.6;  // magnitudes decide, not signs
    a = greedy_match(Q);
    CHECK(a == std::vector<int>{0, 1});
  }

  SECTION("row permutation permutes the assignment") {
    Rng rng = make_stream(505, 0);
    for (int trial = 0; trial < 20; ++trial) {
      Eigen::MatrixXd Q = testutil::random_feasible_overlap(rng, 3, 3);
      std::vector<int> a = greedy_match(Q);
      Eigen::MatrixXd Qp(3, 3);
      Qp.row(0) = Q.row(1);
      Qp.row(1) = Q.row(2);
      Qp.row(2) = Q.row(0);
      std::vector<int> ap = greedy_match(Qp);
      CHECK(ap[0] == a[1]);
      CHECK(ap[1] == a[2]);
      CHECK(ap[2] == a[0]);
      std::vector<int> sorted = a;
      std::sort(sorted.begin(), sorted.end());
      CHECK(sorted == std::vector<int>{0, 1, 2});
    }
  }
}

TEST_CASE("activation overlap scores against labeled masks", "[pipeline]") {
  std::vector<int> labels{1, 1, 0, 0};
  Eigen::VectorXd act(4);
  act << 5.0, 4.0, 0.1, 0.05;
  CHECK(activation_iou(act, labels, 1) == 1.0);

  act << 5.0, 0.1, -4.0, 0.05;  // one of the top-2 magnitudes is off-mask
  CHECK(activation_iou(act, labels, 1) == Catch::Approx(1.0 / 3.0).margin(1e-15));

  CHECK(activation_iou(act, labels, 7) == 0.0);
}

TEST_CASE("the experiment smoke run is deterministic and grid aligned", "[pipeline]") {
  Rng rng = make_stream(506, 0);
  LabeledMatrix data = synthetic_standin(800, 60, 120, 100, rng);

  RealExperimentConfig cfg;
  cfg.class_ids = {1, 2};
  cfg.specs = {SourceSpec::beta_mixture(1.0), SourceSpec::beta_mixture(0.6)};
  cfg.tau = 0.01;
  cfg.Q0 = 0.3 * Eigen::MatrixXd::Identity(2, 2);
  cfg.replicas = 2;
  cfg.horizon = 30.0;
  cfg.seed = 7;

  RealExperimentResult res = run_real_experiment(data, cfg);
  RealExperimentResult res2 = run_real_experiment(data, cfg);

  REQUIRE(res.basis.U.rows() == 60);
  REQUIRE(res.basis.U.cols() == 2);
  CHECK(max_abs_diff(res.realized_Q0, cfg.Q0) <= 1e-9);

  // steps = 30 * 60 = 1800 with a record every step (60 / 50 == 1).
  REQUIRE(res.replicas.size() == 2);
  REQUIRE(res.replicas[0].points.size() == 1801);
  REQUIRE(res.ode.ts.size() == 1801);
  for (size_t k = 0; k < res.ode.ts.size(); k += 180) {
    CHECK(res.ode.ts[k] ==
          Catch::Approx(res.replicas[0].points[k].t).margin(1e-9));
  }
  CHECK(max_abs_diff(res.ode.Qs.front(), res.realized_Q0) <= 1e-14);
  // Each replica draws its own start, but all realize the same target overlap.
  CHECK(max_abs_diff(res.replicas[1].points.front().Q, cfg.Q0) <= 1e-9);

  REQUIRE(res.activations.rows() == 800);
  REQUIRE(res.activations.cols() == 2);
  REQUIRE(res.matched_component.size() == 2);
  std::vector<int> matched = res.matched_component;
  std::sort(matched.begin(), matched.end());
  CHECK(matched == std::vector<int>{0, 1});
  for (double s : res.matched_sign) CHECK(std::abs(s) == 1.0);

  CHECK(max_abs_diff(res2.realized_Q0, res.realized_Q0) == 0.0);
  CHECK(max_abs_diff(res2.activations, res.activations) == 0.0);
  CHECK(max_abs_diff(res2.replicas[0].points.back().Q, res.replicas[0].points.back().Q) == 0.0);
}

TEST_CASE("learned activations recover the planted classes", "[pipeline][slow]") {
  Rng rng = make_stream(99, 0);
  LabeledMatrix data = synthetic_standin(2400, 200, 300, 260, rng);

  RealExperimentConfig cfg;
  cfg.class_ids = {1, 2};
  cfg.specs = {SourceSpec::beta_mixture(1.0), SourceSpec::beta_mixture(0.6)};
  cfg.tau = 0.01;
  cfg.Q0 = 0.6 * Eigen::MatrixXd::Identity(2, 2);
  cfg.replicas = 1;
  cfg.horizon = 400.0;
  cfg.seed = 5;

  RealExperimentResult res = run_real_experiment(data, cfg);
  const Eigen::MatrixXd Qfin = res.replicas.front().points.back().Q;

  for (int j = 0; j < 2; ++j) {
    int row = -1;
    for (int r = 0; r < 2; ++r)
      if (res.matched_component[static_cast<size_t>(r)] == j) row = r;
    REQUIRE(row >= 0);
    // Both sources are learnable here and the start is past the unstable
    // root, so the matched overlaps should be large by t = 400.
    CHECK(std::abs(Qfin(row, j)) >= 0.8);
    const double iou = activation_iou(res.activations.col(row), data.labels, cfg.class_ids[static_cast<size_t>(j)]);
    INFO("class " << cfg.class_ids[static_cast<size_t>(j)] << " iou " << iou);
    CHECK(iou >= 0.3);
  }
}
