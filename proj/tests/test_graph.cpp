#include "hgn/graph.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>

using namespace hgn;

namespace {

Eigen::MatrixXd random_adjacency(std::mt19937_64& rng, Index n) {
  std::bernoulli_distribution edge(0.4);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      if (edge(rng)) a(i, j) = a(j, i) = 1.0;
  a(0, n - 1) = a(n - 1, 0) = 1.0;  // never edgeless
  return a;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Index r, Index c) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

// Monomial coefficients of T_0..T_{K-1}, built from the scalar recurrence.
std::vector<Eigen::VectorXd> chebyshev_coefficients(Index order) {
  std::vector<Eigen::VectorXd> t;
  t.push_back(Eigen::VectorXd::Unit(order, 0));
  if (order > 1) t.push_back(Eigen::VectorXd::Unit(order, 1));
  for (Index k = 2; k < order; ++k) {
    Eigen::VectorXd next = -t[static_cast<std::size_t>(k - 2)];
    for (Index j = 0; j + 1 < order; ++j) next[j + 1] += 2.0 * t[static_cast<std::size_t>(k - 1)][j];
    t.push_back(next);
  }
  return t;
}

// sum_k p_k(L) X theta_k + bias with p_k expanded into dense matrix powers.
Eigen::MatrixXd dense_chebyshev(const Eigen::MatrixXd& lap, const Eigen::MatrixXd& x,
                                const std::vector<Eigen::MatrixXd>& theta,
                                const Eigen::VectorXd& bias) {
  const Index order = static_cast<Index>(theta.size()), n = lap.rows();
  const auto coeffs = chebyshev_coefficients(order);
  std::vector<Eigen::MatrixXd> powers{Eigen::MatrixXd::Identity(n, n)};
  for (Index j = 1; j < order; ++j) powers.push_back(powers.back() * lap);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, theta[0].cols());
  for (Index k = 0; k < order; ++k) {
    Eigen::MatrixXd poly = Eigen::MatrixXd::Zero(n, n);
    for (Index j = 0; j < order; ++j) poly += coeffs[static_cast<std::size_t>(k)][j] * powers[static_cast<std::size_t>(j)];
    out += poly * x * theta[static_cast<std::size_t>(k)];
  }
  out.rowwise() += bias.transpose();
  return out;
}

Tensor leaf_matrix(Tape& tape, const Eigen::MatrixXd& m) {
  RowMatrixXd r = m;
  return tape.leaf({m.rows(), m.cols()}, Eigen::Map<const Eigen::VectorXd>(r.data(), r.size()));
}

Tensor leaf_theta(Tape& tape, const std::vector<Eigen::MatrixXd>& theta) {
  const Index k = static_cast<Index>(theta.size()), in = theta[0].rows(), out = theta[0].cols();
  Eigen::VectorXd v(k * in * out);
  for (Index t = 0; t < k; ++t) {
    RowMatrixXd r = theta[static_cast<std::size_t>(t)];
    v.segment(t * in * out, in * out) = Eigen::Map<const Eigen::VectorXd>(r.data(), r.size());
  }
  return tape.leaf({k, in, out}, v);
}

Eigen::MatrixXd as_matrix(const Tensor& t) { return t.matrix(); }

std::shared_ptr<const SparseMatrixd> sparse(const Eigen::MatrixXd& m) {
  return std::make_shared<const SparseMatrixd>(m.sparseView());
}

}  // namespace

TEST_CASE("build_laplacian") {
  SUBCASE("3-node path") {
    Eigen::Matrix3d a;
    a << 0, 1, 0, 1, 0, 1, 0, 1, 0;
    const auto lap = build_laplacian(a);
    Eigen::Matrix3d expected;
    expected << 1, -1, 0, -1, 2, -1, 0, -1, 1;
    CHECK(lap.laplacian == expected);
    CHECK(lap.lambda_max == doctest::Approx(3.0).epsilon(1e-9));
    CHECK((lap.scaled - ((2.0 / 3.0) * expected - Eigen::Matrix3d::Identity())).cwiseAbs().maxCoeff() <
          1e-8);
  }
  SUBCASE("4-cycle rows sum to zero") {
    const auto lap = build_laplacian(cycle_adjacency({{0, 4}}));
    CHECK(lap.laplacian.rowwise().sum().cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("edgeless adjacency is rejected") {
    CHECK_THROWS_AS(build_laplacian(Eigen::MatrixXd::Zero(3, 3)), std::invalid_argument);
  }
  SUBCASE("templated on the scalar type") {
    Eigen::Matrix<float, 4, 4> a = cycle_adjacency({{0, 4}}).cast<float>();
    const auto lap = build_laplacian(a);
    CHECK(lap.lambda_max == doctest::Approx(4.0f).epsilon(1e-5));
  }
  SUBCASE("power iteration agrees with a dense eigensolver") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 50; ++trial) {
      const Index n = 2 + trial % 11;
      const auto lap = build_laplacian(random_adjacency(rng, n));
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap.laplacian);
      CHECK(lap.lambda_max == doctest::Approx(es.eigenvalues().maxCoeff()).epsilon(1e-6));
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ess(lap.scaled);
      CHECK(ess.eigenvalues().maxCoeff() <= 1.0 + 1e-6);
      CHECK(ess.eigenvalues().minCoeff() >= -1.0 - 1e-6);
    }
  }
}

TEST_CASE("chebyshev_conv") {
  std::mt19937_64 rng(3);
  Tape tape;

  SUBCASE("K=1 with identity theta") {
    const auto lap = build_laplacian(cycle_adjacency({{0, 6}}));
    const Eigen::MatrixXd x = random_matrix(rng, 6, 3);
    Tensor y = chebyshev_conv(leaf_matrix(tape, x), sparse(lap.scaled),
                              leaf_theta(tape, {Eigen::MatrixXd::Identity(3, 3)}),
                              tape.leaf({3}, Eigen::VectorXd::Zero(3)));
    CHECK(as_matrix(y) == x);
  }
  SUBCASE("K=3 explicit polynomial on 8 nodes") {
    const auto lap = build_laplacian(random_adjacency(rng, 8));
    const Eigen::MatrixXd x = random_matrix(rng, 8, 2);
    const std::vector<Eigen::MatrixXd> th{random_matrix(rng, 2, 3), random_matrix(rng, 2, 3),
                                          random_matrix(rng, 2, 3)};
    const Eigen::VectorXd b = random_matrix(rng, 3, 1);
    const Eigen::MatrixXd& l = lap.scaled;
    const Eigen::MatrixXd i8 = Eigen::MatrixXd::Identity(8, 8);
    const Eigen::MatrixXd expected = x * th[0] + l * x * th[1] + (2.0 * l * l - i8) * x * th[2] +
                                     Eigen::MatrixXd::Ones(8, 1) * b.transpose();
    Tensor y = chebyshev_conv(leaf_matrix(tape, x), sparse(l), leaf_theta(tape, th),
                              tape.leaf({3}, b));
    CHECK((as_matrix(y) - expected).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("zero input gives bias rows") {
    const auto lap = build_laplacian(cycle_adjacency({{0, 5}}));
    const Eigen::VectorXd b = random_matrix(rng, 4, 1);
    Tensor y = chebyshev_conv(leaf_matrix(tape, Eigen::MatrixXd::Zero(5, 2)), sparse(lap.scaled),
                              leaf_theta(tape, {random_matrix(rng, 2, 4), random_matrix(rng, 2, 4)}),
                              tape.leaf({4}, b));
    for (Index r = 0; r < 5; ++r) CHECK(as_matrix(y).row(r) == b.transpose());
  }
  SUBCASE("dimension mismatch") {
    const auto lap = build_laplacian(cycle_adjacency({{0, 5}}));
    CHECK_THROWS_AS(chebyshev_conv(leaf_matrix(tape, Eigen::MatrixXd::Zero(4, 2)), sparse(lap.scaled),
                                   leaf_theta(tape, {random_matrix(rng, 2, 2)}),
                                   tape.leaf({2}, Eigen::VectorXd::Zero(2))),
                    std::invalid_argument);
  }
  SUBCASE("linear in X up to the bias") {
    const auto lap = build_laplacian(random_adjacency(rng, 10));
    const std::vector<Eigen::MatrixXd> th{random_matrix(rng, 3, 2), random_matrix(rng, 3, 2),
                                          random_matrix(rng, 3, 2), random_matrix(rng, 3, 2)};
    const Eigen::VectorXd b = random_matrix(rng, 2, 1);
    const Eigen::MatrixXd x = random_matrix(rng, 10, 3), y = random_matrix(rng, 10, 3);
    const double a = 1.7, c = -0.4;
    auto conv = [&](const Eigen::MatrixXd& in) {
      return as_matrix(chebyshev_conv(leaf_matrix(tape, in), sparse(lap.scaled), leaf_theta(tape, th),
                                      tape.leaf({2}, b)));
    };
    const Eigen::MatrixXd bias_rows = Eigen::MatrixXd::Ones(10, 1) * b.transpose();
    const Eigen::MatrixXd lhs = conv(a * x + c * y);
    const Eigen::MatrixXd rhs = a * conv(x) + c * conv(y) + (1.0 - a - c) * bias_rows;
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("dense matrix-polynomial oracle on random small graphs") {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const Index n = 2 + trial % 11, in = 1 + trial % 3, out = 1 + (trial / 3) % 3;
      const Index order = 1 + trial % 6;
      const auto lap = build_laplacian(random_adjacency(rng, n));
      std::vector<Eigen::MatrixXd> th;
      for (Index k = 0; k < order; ++k) th.push_back(random_matrix(rng, in, out));
      const Eigen::VectorXd b = random_matrix(rng, out, 1);
      const Eigen::MatrixXd x = random_matrix(rng, n, in);
      Tensor y = chebyshev_conv(leaf_matrix(tape, x), sparse(lap.scaled), leaf_theta(tape, th),
                                tape.leaf({out}, b));
      worst = std::max(worst, (as_matrix(y) - dense_chebyshev(lap.scaled, x, th, b)).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-9);
  }
  SUBCASE("backward matches the dense adjoint") {
    const auto lap = build_laplacian(random_adjacency(rng, 9));
    const std::vector<Eigen::MatrixXd> th{random_matrix(rng, 2, 2), random_matrix(rng, 2, 2),
                                          random_matrix(rng, 2, 2), random_matrix(rng, 2, 2)};
    const Eigen::MatrixXd x = random_matrix(rng, 9, 2);
    Tensor xt = leaf_matrix(tape, x);
    Tensor y = chebyshev_conv(xt, sparse(lap.scaled), leaf_theta(tape, th),
                              tape.leaf({2}, Eigen::VectorXd::Zero(2)));
    tape.backward(sum(y));
    // d sum(P X Θ) / dX = P^T 1 1^T Θ^T summed over k.
    const auto coeffs = chebyshev_coefficients(4);
    Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(9, 2);
    Eigen::MatrixXd power = Eigen::MatrixXd::Identity(9, 9);
    std::vector<Eigen::MatrixXd> powers;
    for (int j = 0; j < 4; ++j) {
      powers.push_back(power);
      power = power * lap.scaled;
    }
    for (std::size_t k = 0; k < 4; ++k) {
      Eigen::MatrixXd p = Eigen::MatrixXd::Zero(9, 9);
      for (std::size_t j = 0; j < 4; ++j) p += coeffs[k][static_cast<Index>(j)] * powers[j];
      expected += p.transpose() * Eigen::MatrixXd::Ones(9, 2) * th[k].transpose();
    }
    RowMatrixXd g(9, 2);
    Eigen::Map<Eigen::VectorXd>(g.data(), 18) = xt.grad();
    CHECK((Eigen::MatrixXd(g) - expected).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("chest topology") {
  const GraphTopology& topo = chest_topology();
  CHECK(topo.num_nodes() == 120);
  REQUIRE(topo.organs().size() == 3);
  CHECK(topo.organs()[0].size() == 44);
  CHECK(topo.organs()[1].size() == 50);
  CHECK(topo.organs()[2].size() == 26);

  const Eigen::MatrixXd& a = topo.adjacency();
  CHECK(a == a.transpose());
  CHECK(a.diagonal().isZero());
  CHECK(((a.array() == 0.0) || (a.array() == 1.0)).all());
  CHECK((a.rowwise().sum().array() == 2.0).all());
  CHECK(a.sum() / 2.0 == 120.0);
  for (const OrganRange& r : topo.organs())
    for (Index i = r.begin; i < r.end; ++i) {
      CHECK(a(i, r.begin + (i - r.begin + 1) % r.size()) == 1.0);
      CHECK(a.row(i).segment(r.begin, r.size()).sum() == 2.0);
    }

  REQUIRE(topo.levels().size() == 2);
  const GraphLevel& coarse = topo.level(1);
  CHECK(coarse.num_nodes == 60);
  CHECK(coarse.organs[0].size() == 22);
  CHECK(coarse.organs[1].size() == 25);
  CHECK(coarse.organs[2].size() == 13);
  CHECK((coarse.adjacency.rowwise().sum().array() == 2.0).all());

  SUBCASE("immutable singleton") { CHECK(&chest_topology() == &topo); }
}

TEST_CASE("pooling plan") {
  SUBCASE("4-cycle pools to pairwise means") {
    const auto plans = build_pooling_plan({{0, 4}}, 2);
    REQUIRE(plans.size() == 1);
    CHECK(plans[0].coarse_nodes == 2);
    Eigen::MatrixXd x(4, 2);
    x << 0, 0, 2, 2, 4, 4, 6, 6;
    Eigen::MatrixXd expected(2, 2);
    expected << 1, 1, 5, 5;
    CHECK(pool(x, plans[0]) == expected);
    Tape tape;
    CHECK(as_matrix(pool(leaf_matrix(tape, x), plans[0])) == expected);
  }
  SUBCASE("too few nodes") {
    CHECK_THROWS_AS(build_pooling_plan({{0, 3}}, 2), std::invalid_argument);
    CHECK_THROWS_AS(build_pooling_plan({{0, 4}}, 3), std::invalid_argument);
    CHECK_NOTHROW(build_pooling_plan({{0, 8}}, 3));
  }
  SUBCASE("odd cycle leaves a singleton") {
    const auto plans = build_pooling_plan({{0, 5}}, 2);
    REQUIRE(plans[0].groups.size() == 3);
    CHECK(plans[0].groups[2] == std::vector<Index>{4});
    Eigen::MatrixXd x(5, 1);
    x << 1, 3, 5, 7, 9;
    Eigen::MatrixXd expected(3, 1);
    expected << 2, 6, 9;
    CHECK(pool(x, plans[0]) == expected);
  }

  const GraphTopology& topo = chest_topology();
  const PoolingPlan& plan = topo.plans().front();
  Tape tape;

  SUBCASE("unpool copies even nodes and interpolates odd nodes along the cycle") {
    std::mt19937_64 rng(4);
    const Eigen::MatrixXd c = random_matrix(rng, plan.coarse_nodes, 2);
    const Eigen::MatrixXd f = as_matrix(unpool(leaf_matrix(tape, c), plan));
    REQUIRE(f.rows() == plan.fine_nodes);
    for (std::size_t o = 0; o < plan.coarse_organs.size(); ++o) {
      const OrganRange& cr = plan.coarse_organs[o];
      const OrganRange& fr = plan.fine_organs[o];
      for (Index i = 0; i < cr.size(); ++i) {
        CHECK(f.row(fr.begin + 2 * i) == c.row(cr.begin + i));
        if (2 * i + 1 < fr.size()) {
          const Index succ = cr.begin + (i + 1) % cr.size();
          CHECK((f.row(fr.begin + 2 * i + 1) - 0.5 * (c.row(cr.begin + i) + c.row(succ)))
                    .cwiseAbs()
                    .maxCoeff() < 1e-15);
        }
      }
    }
  }
  SUBCASE("constant fields survive pool and unpool") {
    const Eigen::MatrixXd fine = Eigen::MatrixXd::Constant(120, 3, 2.5);
    const Eigen::MatrixXd coarse = Eigen::MatrixXd::Constant(60, 3, -1.25);
    CHECK(as_matrix(pool(leaf_matrix(tape, fine), plan)) == Eigen::MatrixXd::Constant(60, 3, 2.5));
    CHECK(as_matrix(unpool(leaf_matrix(tape, coarse), plan)) ==
          Eigen::MatrixXd::Constant(120, 3, -1.25));
    CHECK(as_matrix(pool(unpool(leaf_matrix(tape, coarse), plan), plan)) == coarse);
  }
  SUBCASE("probed operator rows sum to one") {
    Eigen::MatrixXd pool_m(60, 120), unpool_m(120, 60);
    for (Index j = 0; j < 120; ++j)
      pool_m.col(j) = as_matrix(pool(leaf_matrix(tape, Eigen::MatrixXd(Eigen::VectorXd::Unit(120, j))), plan));
    for (Index j = 0; j < 60; ++j)
      unpool_m.col(j) = as_matrix(unpool(leaf_matrix(tape, Eigen::MatrixXd(Eigen::VectorXd::Unit(60, j))), plan));
    CHECK((pool_m.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-15);
    CHECK((unpool_m.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-15);
  }
  SUBCASE("row count mismatch") {
    CHECK_THROWS_AS(pool(leaf_matrix(tape, Eigen::MatrixXd::Zero(60, 2)), plan), std::invalid_argument);
    CHECK_THROWS_AS(unpool(leaf_matrix(tape, Eigen::MatrixXd::Zero(120, 2)), plan),
                    std::invalid_argument);
  }
  SUBCASE("plans are sample independent") {
    const GraphTopology again = GraphTopology::from_organ_sizes({44, 50, 26});
    CHECK(again.adjacency() == topo.adjacency());
    CHECK(again.plans().front().groups == plan.groups);
    CHECK(again.level(1).adjacency == topo.level(1).adjacency);
  }
}
