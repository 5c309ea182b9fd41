#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "expnet/model.hpp"
#include "expnet/rng.hpp"

using namespace expnet;
using Catch::Approx;

namespace {

LatentState random_state(int n, int k, bool directed, std::uint64_t seed) {
  Rng rng(seed);
  LatentState st;
  st.directed = directed;
  st.epsilon = 1e-5;
  st.u.resize(n, k);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) st.u(i, c) = rng.uniform01();
  if (directed) {
    st.v.resize(n, k);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < k; ++c) st.v(i, c) = rng.uniform01();
  }
  st.w.resize(k, k);
  for (int a = 0; a < k; ++a)
    for (int b = directed ? 0 : a; b < k; ++b) {
      st.w(a, b) = rng.uniform01();
      if (!directed) st.w(b, a) = st.w(a, b);
    }
  st.mu.resize(n);
  for (int i = 0; i < n; ++i) st.mu(i) = rng.uniform(st.epsilon, 1.0 - st.epsilon);
  return st;
}

}  // namespace

TEST_CASE("lambda_pair point values", "[model]") {
  LatentState st;
  st.u = Eigen::MatrixXd::Ones(2, 1);
  st.w = Eigen::MatrixXd::Constant(1, 1, 2.0);
  st.mu = Eigen::VectorXd::Constant(2, 0.5);
  REQUIRE(lambda_pair(st, 0, 1) == Approx(2.0));

  st.u(0, 0) = 0.0;
  REQUIRE(lambda_pair(st, 0, 1) == 0.0);

  LatentState cross;
  cross.u.resize(2, 2);
  cross.u << 1, 0, 0, 1;
  cross.w.resize(2, 2);
  cross.w << 5, 3, 3, 5;
  cross.mu = Eigen::VectorXd::Constant(2, 0.5);
  REQUIRE(lambda_pair(cross, 0, 1) == Approx(3.0));
}

TEST_CASE("lambda_pair is bilinear in a node's membership", "[model]") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    LatentState st = random_state(6, 3, false, 100 + trial);
    const double c = rng.uniform(0.1, 5.0);
    LatentState scaled = st;
    scaled.u.row(2) *= c;
    for (int j = 0; j < 6; ++j) {
      if (j == 2) continue;
      REQUIRE(lambda_pair(scaled, 2, j) == Approx(c * lambda_pair(st, 2, j)).epsilon(1e-12));
    }
  }
}

TEST_CASE("lambda_pair symmetric evaluation is exact for undirected states", "[model]") {
  const LatentState st = random_state(8, 3, false, 11);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      if (i == j) continue;
      REQUIRE(lambda_pair(st, i, j) == lambda_pair(st, j, i));
    }
}

TEST_CASE("poisson_log_pmf values and conventions", "[model]") {
  REQUIRE(poisson_log_pmf(0, 1.0) == Approx(-1.0));
  REQUIRE(poisson_log_pmf(0, 0.0) == 0.0);
  REQUIRE(std::isinf(poisson_log_pmf(3, 0.0)));
  REQUIRE(poisson_log_pmf(3, 0.0) < 0);
  REQUIRE(poisson_log_pmf(2, 1.0) == Approx(-1.0 - std::log(2.0)).epsilon(1e-14));
  REQUIRE_THROWS_AS(poisson_log_pmf(-1, 1.0), validation_error);
}

TEST_CASE("poisson pmf normalizes for lambda <= 10", "[model]") {
  for (double lam : {0.1, 0.5, 1.0, 3.0, 5.0, 10.0}) {
    double total = 0.0;
    for (long long x = 0; x <= 50; ++x) total += std::exp(poisson_log_pmf(x, lam));
    REQUIRE(total == Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("masked_edge_log_lik", "[model]") {
  REQUIRE(std::isinf(masked_edge_log_lik(3, 5.0, 0)));
  REQUIRE(masked_edge_log_lik(0, 5.0, 0) == 0.0);
  REQUIRE(masked_edge_log_lik(1, 2.0, 1) == Approx(std::log(2.0) - 2.0).epsilon(1e-14));
  REQUIRE_THROWS_AS(masked_edge_log_lik(1, 2.0, 2), validation_error);
}

TEST_CASE("bernoulli posterior point values", "[model]") {
  REQUIRE(bernoulli_posterior(17.0, 3, 0.2) == 1.0);
  REQUIRE(bernoulli_posterior(0.0, 0, 0.3) == Approx(0.3).epsilon(1e-14));
  REQUIRE(bernoulli_posterior(std::log(2.0), 0, 0.5) == Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("lower bound: hand-expanded single pair is zero", "[model]") {
  const ObservedGraph g(2, false, {});
  LatentState st;
  st.u = Eigen::MatrixXd::Zero(2, 1);
  st.w = Eigen::MatrixXd::Zero(1, 1);
  st.mu = Eigen::VectorXd::Constant(2, std::sqrt(0.5));
  st.epsilon = 1e-5;
  VariationalPosterior q(2, false);
  q.set(0, 1, 0.5);
  REQUIRE(lower_bound(g, st, q) == Approx(0.0).margin(1e-12));
}

TEST_CASE("lower bound: degenerate posterior reduces to Poisson + prior terms", "[model]") {
  const ObservedGraph g(3, false, {{{0, 1}, 1}, {{0, 2}, 2}, {{1, 2}, 3}});
  const LatentState st = random_state(3, 2, false, 21);
  const VariationalPosterior q = unit_posterior(g);
  double expected = 0.0;
  for_each_pair(3, false, [&](int i, int j) {
    expected += poisson_log_pmf(g.weight(i, j), lambda_pair(st, i, j));
    expected += std::log(st.mu(i) * st.mu(j));
  });
  REQUIRE(lower_bound(g, st, q) == Approx(expected).epsilon(1e-12));
}

TEST_CASE("lower bound: Q below one on an observed edge is a contract violation", "[model]") {
  const ObservedGraph g(2, false, {{{0, 1}, 2}});
  const LatentState st = random_state(2, 1, false, 3);
  VariationalPosterior q(2, false);
  q.set(0, 1, 0.9);
  REQUIRE_THROWS_AS(lower_bound(g, st, q), validation_error);
}

TEST_CASE("lower bound stays finite whenever the posterior invariant holds", "[model]") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 4 + static_cast<int>(rng.uniform_index(6));
    const bool directed = rng.bernoulli(0.3);
    std::map<NodePair, Weight> edges;
    for_each_pair(n, directed, [&](int i, int j) {
      if (rng.bernoulli(0.3)) edges[{i, j}] = 1 + static_cast<Weight>(rng.uniform_index(4));
    });
    const ObservedGraph g(n, directed, edges);
    const LatentState st = random_state(n, 2, directed, 1000 + trial);
    VariationalPosterior q(n, directed);
    for_each_pair(n, directed, [&](int i, int j) {
      q.set(i, j, g.weight(i, j) > 0 ? 1.0 : rng.uniform01());
    });
    REQUIRE(std::isfinite(lower_bound(g, st, q)));
  }
}

TEST_CASE("state file round trip keeps 1e-12 relative fidelity", "[model]") {
  for (bool directed : {false, true}) {
    const LatentState st = random_state(7, 3, directed, directed ? 8 : 9);
    std::ostringstream out;
    save_state(st, Exposure::noexp, out);
    std::istringstream in(out.str());
    const auto [back, exposure] = load_state(in);
    REQUIRE(exposure == Exposure::noexp);
    REQUIRE(back.directed == directed);
    REQUIRE(back.u.rows() == st.u.rows());
    REQUIRE((back.u - st.u).cwiseAbs().maxCoeff() <= 1e-12 * st.u.cwiseAbs().maxCoeff());
    REQUIRE((back.w - st.w).cwiseAbs().maxCoeff() <= 1e-12 * st.w.cwiseAbs().maxCoeff());
    REQUIRE((back.mu - st.mu).cwiseAbs().maxCoeff() <= 1e-12);
    if (directed)
      REQUIRE((back.v - st.v).cwiseAbs().maxCoeff() <= 1e-12 * st.v.cwiseAbs().maxCoeff());
    REQUIRE(back.epsilon == Approx(st.epsilon).epsilon(1e-12));
  }
}

TEST_CASE("posterior container guards its invariants", "[model]") {
  VariationalPosterior q(3, false);
  REQUIRE_FALSE(q.defined(0, 1));
  REQUIRE_THROWS_AS(q.q(0, 1), validation_error);
  q.set(0, 1, 0.25);
  REQUIRE(q.defined(0, 1));
  REQUIRE(q.defined(1, 0));
  REQUIRE(q.q(1, 0) == 0.25);
  REQUIRE_THROWS_AS(q.set(0, 2, 1.5), validation_error);
}
