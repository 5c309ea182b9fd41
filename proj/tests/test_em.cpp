#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "expnet/em.hpp"
#include "expnet/rng.hpp"

using namespace expnet;
using Catch::Approx;

namespace {

LatentState make_state(int n, int k, bool directed, std::uint64_t seed) {
  FitConfig cfg;
  cfg.k_communities = k;
  cfg.directed = directed;
  const ObservedGraph g(n, directed, {});
  return detail::random_init(g, cfg, seed);
}

ObservedGraph random_graph(int n, bool directed, double density, Rng& rng) {
  std::map<NodePair, Weight> edges;
  for_each_pair(n, directed, [&](int i, int j) {
    if (rng.bernoulli(density)) edges[{i, j}] = 1 + static_cast<Weight>(rng.uniform_index(3));
  });
  return ObservedGraph(n, directed, std::move(edges));
}

double mu_objective_residual(const LatentState& st, const VariationalPosterior& q, int node,
                             double m) {
  double acc = 0.0, q_sum = 0.0;
  for (int j = 0; j < st.n_nodes(); ++j) {
    if (j == node) continue;
    if (q.defined(node, j)) {
      q_sum += q.q(node, j);
      acc += (1.0 - q.q(node, j)) * st.mu(j) / (1.0 - m * st.mu(j));
    }
    if (st.directed && q.defined(j, node)) {
      q_sum += q.q(j, node);
      acc += (1.0 - q.q(j, node)) * st.mu(j) / (1.0 - m * st.mu(j));
    }
  }
  return m * acc - q_sum;
}

}  // namespace

TEST_CASE("rho: point values", "[em]") {
  LatentState st = make_state(2, 1, false, 1);
  st.u.setOnes();
  st.w.setConstant(2.0);
  REQUIRE(update_rho(st, 0, 1)(0, 0) == 1.0);

  LatentState uni = make_state(2, 2, false, 2);
  uni.u.setOnes();
  uni.w.setOnes();
  const Eigen::MatrixXd rho = update_rho(uni, 0, 1);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) REQUIRE(rho(a, b) == Approx(0.25));

  LatentState cross = make_state(2, 2, false, 3);
  cross.u << 1, 0, 0, 1;
  cross.w << 5, 3, 3, 5;
  const Eigen::MatrixXd r = update_rho(cross, 0, 1);
  REQUIRE(r(0, 1) == Approx(1.0));
  REQUIRE(r(0, 0) == 0.0);
  REQUIRE(r(1, 0) == 0.0);
  REQUIRE(r(1, 1) == 0.0);
}

TEST_CASE("rho: normalization and scale invariance", "[em]") {
  for (int trial = 0; trial < 15; ++trial) {
    LatentState st = make_state(5, 3, trial % 2 == 0, 50 + trial);
    const Eigen::MatrixXd rho = update_rho(st, 1, 3);
    REQUIRE(rho.sum() == Approx(1.0).margin(1e-12));
    REQUIRE((rho.array() >= 0).all());

    LatentState scaled = st;
    scaled.u *= 7.5;
    const Eigen::MatrixXd rho2 = update_rho(scaled, 1, 3);
    REQUIRE((rho - rho2).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rho: degenerate pair", "[em]") {
  LatentState st = make_state(3, 2, false, 4);
  st.u.row(0).setZero();
  REQUIRE_THROWS_AS(update_rho(st, 0, 1), degeneracy_error);
}

TEST_CASE("u update: hand-expanded path graph", "[em]") {
  const ObservedGraph g(3, false, {{{0, 1}, 1}, {{1, 2}, 1}});
  LatentState st = make_state(3, 1, false, 5);
  st.u.setOnes();
  st.w.setOnes();
  const Eigen::MatrixXd u2 = update_u(g, st, unit_posterior(g));
  REQUIRE(u2(0, 0) == Approx(0.5));
  REQUIRE(u2(1, 0) == Approx(1.0));
  REQUIRE(u2(2, 0) == Approx(0.5));
}

TEST_CASE("u update: node with no training edges collapses to zero", "[em]") {
  const ObservedGraph g(3, false, {{{0, 1}, 1}});
  LatentState st = make_state(3, 2, false, 6);
  const Eigen::MatrixXd u2 = update_u(g, st, unit_posterior(g));
  REQUIRE(u2.row(2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("v update: hand-expanded two-node directed graph", "[em]") {
  const ObservedGraph g(2, true, {{{0, 1}, 3}});
  LatentState st = make_state(2, 1, true, 7);
  st.u.setConstant(2.0);
  st.v.setOnes();
  st.w.setConstant(0.5);
  const Eigen::MatrixXd v2 = update_v(g, st, unit_posterior(g));
  REQUIRE(v2(1, 0) == Approx(3.0));  // A_01 / (u_0 w)
  REQUIRE(v2(0, 0) == 0.0);          // no in-edges
}

TEST_CASE("v update rejected in undirected mode", "[em]") {
  const ObservedGraph g(2, false, {{{0, 1}, 1}});
  LatentState st = make_state(2, 1, false, 8);
  REQUIRE_THROWS_AS(update_v(g, st, unit_posterior(g)), validation_error);
}

TEST_CASE("u and v updates coincide on a symmetric digraph with u = v", "[em]") {
  const ObservedGraph g(3, true,
                        {{{0, 1}, 2}, {{1, 0}, 2}, {{1, 2}, 1}, {{2, 1}, 1}});
  LatentState st = make_state(3, 2, true, 9);
  st.v = st.u;
  st.w = (st.w + st.w.transpose()).eval() / 2;  // symmetric affinity
  const auto q = unit_posterior(g);
  const Eigen::MatrixXd u2 = update_u(g, st, q);
  const Eigen::MatrixXd v2 = update_v(g, st, q);
  REQUIRE((u2 - v2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("w update: scalar case equals total weight over membership mass", "[em]") {
  const ObservedGraph g(3, false, {{{0, 1}, 1}, {{0, 2}, 2}, {{1, 2}, 3}});
  LatentState st = make_state(3, 1, false, 10);
  st.u << 1, 2, 3;
  st.w.setOnes();
  const Eigen::MatrixXd w2 = update_w(g, st, unit_posterior(g));
  REQUIRE(w2(0, 0) == Approx(6.0 / 11.0).epsilon(1e-14));
}

TEST_CASE("w update: zero observations give a zero affinity matrix", "[em]") {
  const ObservedGraph g(4, false, {});
  LatentState st = make_state(4, 2, false, 11);
  const Eigen::MatrixXd w2 = update_w(g, st, unit_posterior(g));
  REQUIRE(w2.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("w update keeps exact symmetry on undirected data", "[em]") {
  Rng rng(12);
  const ObservedGraph g = random_graph(6, false, 0.5, rng);
  for (int trial = 0; trial < 10; ++trial) {
    LatentState st = make_state(6, 3, false, 100 + trial);
    const Eigen::MatrixXd w2 = update_w(g, st, unit_posterior(g));
    REQUIRE((w2 - w2.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("mu solver: boundary regimes clamp", "[em]") {
  LatentState st = make_state(3, 1, false, 13);
  VariationalPosterior all_ones(3, false);
  for_each_pair(3, false, [&](int i, int j) { all_ones.set(i, j, 1.0); });
  REQUIRE(solve_mu(st, all_ones, 0) == 1.0 - st.epsilon);

  VariationalPosterior all_zero(3, false);
  for_each_pair(3, false, [&](int i, int j) { all_zero.set(i, j, 0.0); });
  REQUIRE(solve_mu(st, all_zero, 0) == st.epsilon);
}

TEST_CASE("mu solver: symmetric two-node fixed point is sqrt(Q)", "[em]") {
  for (double qv : {0.04, 0.25, 0.81}) {
    LatentState st = make_state(2, 1, false, 14);
    st.mu(0) = st.mu(1) = std::sqrt(qv);
    VariationalPosterior q(2, false);
    q.set(0, 1, qv);
    REQUIRE(std::abs(solve_mu(st, q, 0) - std::sqrt(qv)) < 1e-5);
    REQUIRE(std::abs(solve_mu(st, q, 1) - std::sqrt(qv)) < 1e-5);
  }
}

TEST_CASE("mu solver: two-node sweeps land on the product ridge mu0*mu1 = Q", "[em]") {
  Rng rng(15);
  for (double qv : {0.04, 0.25, 0.81}) {
    LatentState st = make_state(2, 1, false, 16);
    st.mu(0) = rng.uniform(0.2, 0.8);
    st.mu(1) = rng.uniform(0.2, 0.8);
    VariationalPosterior q(2, false);
    q.set(0, 1, qv);
    for (int sweep = 0; sweep < 3; ++sweep)
      for (int i = 0; i < 2; ++i) st.mu(i) = solve_mu(st, q, i, 1e-12);
    REQUIRE(std::abs(st.mu(0) * st.mu(1) - qv) < 1e-9);
  }
}

TEST_CASE("mu solver: residual below tolerance for non-clamped nodes", "[em]") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const bool directed = trial % 2 == 1;
    LatentState st = make_state(8, 2, directed, 200 + trial);
    VariationalPosterior q(8, directed);
    for_each_pair(8, directed, [&](int i, int j) { q.set(i, j, rng.uniform01()); });
    for (int i = 0; i < 8; ++i) {
      const double m = solve_mu(st, q, i, 1e-6);
      if (m > st.epsilon && m < 1.0 - st.epsilon)
        REQUIRE(std::abs(mu_objective_residual(st, q, i, m)) < 1e-6);
      st.mu(i) = m;
    }
  }
}

TEST_CASE("q update: point values and certainty on edges", "[em]") {
  const ObservedGraph g(2, false, {{{0, 1}, 3}});
  LatentState st = make_state(2, 1, false, 18);
  const VariationalPosterior q = update_q(g, st);
  REQUIRE(q.q(0, 1) == 1.0);

  const ObservedGraph empty(2, false, {});
  LatentState zero = make_state(2, 1, false, 19);
  zero.u.setZero();
  const VariationalPosterior q0 = update_q(empty, zero);
  REQUIRE(q0.q(0, 1) == Approx(zero.mu(0) * zero.mu(1)).epsilon(1e-14));

  LatentState ln2 = make_state(2, 1, false, 20);
  ln2.u.setOnes();
  ln2.w.setConstant(std::log(2.0));
  ln2.mu.setConstant(std::sqrt(0.5));
  const VariationalPosterior q1 = update_q(empty, ln2);
  REQUIRE(q1.q(0, 1) == Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("q update: noexp returns the unit posterior, held pairs stay undefined", "[em]") {
  Rng rng(21);
  const ObservedGraph g = random_graph(6, false, 0.4, rng);
  PairMask held(6, false);
  held.add(0, 3);
  held.add(2, 5);
  const VariationalPosterior q = update_q(g, detail::random_init(g, FitConfig{2}, 1), &held,
                                          Exposure::noexp);
  REQUIRE_FALSE(q.defined(0, 3));
  REQUIRE_FALSE(q.defined(2, 5));
  for_each_pair(6, false, [&](int i, int j) {
    if (held.contains(i, j)) return;
    REQUIRE(q.q(i, j) == 1.0);
  });
}

TEST_CASE("q update: every observed edge gets exactly one", "[em]") {
  Rng rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const bool directed = trial % 3 == 0;
    const ObservedGraph g = random_graph(7, directed, 0.5, rng);
    FitConfig cfg;
    cfg.k_communities = 2;
    cfg.directed = directed;
    const LatentState st = detail::random_init(g, cfg, 300 + trial);
    const VariationalPosterior q = update_q(g, st);
    for (const auto& [pair, w] : g.edges()) {
      REQUIRE(q.q(pair.first, pair.second) == 1.0);
    }
  }
}

TEST_CASE("fit: noexp leaves mu at initialization and Q at one", "[em]") {
  Rng rng(23);
  const ObservedGraph g = random_graph(8, false, 0.4, rng);
  FitConfig cfg;
  cfg.k_communities = 2;
  cfg.exposure = Exposure::noexp;
  cfg.n_restarts = 2;
  cfg.max_iters = 30;
  cfg.seed = 99;
  const FitResult result = fit(g, cfg);
  const LatentState init =
      detail::random_init(g, cfg, cfg.seed ^ static_cast<std::uint64_t>(result.restart_index));
  REQUIRE((result.state.mu - init.mu).cwiseAbs().maxCoeff() == 0.0);
  for_each_pair(8, false, [&](int i, int j) { REQUIRE(result.posterior.q(i, j) == 1.0); });
}

TEST_CASE("fit: first noexp iteration equals the documented update order", "[em]") {
  Rng rng(24);
  const ObservedGraph g = random_graph(7, false, 0.5, rng);
  FitConfig cfg;
  cfg.k_communities = 3;
  cfg.exposure = Exposure::noexp;
  cfg.n_restarts = 1;
  cfg.max_iters = 1;
  cfg.seed = 7;
  const FitResult result = fit(g, cfg);

  LatentState st = detail::random_init(g, cfg, cfg.seed ^ 0ULL);
  const VariationalPosterior q = unit_posterior(g);
  st.u = update_u(g, st, q);
  st.w = update_w(g, st, q);
  REQUIRE((result.state.u - st.u).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((result.state.w - st.w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fit: deterministic given the seed, including across thread counts", "[em]") {
  Rng rng(25);
  const ObservedGraph g = random_graph(9, false, 0.4, rng);
  FitConfig cfg;
  cfg.k_communities = 2;
  cfg.n_restarts = 3;
  cfg.max_iters = 40;
  cfg.seed = 1234;
  const FitResult a = fit(g, cfg);
  const FitResult b = fit(g, cfg);
  REQUIRE(a.bound_trace == b.bound_trace);
  REQUIRE((a.state.u - b.state.u).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.final_bound == b.final_bound);

  FitConfig threaded = cfg;
  threaded.n_threads = 3;
  const FitResult c = fit(g, threaded);
  REQUIRE(a.bound_trace == c.bound_trace);
  REQUIRE(a.restart_bounds == c.restart_bounds);
  REQUIRE((a.state.u - c.state.u).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fit: two disconnected cliques split across two communities", "[em]") {
  std::map<NodePair, Weight> edges;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) edges[{i, j}] = 1;
  for (int i = 4; i < 8; ++i)
    for (int j = i + 1; j < 8; ++j) edges[{i, j}] = 1;
  const ObservedGraph g(8, false, edges);
  FitConfig cfg;
  cfg.k_communities = 2;
  cfg.exposure = Exposure::exp;
  cfg.n_restarts = 5;
  cfg.max_iters = 200;
  cfg.seed = 4;
  const FitResult result = fit(g, cfg);
  auto argmax = [&](int i) {
    int best = 0;
    for (int c = 1; c < 2; ++c)
      if (result.state.u(i, c) > result.state.u(i, best)) best = c;
    return best;
  };
  for (int i = 1; i < 4; ++i) REQUIRE(argmax(i) == argmax(0));
  for (int i = 5; i < 8; ++i) REQUIRE(argmax(i) == argmax(4));
}

TEST_CASE("fit: bound trace never decreases (smoke)", "[em]") {
  Rng rng(26);
  for (int trial = 0; trial < 4; ++trial) {
    const ObservedGraph g = random_graph(12, false, 0.3, rng);
    for (Exposure mode : {Exposure::exp, Exposure::noexp}) {
      FitConfig cfg;
      cfg.k_communities = 2;
      cfg.exposure = mode;
      cfg.n_restarts = 2;
      cfg.max_iters = 150;
      cfg.check_every = 5;
      cfg.seed = 500 + trial;
      const FitResult result = fit(g, cfg);
      for (std::size_t t = 1; t < result.bound_trace.size(); ++t)
        REQUIRE(result.bound_trace[t].second >=
                result.bound_trace[t - 1].second - 1e-8);
      REQUIRE(result.final_bound ==
              *std::max_element(result.restart_bounds.begin(), result.restart_bounds.end()));
    }
  }
}

TEST_CASE("fit: directed graphs run end to end", "[em]") {
  Rng rng(27);
  const ObservedGraph g = random_graph(8, true, 0.3, rng);
  FitConfig cfg;
  cfg.k_communities = 2;
  cfg.directed = true;
  cfg.n_restarts = 2;
  cfg.max_iters = 80;
  cfg.seed = 6;
  const FitResult result = fit(g, cfg);
  REQUIRE(std::isfinite(result.final_bound));
  REQUIRE(result.state.v.rows() == 8);
  for (std::size_t t = 1; t < result.bound_trace.size(); ++t)
    REQUIRE(result.bound_trace[t].second >= result.bound_trace[t - 1].second - 1e-8);
}

TEST_CASE("fit: held pairs are excluded from training", "[em]") {
  Rng rng(28);
  const ObservedGraph g = random_graph(8, false, 0.5, rng);
  const auto folds = make_cv_folds(g, 5, 3);
  FitConfig cfg;
  cfg.k_communities = 2;
  cfg.n_restarts = 1;
  cfg.max_iters = 30;
  cfg.seed = 8;
  const FitResult result = fit(g, cfg, &folds[0]);
  for (auto [i, j] : folds[0].pairs()) REQUIRE_FALSE(result.posterior.defined(i, j));
}

TEST_CASE("fit config validation", "[em]") {
  const ObservedGraph g(3, false, {{{0, 1}, 1}});
  FitConfig bad;
  bad.k_communities = 0;
  REQUIRE_THROWS_AS(fit(g, bad), validation_error);
  FitConfig mismatched;
  mismatched.directed = true;
  REQUIRE_THROWS_AS(fit(g, mismatched), validation_error);
}
