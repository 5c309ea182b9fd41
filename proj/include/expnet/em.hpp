#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

#include "expnet/errors.hpp"
#include "expnet/graph.hpp"
#include "expnet/model.hpp"
#include "expnet/rng.hpp"

namespace expnet {

struct FitConfig {
  int k_communities = 1;
  bool directed = false;
  Exposure exposure = Exposure::exp;
  int n_restarts = 5;
  int max_iters = 500;
  int check_every = 10;
  double tol = 1e-2;          // convergence tolerance on L
  int decision_window = 2;    // consecutive passing checks required
  double mu_epsilon = 1e-5;   // clamp for mu; lambda uses kLambdaFloor in logs
  double mu_solver_tol = 1e-6;
  std::uint64_t seed = 0;
  int n_threads = 1;          // restarts only; results are thread-count independent

  void validate() const {
    if (k_communities < 1) throw validation_error("k_communities must be >= 1");
    if (n_restarts < 1 || max_iters < 1 || check_every < 1 || decision_window < 1)
      throw validation_error("counts must be positive");
    if (tol <= 0 || mu_solver_tol <= 0) throw validation_error("tolerances must be positive");
    if (mu_epsilon <= 0 || mu_epsilon >= 0.5) throw validation_error("mu_epsilon must lie in (0, 0.5)");
    if (n_threads < 1) throw validation_error("n_threads must be >= 1");
  }
};

struct FitResult {
  LatentState state;
  VariationalPosterior posterior;
  double final_bound = -std::numeric_limits<double>::infinity();
  std::vector<std::pair<int, double>> bound_trace;  // (iteration, L) of winning run
  int restart_index = -1;
  std::vector<double> restart_bounds;  // final L of every restart
  int q_clamp_warnings = 0;            // Q denominators that underflowed to 0
};

// Called after every EM iteration (restart, iteration, state, posterior).
// Setting an observer forces restarts to run sequentially.
using FitObserver =
    std::function<void(int, int, const LatentState&, const VariationalPosterior&)>;

namespace detail {

// Dense Q with zeros on the diagonal and on held/undefined pairs, so
// Q-weighted sums need no masking logic.
inline Eigen::MatrixXd dense_q(const VariationalPosterior& q, const PairMask* held) {
  const int n = q.n_nodes();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for_each_pair(n, q.directed(), [&](int i, int j) {
    if (held && held->contains(i, j)) return;
    if (!q.defined(i, j)) return;
    const double v = q.q(i, j);
    m(i, j) = v;
    if (!q.directed()) m(j, i) = v;
  });
  return m;
}

struct EdgeTerm {
  int i, j;
  double a;
};

inline std::vector<EdgeTerm> training_edges(const ObservedGraph& g, const PairMask* held) {
  std::vector<EdgeTerm> out;
  out.reserve(g.n_edges());
  for (const auto& [pair, w] : g.edges()) {
    if (held && held->contains(pair.first, pair.second)) continue;
    out.push_back({pair.first, pair.second, static_cast<double>(w)});
  }
  return out;
}

// Elementwise num/den with the 0/0 -> 0 rule; positive mass over a zero
// denominator cannot happen in exact arithmetic and is reported.
inline double safe_ratio(double num, double den, const char* what, int r, int c) {
  if (den > 0.0) return num / den;
  if (num == 0.0) return 0.0;
  throw degeneracy_error(std::string(what) + " update: positive numerator with zero denominator at (" +
                         std::to_string(r) + "," + std::to_string(c) + ")");
}

inline Eigen::MatrixXd update_u_impl(const LatentState& state, const Eigen::MatrixXd& qmat,
                                     const std::vector<EdgeTerm>& edges) {
  const int n = state.n_nodes();
  const int k = state.n_communities();
  // S_jk = sum_q in_jq w_kq; lambda_ij = sum_k u_ik S_jk
  const Eigen::MatrixXd s = state.in_membership() * state.w.transpose();
  const Eigen::MatrixXd den = qmat * s;
  Eigen::MatrixXd num = Eigen::MatrixXd::Zero(n, k);
  for (const auto& e : edges) {
    const double lam = state.u.row(e.i).dot(s.row(e.j));
    if (lam <= 0.0) continue;  // degenerate pair: no mass to attribute
    const double c = qmat(e.i, e.j) * e.a / lam;
    num.row(e.i) += c * state.u.row(e.i).cwiseProduct(s.row(e.j));
    if (!state.directed) {
      num.row(e.j) += c * state.u.row(e.j).cwiseProduct(s.row(e.i));
    }
  }
  Eigen::MatrixXd out(n, k);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) out(i, c) = safe_ratio(num(i, c), den(i, c), "u", i, c);
  return out;
}

inline Eigen::MatrixXd update_v_impl(const LatentState& state, const Eigen::MatrixXd& qmat,
                                     const std::vector<EdgeTerm>& edges) {
  const int n = state.n_nodes();
  const int k = state.n_communities();
  // S_iq = sum_k u_ik w_kq; lambda_ij = sum_q S_iq v_jq
  const Eigen::MatrixXd s = state.u * state.w;
  const Eigen::MatrixXd den = qmat.transpose() * s;
  Eigen::MatrixXd num = Eigen::MatrixXd::Zero(n, k);
  for (const auto& e : edges) {
    const double lam = s.row(e.i).dot(state.v.row(e.j));
    if (lam <= 0.0) continue;
    const double c = qmat(e.i, e.j) * e.a / lam;
    num.row(e.j) += c * state.v.row(e.j).cwiseProduct(s.row(e.i));
  }
  Eigen::MatrixXd out(n, k);
  for (int j = 0; j < n; ++j)
    for (int c = 0; c < k; ++c) out(j, c) = safe_ratio(num(j, c), den(j, c), "v", j, c);
  return out;
}

inline Eigen::MatrixXd update_w_impl(const LatentState& state, const Eigen::MatrixXd& qmat,
                                     const std::vector<EdgeTerm>& edges) {
  const int k = state.n_communities();
  const Eigen::MatrixXd& in = state.in_membership();
  const Eigen::MatrixXd cross = state.u * state.w;  // lambda_ij = cross_i . in_j
  Eigen::MatrixXd den = state.u.transpose() * (qmat * in);
  if (!state.directed) {
    // mirror the upper triangle so w stays exactly symmetric
    for (int a = 0; a < k; ++a)
      for (int b = a + 1; b < k; ++b) den(b, a) = den(a, b);
  }
  Eigen::MatrixXd num = Eigen::MatrixXd::Zero(k, k);
  for (const auto& e : edges) {
    const double lam = cross.row(e.i).dot(in.row(e.j));
    if (lam <= 0.0) continue;
    const double c = qmat(e.i, e.j) * e.a / lam;
    if (state.directed) {
      num += c * (state.u.row(e.i).transpose() * state.v.row(e.j)).cwiseProduct(state.w);
    } else {
      num += c * (state.u.row(e.i).transpose() * state.u.row(e.j) +
                  state.u.row(e.j).transpose() * state.u.row(e.i))
                     .cwiseProduct(state.w);
    }
  }
  Eigen::MatrixXd out(k, k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) out(a, b) = safe_ratio(num(a, b), den(a, b), "w", a, b);
  return out;
}

}  // namespace detail

// rho_ijkq = u_ik in_jq w_kq / lambda_ij; rows*cols sum to 1.
inline Eigen::MatrixXd update_rho(const LatentState& state, int i, int j) {
  const Eigen::MatrixXd& in = state.in_membership();
  Eigen::MatrixXd products =
      (state.u.row(i).transpose() * in.row(j)).cwiseProduct(state.w);
  const double total = products.sum();
  if (total <= 0.0)
    throw degeneracy_error("rho undefined: all membership-affinity products are zero for pair (" +
                           std::to_string(i) + "," + std::to_string(j) + ")");
  return products / total;
}

inline Eigen::MatrixXd update_u(const ObservedGraph& g, const LatentState& state,
                                const VariationalPosterior& q, const PairMask* held = nullptr) {
  return detail::update_u_impl(state, detail::dense_q(q, held), detail::training_edges(g, held));
}

inline Eigen::MatrixXd update_v(const ObservedGraph& g, const LatentState& state,
                                const VariationalPosterior& q, const PairMask* held = nullptr) {
  if (!state.directed) throw validation_error("v update requires directed mode");
  return detail::update_v_impl(state, detail::dense_q(q, held), detail::training_edges(g, held));
}

inline Eigen::MatrixXd update_w(const ObservedGraph& g, const LatentState& state,
                                const VariationalPosterior& q, const PairMask* held = nullptr) {
  return detail::update_w_impl(state, detail::dense_q(q, held), detail::training_edges(g, held));
}

// Root of f(m) = m * sum_j (1-Q_ij) mu_j / (1 - m mu_j) - sum_j Q_ij on
// [eps, 1-eps], by bisection (f is increasing in m). Boundary regimes clamp.
inline double solve_mu(const LatentState& state, const VariationalPosterior& q, int node,
                       double tol = 1e-6) {
  const int n = state.n_nodes();
  std::vector<double> coeff;   // (1-Q) weight per counterpart node
  std::vector<double> mu_j;
  coeff.reserve(n);
  mu_j.reserve(n);
  double q_sum = 0.0;
  for (int j = 0; j < n; ++j) {
    if (j == node) continue;
    double c = 0.0;
    if (q.defined(node, j)) {
      const double qv = q.q(node, j);
      q_sum += qv;
      c += 1.0 - qv;
    }
    if (state.directed && q.defined(j, node)) {
      const double qv = q.q(j, node);
      q_sum += qv;
      c += 1.0 - qv;
    }
    if (c > 0.0) {
      coeff.push_back(c);
      mu_j.push_back(state.mu(j));
    }
  }

  auto f = [&](double m) {
    double acc = 0.0;
    for (std::size_t t = 0; t < coeff.size(); ++t)
      acc += coeff[t] * mu_j[t] / (1.0 - m * mu_j[t]);
    return m * acc - q_sum;
  };

  double lo = state.epsilon;
  double hi = 1.0 - state.epsilon;
  if (f(hi) < 0.0) return hi;  // all-exposed regime
  if (f(lo) > 0.0) return lo;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (std::abs(fm) < tol) return mid;
    if (fm < 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

// Variational E-step. Pairs with A > 0 get exactly 1; noexp returns Q ident. 1.
inline VariationalPosterior update_q(const ObservedGraph& g, const LatentState& state,
                                     const PairMask* held = nullptr,
                                     Exposure exposure = Exposure::exp,
                                     int* clamp_warnings = nullptr) {
  if (exposure == Exposure::noexp) return unit_posterior(g, held);
  const Eigen::MatrixXd cross = state.u * state.w;
  const Eigen::MatrixXd& in = state.in_membership();
  VariationalPosterior q(g.n_nodes(), g.directed());
  for_each_pair(g.n_nodes(), g.directed(), [&](int i, int j) {
    if (held && held->contains(i, j)) return;
    const Weight a = g.weight(i, j);
    if (a > 0) {
      q.set(i, j, 1.0);
      return;
    }
    bool degenerate = false;
    const double lam = cross.row(i).dot(in.row(j));
    q.set(i, j, bernoulli_posterior(lam, 0, state.mu_pair(i, j), &degenerate));
    if (degenerate && clamp_warnings) ++(*clamp_warnings);
  });
  return q;
}

namespace detail {

struct SingleRun {
  LatentState state;
  VariationalPosterior posterior;
  double final_bound;
  std::vector<std::pair<int, double>> trace;
  int clamp_warnings = 0;
};

inline LatentState random_init(const ObservedGraph& g, const FitConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const int n = g.n_nodes();
  const int k = cfg.k_communities;
  LatentState st;
  st.directed = cfg.directed;
  st.epsilon = cfg.mu_epsilon;
  st.u.resize(n, k);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) st.u(i, c) = rng.uniform01();
  if (cfg.directed) {
    st.v.resize(n, k);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < k; ++c) st.v(i, c) = rng.uniform01();
  }
  st.w.resize(k, k);
  if (cfg.directed) {
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) st.w(a, b) = rng.uniform01();
  } else {
    for (int a = 0; a < k; ++a)
      for (int b = a; b < k; ++b) st.w(a, b) = st.w(b, a) = rng.uniform01();
  }
  st.mu.resize(n);
  for (int i = 0; i < n; ++i) st.mu(i) = rng.uniform(st.epsilon, 1.0 - st.epsilon);
  return st;
}

inline SingleRun run_single(const ObservedGraph& g, const FitConfig& cfg, const PairMask* held,
                            std::uint64_t seed, int restart, const FitObserver& observer) {
  const bool exp_mode = (cfg.exposure == Exposure::exp);
  LatentState st = random_init(g, cfg, seed);
  const auto edges = training_edges(g, held);

  VariationalPosterior posterior = unit_posterior(g, held);
  Eigen::MatrixXd qmat = dense_q(posterior, held);  // stays all-ones for noexp

  std::vector<std::pair<int, double>> trace;
  int clamp_warnings = 0;
  double last_check = -std::numeric_limits<double>::infinity();
  int streak = 0;

  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    if (exp_mode) {
      posterior = update_q(g, st, held, cfg.exposure, &clamp_warnings);
      qmat = dense_q(posterior, held);
    }

    st.u = update_u_impl(st, qmat, edges);
    if (cfg.directed) st.v = update_v_impl(st, qmat, edges);
    st.w = update_w_impl(st, qmat, edges);
    if (exp_mode) {
      for (int i = 0; i < g.n_nodes(); ++i) st.mu(i) = solve_mu(st, posterior, i, cfg.mu_solver_tol);
    }

    if (observer) observer(restart, iter, st, posterior);

    if (iter % cfg.check_every == 0 || iter == cfg.max_iters) {
      const double bound =
          exp_mode ? lower_bound(g, st, posterior, held) : poisson_log_lik(g, st, held);
      trace.emplace_back(iter, bound);
      if (bound - last_check < cfg.tol)
        ++streak;
      else
        streak = 0;
      last_check = bound;
      if (streak >= cfg.decision_window) break;
    }
  }

  // Final E-step so the exported posterior matches the exported parameters.
  double final_bound;
  if (exp_mode) {
    posterior = update_q(g, st, held, cfg.exposure, &clamp_warnings);
    final_bound = lower_bound(g, st, posterior, held);
  } else {
    final_bound = poisson_log_lik(g, st, held);
  }
  return SingleRun{std::move(st), std::move(posterior), final_bound, std::move(trace),
                   clamp_warnings};
}

}  // namespace detail

// Multi-restart EM. Restart r runs on derived seed cfg.seed ^ r; the restart
// with the highest final bound wins. Deterministic given cfg.seed.
inline FitResult fit(const ObservedGraph& g, const FitConfig& cfg, const PairMask* held = nullptr,
                     const FitObserver& observer = {}) {
  cfg.validate();
  if (g.n_nodes() < 2) throw validation_error("fit needs at least two nodes");
  if (held && (held->n_nodes() != g.n_nodes() || held->directed() != g.directed()))
    throw validation_error("held-pair mask does not match the graph");
  if (g.directed() != cfg.directed)
    throw validation_error("config directed flag does not match the graph");

  std::vector<detail::SingleRun> runs;
  runs.reserve(cfg.n_restarts);
  auto run_one = [&](int r) {
    try {
      return detail::run_single(g, cfg, held, cfg.seed ^ static_cast<std::uint64_t>(r), r, observer);
    } catch (const degeneracy_error& e) {
      throw degeneracy_error(std::string(e.what()) + " [restart " + std::to_string(r) + "]");
    }
  };

  if (cfg.n_threads <= 1 || cfg.n_restarts == 1 || observer) {
    for (int r = 0; r < cfg.n_restarts; ++r) runs.push_back(run_one(r));
  } else {
    runs.resize(cfg.n_restarts,
                detail::SingleRun{LatentState{}, VariationalPosterior(g.n_nodes(), g.directed()),
                                  0.0, {}, 0});
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex err_mutex;
    auto worker = [&]() {
      for (;;) {
        const int r = next.fetch_add(1);
        if (r >= cfg.n_restarts) return;
        try {
          runs[r] = run_one(r);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    const int n_workers = std::min(cfg.n_threads, cfg.n_restarts);
    pool.reserve(n_workers);
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  int best = 0;
  for (int r = 1; r < cfg.n_restarts; ++r)
    if (runs[r].final_bound > runs[best].final_bound) best = r;

  FitResult result{std::move(runs[best].state), std::move(runs[best].posterior),
                   runs[best].final_bound, std::move(runs[best].trace), best,
                   {}, 0};
  for (const auto& run : runs) {
    result.restart_bounds.push_back(run.final_bound);
    result.q_clamp_warnings += run.clamp_warnings;
  }
  return result;
}

}  // namespace expnet
