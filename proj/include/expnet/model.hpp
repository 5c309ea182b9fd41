#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <utility>

#include "expnet/errors.hpp"
#include "expnet/graph.hpp"

namespace expnet {

enum class Exposure { exp, noexp };

inline std::string to_string(Exposure e) { return e == Exposure::exp ? "exp" : "noexp"; }
inline Exposure exposure_from_string(const std::string& s) {
  if (s == "exp") return Exposure::exp;
  if (s == "noexp") return Exposure::noexp;
  throw validation_error("unknown exposure mode '" + s + "'");
}

// Floor applied to lambda inside logarithms only, never to stored values.
inline constexpr double kLambdaFloor = 1e-12;

// Full parameter set: memberships u (and v for directed graphs), affinity w,
// exposure propensities mu. w is symmetric in undirected mode; v is empty.
struct LatentState {
  Eigen::MatrixXd u;   // N x K, out-membership
  Eigen::MatrixXd v;   // N x K, in-membership (directed only, else 0 x 0)
  Eigen::MatrixXd w;   // K x K affinity
  Eigen::VectorXd mu;  // N exposure propensities in [eps, 1-eps]
  double epsilon = 1e-5;
  bool directed = false;

  int n_nodes() const { return static_cast<int>(u.rows()); }
  int n_communities() const { return static_cast<int>(u.cols()); }

  // In-membership of j: v in directed mode, u otherwise.
  const Eigen::MatrixXd& in_membership() const { return directed ? v : u; }

  double mu_pair(int i, int j) const { return mu(i) * mu(j); }

  void validate() const {
    if (u.rows() == 0 || u.cols() == 0) throw validation_error("empty membership matrix");
    if (w.rows() != u.cols() || w.cols() != u.cols()) throw validation_error("w shape mismatch");
    if (mu.size() != u.rows()) throw validation_error("mu length mismatch");
    if (directed && (v.rows() != u.rows() || v.cols() != u.cols()))
      throw validation_error("v shape mismatch");
    if (!directed && v.size() != 0) throw validation_error("v present in undirected mode");
    if ((u.array() < 0).any() || (w.array() < 0).any() || (directed && (v.array() < 0).any()))
      throw validation_error("negative membership or affinity entry");
    if (!directed && !w.isApprox(w.transpose()))
      throw validation_error("w must be symmetric in undirected mode");
    if (epsilon <= 0 || epsilon >= 0.5) throw validation_error("epsilon out of range");
    if ((mu.array() < epsilon - 1e-15).any() || (mu.array() > 1.0 - epsilon + 1e-15).any())
      throw validation_error("mu outside [epsilon, 1-epsilon]");
  }
};

// Expected interaction rate lambda_ij = sum_kq u_ik u_jq w_kq (v replaces the
// second u when directed). Undirected evaluation is orientation-canonical so
// lambda(i,j) == lambda(j,i) exactly.
inline double lambda_pair(const LatentState& state, int i, int j) {
  if (!state.directed && i > j) std::swap(i, j);
  const Eigen::MatrixXd& in = state.in_membership();
  return state.u.row(i) * state.w * in.row(j).transpose();
}

inline double poisson_log_pmf(long long x, double lam) {
  if (x < 0) throw validation_error("Poisson count must be nonnegative");
  if (lam <= 0.0) return x == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
  return -lam + static_cast<double>(x) * std::log(lam) - std::lgamma(static_cast<double>(x) + 1.0);
}

// Per-pair likelihood term under the mask: exposed pairs are Poisson, an
// unexposed pair forces a zero observation (the delta factor).
inline double masked_edge_log_lik(long long a, double lam, int z) {
  if (z != 0 && z != 1) throw validation_error("mask value must be 0 or 1");
  if (z == 1) return poisson_log_pmf(a, lam);
  return a == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
}

namespace detail {

// Poisson log pmf with the lambda floor inside the log only.
inline double pois_log_floored(Weight a, double lam) {
  if (a == 0) return -lam;
  return -lam + static_cast<double>(a) * std::log(std::max(lam, kLambdaFloor)) -
         std::lgamma(static_cast<double>(a) + 1.0);
}

inline double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

}  // namespace detail

// Bernoulli posterior mean of the exposure indicator (Eq. of the variational
// E-step): exactly 1 on observed edges. `degenerate` is flagged when the
// denominator underflows to 0 and Q is clamped to 0.
inline double bernoulli_posterior(double lam, Weight a, double mu_ij, bool* degenerate = nullptr) {
  if (a > 0) return 1.0;
  const double p0 = std::exp(-lam);
  const double num = p0 * mu_ij;
  const double den = num + (1.0 - mu_ij);
  if (den <= 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return num / den;
}

// Bernoulli means Q_ij of the variational posterior over exposure, stored per
// distinct pair. Held-out pairs stay undefined.
class VariationalPosterior {
 public:
  VariationalPosterior(int n_nodes, bool directed)
      : n_(n_nodes), directed_(directed), q_(pair_count(n_nodes, directed), kUndefined) {}

  int n_nodes() const { return n_; }
  bool directed() const { return directed_; }

  bool defined(int i, int j) const {
    return i != j && q_[pair_index(i, j, n_, directed_)] != kUndefined;
  }

  double q(int i, int j) const {
    const double v = q_[pair_index(i, j, n_, directed_)];
    if (v == kUndefined) throw validation_error("posterior undefined for requested pair");
    return v;
  }

  void set(int i, int j, double value) {
    if (value < 0.0 || value > 1.0) throw validation_error("Q must lie in [0,1]");
    q_[pair_index(i, j, n_, directed_)] = value;
  }

  std::size_t n_defined() const {
    std::size_t c = 0;
    for (double v : q_) c += (v != kUndefined);
    return c;
  }

 private:
  static constexpr double kUndefined = -1.0;
  int n_;
  bool directed_;
  std::vector<double> q_;
};

// Builds Q ident. 1 over all training pairs (the NoEXP posterior).
inline VariationalPosterior unit_posterior(const ObservedGraph& g, const PairMask* held = nullptr) {
  VariationalPosterior q(g.n_nodes(), g.directed());
  for_each_pair(g.n_nodes(), g.directed(), [&](int i, int j) {
    if (held && held->contains(i, j)) return;
    q.set(i, j, 1.0);
  });
  return q;
}

// Variational lower bound L(q, theta, mu) over training pairs:
//   Q [log Pois(A;lambda) + log mu_ij] + (1-Q) [log delta(A) + log(1-mu_ij)]
//   - Q log Q - (1-Q) log(1-Q)
// with 0 log 0 = 0. Pairs with A > 0 must carry Q = 1, which kills the
// -inf delta branch with weight zero.
inline double lower_bound(const ObservedGraph& g, const LatentState& state,
                          const VariationalPosterior& q, const PairMask* held = nullptr) {
  const int n = state.n_nodes();
  const Eigen::MatrixXd cross = state.u * state.w;  // lambda_ij = cross_i . in_j
  const Eigen::MatrixXd& in = state.in_membership();
  double total = 0.0;
  for_each_pair(n, g.directed(), [&](int i, int j) {
    if (held && held->contains(i, j)) return;
    const Weight a = g.weight(i, j);
    const double qv = q.q(i, j);
    const double lam = cross.row(i).dot(in.row(j));
    const double mu_ij = state.mu_pair(i, j);
    if (a > 0) {
      if (qv < 1.0)
        throw validation_error("Q < 1 on an observed edge would make the bound -inf");
      total += detail::pois_log_floored(a, lam) + std::log(mu_ij);
      return;
    }
    const double entropy = -detail::xlogx(qv) - detail::xlogx(1.0 - qv);
    total += qv * (-lam + std::log(mu_ij)) + (1.0 - qv) * std::log(1.0 - mu_ij) + entropy;
  });
  return total;
}

// Masked Poisson log-likelihood (the NoEXP objective).
inline double poisson_log_lik(const ObservedGraph& g, const LatentState& state,
                              const PairMask* held = nullptr) {
  const int n = state.n_nodes();
  const Eigen::MatrixXd cross = state.u * state.w;
  const Eigen::MatrixXd& in = state.in_membership();
  double total = 0.0;
  for_each_pair(n, g.directed(), [&](int i, int j) {
    if (held && held->contains(i, j)) return;
    total += detail::pois_log_floored(g.weight(i, j), cross.row(i).dot(in.row(j)));
  });
  return total;
}

// ---------------------------------------------------------------------------
// State (de)serialization: text, 17 significant digits (relative round-trip
// error well under 1e-12).

namespace detail {

inline void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ' ';
      out << m(r, c);
    }
    out << '\n';
  }
}

inline void read_matrix(std::istream& in, Eigen::MatrixXd& m, const char* what) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      if (!(in >> m(r, c))) throw parse_error(std::string("truncated ") + what + " block");
}

inline std::string read_tagged(std::istream& in, const std::string& tag) {
  std::string key, value;
  if (!(in >> key >> value) || key != tag)
    throw parse_error("expected '" + tag + "' entry in state file");
  return value;
}

}  // namespace detail

inline void save_state(const LatentState& state, Exposure exposure, std::ostream& out) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "# latent state\n";
  out << "format 1\n";
  out << "mode " << (state.directed ? "directed" : "undirected") << "\n";
  out << "exposure " << to_string(exposure) << "\n";
  out << "nodes " << state.n_nodes() << "\n";
  out << "communities " << state.n_communities() << "\n";
  out << "epsilon " << state.epsilon << "\n";
  out << "u\n";
  detail::write_matrix(out, state.u);
  out << "w\n";
  detail::write_matrix(out, state.w);
  out << "mu\n";
  for (Eigen::Index i = 0; i < state.mu.size(); ++i) out << state.mu(i) << '\n';
  if (state.directed) {
    out << "v\n";
    detail::write_matrix(out, state.v);
  }
}

inline std::pair<LatentState, Exposure> load_state(std::istream& in) {
  std::string line;
  std::getline(in, line);  // leading comment
  if (detail::trim(line).rfind("#", 0) != 0) throw parse_error("missing state header comment");
  if (detail::read_tagged(in, "format") != "1") throw parse_error("unsupported state format");
  const std::string mode = detail::read_tagged(in, "mode");
  if (mode != "directed" && mode != "undirected") throw parse_error("bad mode in state file");
  const Exposure exposure = exposure_from_string(detail::read_tagged(in, "exposure"));
  const int n = std::stoi(detail::read_tagged(in, "nodes"));
  const int k = std::stoi(detail::read_tagged(in, "communities"));
  const double eps = std::stod(detail::read_tagged(in, "epsilon"));
  if (n <= 0 || k <= 0) throw parse_error("bad dimensions in state file");

  LatentState state;
  state.directed = (mode == "directed");
  state.epsilon = eps;
  state.u.resize(n, k);
  state.w.resize(k, k);
  state.mu.resize(n);

  std::string tag;
  if (!(in >> tag) || tag != "u") throw parse_error("expected 'u' block");
  detail::read_matrix(in, state.u, "u");
  if (!(in >> tag) || tag != "w") throw parse_error("expected 'w' block");
  detail::read_matrix(in, state.w, "w");
  if (!(in >> tag) || tag != "mu") throw parse_error("expected 'mu' block");
  for (int i = 0; i < n; ++i)
    if (!(in >> state.mu(i))) throw parse_error("truncated mu block");
  if (state.directed) {
    if (!(in >> tag) || tag != "v") throw parse_error("expected 'v' block");
    state.v.resize(n, k);
    detail::read_matrix(in, state.v, "v");
  }
  state.validate();
  return {std::move(state), exposure};
}

}  // namespace expnet
