#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "expnet/em.hpp"
#include "expnet/errors.hpp"
#include "expnet/graph.hpp"
#include "expnet/model.hpp"
#include "expnet/rng.hpp"
#include "expnet/synth.hpp"

namespace expnet {

struct ScoredPair {
  NodePair pair;
  double score;
  Weight label;  // binarized at > 0 inside auc()
};

// Exact Mann-Whitney AUC with tie averaging: the probability that a random
// positive outscores a random negative, ties counted half.
inline double auc(std::span<const ScoredPair> scored) {
  std::vector<std::pair<double, int>> items;
  items.reserve(scored.size());
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto& sp : scored) {
    const int label = sp.label > 0 ? 1 : 0;
    n_pos += label;
    n_neg += 1 - label;
    items.emplace_back(sp.score, label);
  }
  if (n_pos == 0 || n_neg == 0)
    throw metric_error("AUC needs at least one positive and one negative label");
  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum_pos = 0.0;
  std::size_t t = 0;
  while (t < items.size()) {
    std::size_t e = t;
    while (e + 1 < items.size() && items[e + 1].first == items[t].first) ++e;
    const double avg_rank = 0.5 * (static_cast<double>(t + 1) + static_cast<double>(e + 1));
    for (std::size_t s = t; s <= e; ++s)
      if (items[s].second) rank_sum_pos += avg_rank;
    t = e + 1;
  }
  const double u_stat = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
  return u_stat / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Score of a pair under a fitted state: Q_ij lambda_ij for exp (Q from the
// Bernoulli posterior at the observed weight), lambda_ij for noexp.
inline double pair_score(const ObservedGraph& g, const LatentState& state, Exposure exposure,
                         int i, int j) {
  const double lam = lambda_pair(state, i, j);
  if (exposure == Exposure::noexp) return lam;
  return bernoulli_posterior(lam, g.weight(i, j), state.mu_pair(i, j)) * lam;
}

// Scores exactly the held-out pairs (or a subset of them); labels come from
// the full observed graph.
inline std::vector<ScoredPair> link_scores(const ObservedGraph& g, const LatentState& state,
                                           Exposure exposure, const PairMask& held,
                                           const std::vector<NodePair>* subset = nullptr) {
  std::vector<NodePair> pairs = subset ? *subset : held.pairs();
  std::vector<ScoredPair> out;
  out.reserve(pairs.size());
  const Eigen::MatrixXd cross = state.u * state.w;
  const Eigen::MatrixXd& in = state.in_membership();
  for (auto [i, j] : pairs) {
    if (!held.contains(i, j))
      throw protocol_error("pair (" + std::to_string(i) + "," + std::to_string(j) +
                           ") overlaps the training set");
    const Weight a = g.weight(i, j);
    const double lam = (!state.directed && i > j) ? cross.row(j).dot(in.row(i))
                                                  : cross.row(i).dot(in.row(j));
    double score = lam;
    if (exposure == Exposure::exp)
      score *= bernoulli_posterior(lam, a, state.mu_pair(i, j));
    out.push_back({{i, j}, score, a});
  }
  return out;
}

// AUC of the exposure reconstruction: Q_ij against the true mask Z. By
// default every distinct pair enters, including observed edges where Q = 1
// and Z = 1 agree trivially; restrict_to_zero_pairs drops those.
inline double mask_auc(const ObservedGraph& g, const LatentState& state, const ExposureMask& truth,
                       bool restrict_to_zero_pairs = false) {
  if (truth.n_nodes() != g.n_nodes() || truth.directed() != g.directed())
    throw validation_error("mask does not match the graph");
  std::vector<ScoredPair> scored;
  const Eigen::MatrixXd cross = state.u * state.w;
  const Eigen::MatrixXd& in = state.in_membership();
  for_each_pair(g.n_nodes(), g.directed(), [&](int i, int j) {
    const Weight a = g.weight(i, j);
    if (restrict_to_zero_pairs && a > 0) return;
    const double lam = cross.row(i).dot(in.row(j));
    const double q = bernoulli_posterior(lam, a, state.mu_pair(i, j));
    scored.push_back({{i, j}, q, static_cast<Weight>(truth.at(i, j))});
  });
  return auc(scored);
}

namespace detail {

// Max-total assignment on an n x n score matrix (Jonker-Volgenant style,
// O(n^3)). Returns the matched column for each row.
inline std::vector<int> max_assignment(const Eigen::MatrixXd& score) {
  const int n = static_cast<int>(score.rows());
  constexpr double kInf = 1e18;
  std::vector<double> pot_u(n + 1, 0.0), pot_v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -score(i0 - 1, j - 1) - pot_u[i0] - pot_v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          pot_u[match[j]] += delta;
          pot_v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assign(n, -1);
  for (int j = 1; j <= n; ++j)
    if (match[j] > 0) assign[match[j] - 1] = j - 1;
  return assign;
}

inline double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace detail

// Mean per-node cosine similarity after aligning communities: columns of
// u_inferred are permuted by the assignment maximizing total column cosine.
inline double community_similarity(const Eigen::MatrixXd& u_inferred,
                                   const Eigen::MatrixXd& u_true) {
  if (u_inferred.rows() != u_true.rows() || u_inferred.cols() != u_true.cols())
    throw validation_error("membership matrices must have identical shape");
  const int k = static_cast<int>(u_true.cols());
  Eigen::MatrixXd col_sim(k, k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b)
      col_sim(a, b) = detail::cosine(u_inferred.col(a), u_true.col(b));
  const std::vector<int> assign = detail::max_assignment(col_sim);

  Eigen::MatrixXd aligned(u_inferred.rows(), k);
  for (int a = 0; a < k; ++a) aligned.col(assign[a]) = u_inferred.col(a);

  double total = 0.0;
  for (Eigen::Index i = 0; i < u_true.rows(); ++i)
    total += detail::cosine(aligned.row(i).transpose(), u_true.row(i).transpose());
  return total / static_cast<double>(u_true.rows());
}

struct PrecisionAtK {
  double value = 0.0;
  int k = 0;
  int nodes_with_short_candidate_lists = 0;  // used fewer than k candidates
};

// For each node, rank its zero-weight counterparts by inferred lambda
// (ties by index) and count the top-k fraction that are ground-truth edges.
inline PrecisionAtK precision_at_k(const ObservedGraph& observed, const ObservedGraph& ground_truth,
                                   const LatentState& state, int k = 20) {
  if (k < 1) throw validation_error("k must be positive");
  if (observed.n_nodes() != ground_truth.n_nodes())
    throw validation_error("observed and ground truth graphs differ in size");
  const int n = observed.n_nodes();
  const Eigen::MatrixXd cross = state.u * state.w;
  const Eigen::MatrixXd& in = state.in_membership();

  PrecisionAtK out;
  out.k = k;
  double total = 0.0;
  int counted_nodes = 0;
  std::vector<std::pair<double, int>> candidates;
  for (int i = 0; i < n; ++i) {
    candidates.clear();
    for (int j = 0; j < n; ++j) {
      if (j == i || observed.weight(i, j) > 0) continue;
      const double lam = (!state.directed && i > j) ? cross.row(j).dot(in.row(i))
                                                    : cross.row(i).dot(in.row(j));
      candidates.emplace_back(-lam, j);  // descending lambda, ascending index
    }
    if (candidates.empty()) continue;
    const int take = std::min<int>(k, static_cast<int>(candidates.size()));
    if (take < k) ++out.nodes_with_short_candidate_lists;
    std::partial_sort(candidates.begin(), candidates.begin() + take, candidates.end());
    int hits = 0;
    for (int t = 0; t < take; ++t)
      if (ground_truth.weight(i, candidates[t].second) > 0) ++hits;
    total += static_cast<double>(hits) / static_cast<double>(take);
    ++counted_nodes;
  }
  out.value = counted_nodes > 0 ? total / counted_nodes : 0.0;
  return out;
}

// Random-guess Precision@k: (<k>_g - <k>) / (N - <k>).
inline double random_baseline_p_at_k(const SyntheticInstance& instance) {
  const double kg = mean_degree(instance.ground_truth);
  const double ko = mean_degree(instance.observed);
  return (kg - ko) / (instance.observed.n_nodes() - ko);
}

// ---------------------------------------------------------------------------
// Cross-validated EXP vs NoEXP comparison.

struct CvGrid {
  std::vector<int> k_values{3};
  int n_seeds = 10;
  int n_folds = 5;
};

struct CvRecord {
  int k = 0;
  int seed = 0;
  int fold = 0;
  Exposure method = Exposure::exp;
  double auc_links = 0.0;
  std::optional<double> auc_mask;    // synthetic, exp only
  std::optional<double> cosine_sim;  // synthetic only
  std::optional<double> p_at_k;      // synthetic only
};

struct CvReport {
  std::vector<CvRecord> records;
  int paired_trials = 0;
  int exp_wins = 0;
  std::vector<std::string> failures;  // flagged trials, grid continues
  double observed_mean_degree = 0.0;
  std::optional<double> ground_truth_mean_degree;
};

// Runs fit+score for every (K, seed, fold) with EXP and NoEXP paired on
// identical folds and identical initialization streams.
inline CvReport run_cv_experiment(const ObservedGraph& g, const CvGrid& grid,
                                  const FitConfig& base_cfg,
                                  const SyntheticInstance* instance = nullptr,
                                  int precision_k = 20) {
  if (grid.k_values.empty() || grid.n_seeds < 1) throw validation_error("empty cv grid");
  CvReport report;
  report.observed_mean_degree = mean_degree(g);
  if (instance) report.ground_truth_mean_degree = mean_degree(instance->ground_truth);

  for (int k : grid.k_values) {
    for (int s = 0; s < grid.n_seeds; ++s) {
      std::vector<PairMask> folds;
      try {
        folds = make_cv_folds(g, grid.n_folds, derive_seed(base_cfg.seed, "folds", k, s));
      } catch (const std::exception& e) {
        report.failures.push_back("K=" + std::to_string(k) + " seed=" + std::to_string(s) +
                                  ": " + e.what());
        continue;
      }
      for (int f = 0; f < grid.n_folds; ++f) {
        FitConfig cfg = base_cfg;
        cfg.k_communities = k;
        cfg.directed = g.directed();
        cfg.seed = derive_seed(base_cfg.seed, "fit", k, s, f);

        bool trial_ok = true;
        std::optional<double> auc_exp;
        for (Exposure method : {Exposure::exp, Exposure::noexp}) {
          cfg.exposure = method;
          try {
            const FitResult result = fit(g, cfg, &folds[f]);
            CvRecord rec;
            rec.k = k;
            rec.seed = s;
            rec.fold = f;
            rec.method = method;
            rec.auc_links = auc(link_scores(g, result.state, method, folds[f]));
            if (instance) {
              if (method == Exposure::exp)
                rec.auc_mask = mask_auc(g, result.state, instance->mask);
              rec.cosine_sim = community_similarity(result.state.u, instance->true_state.u);
              rec.p_at_k =
                  precision_at_k(g, instance->ground_truth, result.state, precision_k).value;
            }
            if (method == Exposure::exp) auc_exp = rec.auc_links;
            report.records.push_back(rec);
          } catch (const std::exception& e) {
            trial_ok = false;
            report.failures.push_back("K=" + std::to_string(k) + " seed=" + std::to_string(s) +
                                      " fold=" + std::to_string(f) + " method=" +
                                      to_string(method) + ": " + e.what());
          }
        }
        if (trial_ok && auc_exp) {
          const CvRecord& noexp_rec = report.records.back();
          ++report.paired_trials;
          if (*auc_exp > noexp_rec.auc_links) ++report.exp_wins;
        }
      }
    }
  }
  return report;
}

// Unplayed-pair recommendations: candidates are zero-weight pairs, ranked by
// lambda descending with Q ascending as tiebreaker.
struct Recommendation {
  NodePair pair;
  double lambda = 0.0;
  double q = 0.0;
};

inline std::vector<Recommendation> recommend(const ObservedGraph& g, const LatentState& state,
                                             Exposure exposure, int top_n) {
  if (exposure != Exposure::exp)
    throw protocol_error("recommendations need an exposure-mode fit (Q is unavailable for noexp)");
  if (top_n < 1) throw validation_error("top_n must be positive");
  const Eigen::MatrixXd cross = state.u * state.w;
  const Eigen::MatrixXd& in = state.in_membership();
  std::vector<Recommendation> all;
  for_each_pair(g.n_nodes(), g.directed(), [&](int i, int j) {
    if (g.weight(i, j) > 0) return;
    const double lam = cross.row(i).dot(in.row(j));
    const double q = bernoulli_posterior(lam, 0, state.mu_pair(i, j));
    all.push_back({{i, j}, lam, q});
  });
  const auto order = [](const Recommendation& a, const Recommendation& b) {
    if (a.lambda != b.lambda) return a.lambda > b.lambda;
    if (a.q != b.q) return a.q < b.q;
    return a.pair < b.pair;
  };
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(top_n), all.size());
  std::partial_sort(all.begin(), all.begin() + take, all.end(), order);
  all.resize(take);
  return all;
}

}  // namespace expnet
