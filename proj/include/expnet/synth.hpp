#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "expnet/errors.hpp"
#include "expnet/graph.hpp"
#include "expnet/model.hpp"
#include "expnet/rng.hpp"

namespace expnet {

struct SynthConfig {
  int n_nodes = 500;
  int k_communities = 3;
  double dirichlet_alpha = 1.0;
  double assortative_ratio = 0.001;  // off-diagonal / on-diagonal of w
  double w_scale = 1.0;              // on-diagonal magnitude, controls <k>
  double beta_a = 2.0;
  double beta_b = 1.0;               // paper sweeps this in [0.1, 10]
  bool directed = false;
  bool force_full_exposure = false;  // debug: mu = 1, Z = 1, observed = ground truth
  std::uint64_t seed = 0;

  void validate() const {
    if (n_nodes < 2) throw validation_error("need at least two nodes");
    if (k_communities < 1) throw validation_error("need at least one community");
    if (dirichlet_alpha <= 0 || w_scale <= 0 || beta_a <= 0 || beta_b <= 0)
      throw validation_error("synth parameters must be positive");
    if (assortative_ratio <= 0 || assortative_ratio > 1)
      throw validation_error("assortative_ratio must lie in (0, 1]");
  }
};

// Ground truth, dilution mask, their element-wise product, and the exact
// parameters that generated them.
struct SyntheticInstance {
  ObservedGraph ground_truth;
  ExposureMask mask;
  ObservedGraph observed;
  LatentState true_state;
};

// True generating parameters live on [0,1]; the clamp only guards exact 0/1.
inline constexpr double kSynthMuClamp = 1e-12;

// Draws theta and mu. Stream is independent of the edge/mask draws so
// target_scale can reproduce it exactly.
inline LatentState sample_parameters(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "synth-params"));
  LatentState st;
  st.directed = cfg.directed;
  st.epsilon = kSynthMuClamp;
  const int n = cfg.n_nodes;
  const int k = cfg.k_communities;

  st.u.resize(n, k);
  std::vector<double> row(k);
  for (int i = 0; i < n; ++i) {
    rng.dirichlet(cfg.dirichlet_alpha, row);
    for (int c = 0; c < k; ++c) st.u(i, c) = row[c];
  }
  if (cfg.directed) {
    st.v.resize(n, k);
    for (int i = 0; i < n; ++i) {
      rng.dirichlet(cfg.dirichlet_alpha, row);
      for (int c = 0; c < k; ++c) st.v(i, c) = row[c];
    }
  }

  st.w = Eigen::MatrixXd::Constant(k, k, cfg.assortative_ratio * cfg.w_scale);
  st.w.diagonal().setConstant(cfg.w_scale);

  st.mu.resize(n);
  if (cfg.force_full_exposure) {
    st.mu.setConstant(1.0 - kSynthMuClamp);
  } else {
    for (int i = 0; i < n; ++i) {
      const double m = rng.beta(cfg.beta_a, cfg.beta_b);
      st.mu(i) = std::min(std::max(m, kSynthMuClamp), 1.0 - kSynthMuClamp);
    }
  }
  return st;
}

// Steps 1-4 of the generative pipeline: theta/mu, Poisson ground truth,
// Bernoulli mask, element-wise product. Deterministic in cfg.seed.
inline SyntheticInstance generate(const SynthConfig& cfg) {
  LatentState st = sample_parameters(cfg);
  const int n = cfg.n_nodes;
  const Eigen::MatrixXd cross = st.u * st.w;
  const Eigen::MatrixXd& in = st.in_membership();

  Rng edge_rng(derive_seed(cfg.seed, "synth-edges"));
  std::map<NodePair, Weight> ground;
  for_each_pair(n, cfg.directed, [&](int i, int j) {
    const double lam = cross.row(i).dot(in.row(j));
    const Weight a = edge_rng.poisson(lam);
    if (a > 0) ground[{i, j}] = a;
  });

  Rng mask_rng(derive_seed(cfg.seed, "synth-mask"));
  ExposureMask mask(n, cfg.directed, true);
  if (!cfg.force_full_exposure) {
    for_each_pair(n, cfg.directed, [&](int i, int j) {
      mask.set(i, j, mask_rng.bernoulli(st.mu(i) * st.mu(j)) ? 1 : 0);
    });
  }

  std::map<NodePair, Weight> observed;
  for (const auto& [pair, a] : ground) {
    if (mask.at(pair.first, pair.second)) observed[pair] = a;
  }

  return SyntheticInstance{ObservedGraph(n, cfg.directed, std::move(ground)), std::move(mask),
                           ObservedGraph(n, cfg.directed, std::move(observed)), std::move(st)};
}

// Solves for the on-diagonal magnitude of w that hits a target observed mean
// degree, using the analytic expectation E[A_ij] = lambda_ij mu_i mu_j on the
// parameters cfg.seed would sample.
inline double target_scale(const SynthConfig& cfg, double target_mean_degree) {
  if (target_mean_degree <= 0) throw validation_error("target mean degree must be positive");
  SynthConfig unit = cfg;
  unit.w_scale = 1.0;
  const LatentState st = sample_parameters(unit);
  const Eigen::MatrixXd cross = st.u * st.w;
  const Eigen::MatrixXd& in = st.in_membership();
  double expected_weight = 0.0;  // at unit scale
  for_each_pair(cfg.n_nodes, cfg.directed, [&](int i, int j) {
    expected_weight += cross.row(i).dot(in.row(j)) * st.mu(i) * st.mu(j);
  });
  if (expected_weight <= 0.0)
    throw validation_error("target mean degree is unattainable: expected density is zero");
  const double per_node = (cfg.directed ? 1.0 : 2.0) * expected_weight / cfg.n_nodes;
  return target_mean_degree / per_node;
}

// ---------------------------------------------------------------------------
// Instance directory layout: observed.tsv, ground_truth.tsv, mask.txt,
// true_state.txt.

inline void save_instance(const SyntheticInstance& inst, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw validation_error(std::string("cannot write ") + (dir / name).string());
    return out;
  };
  {
    auto out = open("observed.tsv");
    write_edge_list(inst.observed, out);
  }
  {
    auto out = open("ground_truth.tsv");
    write_edge_list(inst.ground_truth, out);
  }
  {
    auto out = open("mask.txt");
    write_exposure_mask(inst.mask, out);
  }
  {
    auto out = open("true_state.txt");
    save_state(inst.true_state, Exposure::exp, out);
  }
}

inline SyntheticInstance load_instance(const std::filesystem::path& dir) {
  auto open = [&](const char* name) {
    std::ifstream in(dir / name);
    if (!in) throw validation_error(std::string("cannot read ") + (dir / name).string());
    return in;
  };
  auto state_in = open("true_state.txt");
  auto [state, exposure] = load_state(state_in);
  (void)exposure;
  auto mask_in = open("mask.txt");
  ExposureMask mask = load_exposure_mask(mask_in);
  auto gt_in = open("ground_truth.tsv");
  ObservedGraph ground = load_edge_list(gt_in, state.directed);
  auto obs_in = open("observed.tsv");
  ObservedGraph observed = load_edge_list(obs_in, state.directed);
  if (ground.n_nodes() != state.n_nodes() || observed.n_nodes() != state.n_nodes() ||
      mask.n_nodes() != state.n_nodes())
    throw validation_error("instance files disagree on node count");
  return SyntheticInstance{std::move(ground), std::move(mask), std::move(observed), std::move(state)};
}

}  // namespace expnet
