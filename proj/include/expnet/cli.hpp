#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "expnet/em.hpp"
#include "expnet/eval.hpp"
#include "expnet/graph.hpp"
#include "expnet/model.hpp"
#include "expnet/synth.hpp"

namespace expnet::cli {

namespace fs = std::filesystem;

enum class OutputFormat { csv, jsonl };

inline OutputFormat format_from_string(const std::string& s) {
  if (s == "csv") return OutputFormat::csv;
  if (s == "jsonl") return OutputFormat::jsonl;
  throw validation_error("unknown output format '" + s + "' (expected csv or jsonl)");
}

// Loads .gml files through the GML subset parser, everything else as an
// edge list.
inline ObservedGraph load_graph_auto(const fs::path& path, bool directed) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot read graph file " + path.string());
  if (path.extension() == ".gml") {
    if (directed) throw validation_error("GML ingestion supports undirected graphs only");
    return load_gml_subset(in);
  }
  return load_edge_list(in, directed);
}

inline std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw validation_error("cannot write " + path.string());
  return out;
}

// ---------------------------------------------------------------------------
// FitResult serialization: Q file (zero-weight training pairs; observed edges
// are implicitly 1) and the bound-trace CSV.

inline void write_posterior(const ObservedGraph& g, const VariationalPosterior& q,
                            std::ostream& out) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "# i j Q  (pairs with observed weight > 0 are implicitly 1)\n";
  for_each_pair(g.n_nodes(), g.directed(), [&](int i, int j) {
    if (!q.defined(i, j) || g.weight(i, j) > 0) return;
    out << i << "\t" << j << "\t" << q.q(i, j) << "\n";
  });
}

inline void write_bound_trace(const std::vector<std::pair<int, double>>& trace,
                              std::ostream& out) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "iteration,L\n";
  for (const auto& [iter, bound] : trace) out << iter << "," << bound << "\n";
}

// Per the footnote on interpretability, the human-facing mu report rounds
// clamped values to exactly 0 / 1; the state file keeps the exact clamps.
inline void write_mu_report(const LatentState& state, std::ostream& out) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "# node mu\n";
  for (int i = 0; i < state.n_nodes(); ++i) {
    double m = state.mu(i);
    if (m <= state.epsilon) m = 0.0;
    if (m >= 1.0 - state.epsilon) m = 1.0;
    out << i << "\t" << m << "\n";
  }
}

// ---------------------------------------------------------------------------
// generate

struct GenerateOptions {
  SynthConfig cfg;
  std::optional<double> target_degree;  // tunes w_scale when set
  fs::path out_dir = ".";
};

inline int cmd_generate(const GenerateOptions& opts, std::ostream& log, std::ostream& err) {
  try {
    SynthConfig cfg = opts.cfg;
    if (opts.target_degree) cfg.w_scale = target_scale(cfg, *opts.target_degree);
    cfg.validate();
    const SyntheticInstance inst = generate(cfg);
    save_instance(inst, opts.out_dir);
    log << "w_scale " << cfg.w_scale << "\n";
    log << "mean_degree_observed " << mean_degree(inst.observed) << "\n";
    log << "mean_degree_ground_truth " << mean_degree(inst.ground_truth) << "\n";
    log << "mask_density " << inst.mask.density() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "generate: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// fit

struct FitOptions {
  fs::path graph_path;
  FitConfig cfg;
  fs::path out_dir = ".";
};

inline int cmd_fit(const FitOptions& opts, std::ostream& log, std::ostream& err) {
  try {
    const ObservedGraph g = load_graph_auto(opts.graph_path, opts.cfg.directed);
    const FitResult result = fit(g, opts.cfg);
    for (std::size_t r = 0; r < result.restart_bounds.size(); ++r)
      log << "restart " << r << " final_L " << std::setprecision(12)
          << result.restart_bounds[r] << (static_cast<int>(r) == result.restart_index ? "  (best)" : "")
          << "\n";
    if (result.q_clamp_warnings > 0)
      log << "warning: " << result.q_clamp_warnings << " Q denominators clamped to 0\n";
    {
      auto out = open_output(opts.out_dir / "state.txt");
      save_state(result.state, opts.cfg.exposure, out);
    }
    {
      auto out = open_output(opts.out_dir / "q.txt");
      write_posterior(g, result.posterior, out);
    }
    {
      auto out = open_output(opts.out_dir / "trace.csv");
      write_bound_trace(result.bound_trace, out);
    }
    {
      auto out = open_output(opts.out_dir / "mu.txt");
      write_mu_report(result.state, out);
    }
    return 0;
  } catch (const std::exception& e) {
    err << "fit: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// cv

struct CvOptions {
  fs::path graph_path;                // either a graph file ...
  std::optional<fs::path> instance_dir;  // ... or a generated instance directory
  CvGrid grid;
  FitConfig cfg;
  int precision_k = 20;
  fs::path out_path = "cv_report.csv";
  OutputFormat format = OutputFormat::csv;
  bool allow_partial = false;
};

inline void write_cv_csv(const CvReport& report, std::ostream& out) {
  out << std::setprecision(10);
  out << "K,seed,fold,method,auc_links,auc_mask,cosine_sim,p_at_k\n";
  auto cell = [&](const std::optional<double>& v) {
    std::ostringstream os;
    if (v) os << std::setprecision(10) << *v;
    return os.str();
  };
  for (const auto& rec : report.records) {
    out << rec.k << "," << rec.seed << "," << rec.fold << "," << to_string(rec.method) << ","
        << rec.auc_links << "," << cell(rec.auc_mask) << "," << cell(rec.cosine_sim) << ","
        << cell(rec.p_at_k) << "\n";
  }
}

inline void write_cv_jsonl(const CvReport& report, std::ostream& out) {
  for (const auto& rec : report.records) {
    nlohmann::json row{{"K", rec.k},
                       {"seed", rec.seed},
                       {"fold", rec.fold},
                       {"method", to_string(rec.method)},
                       {"auc_links", rec.auc_links}};
    if (rec.auc_mask) row["auc_mask"] = *rec.auc_mask;
    if (rec.cosine_sim) row["cosine_sim"] = *rec.cosine_sim;
    if (rec.p_at_k) row["p_at_k"] = *rec.p_at_k;
    out << row.dump() << "\n";
  }
}

inline int cmd_cv(const CvOptions& opts, std::ostream& log, std::ostream& err) {
  try {
    std::optional<SyntheticInstance> instance;
    std::optional<ObservedGraph> graph;
    if (opts.instance_dir) {
      instance = load_instance(*opts.instance_dir);
      graph = instance->observed;
    } else {
      graph = load_graph_auto(opts.graph_path, opts.cfg.directed);
    }
    FitConfig cfg = opts.cfg;
    cfg.directed = graph->directed();
    const CvReport report = run_cv_experiment(*graph, opts.grid, cfg,
                                              instance ? &*instance : nullptr, opts.precision_k);
    {
      auto out = open_output(opts.out_path);
      if (opts.format == OutputFormat::csv)
        write_cv_csv(report, out);
      else
        write_cv_jsonl(report, out);
    }
    for (const auto& f : report.failures) err << "trial failed: " << f << "\n";
    log << "paired trials " << report.paired_trials << ", EXP wins " << report.exp_wins << " ("
        << (report.paired_trials > 0
                ? 100.0 * report.exp_wins / report.paired_trials
                : 0.0)
        << "%)\n";
    if (!report.failures.empty() && !opts.allow_partial) return 1;
    return 0;
  } catch (const std::exception& e) {
    err << "cv: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// recommend

struct RecommendOptions {
  fs::path state_path;
  fs::path graph_path;
  int top_n = 10;
  fs::path out_path = "recommendations.csv";
  OutputFormat format = OutputFormat::csv;
};

inline void write_recommendations_csv(const std::vector<Recommendation>& recs,
                                      const ObservedGraph& g, std::ostream& out) {
  out << std::setprecision(10);
  out << "rank,node_i,node_j,lambda,Q\n";
  int rank = 1;
  for (const auto& r : recs) {
    out << rank++ << "," << g.label(r.pair.first) << "," << g.label(r.pair.second) << ","
        << r.lambda << "," << r.q << "\n";
  }
}

inline void write_recommendations_jsonl(const std::vector<Recommendation>& recs,
                                        const ObservedGraph& g, std::ostream& out) {
  int rank = 1;
  for (const auto& r : recs) {
    nlohmann::json row{{"rank", rank++},
                       {"node_i", g.label(r.pair.first)},
                       {"node_j", g.label(r.pair.second)},
                       {"lambda", r.lambda},
                       {"Q", r.q}};
    out << row.dump() << "\n";
  }
}

inline int cmd_recommend(const RecommendOptions& opts, std::ostream& log, std::ostream& err) {
  try {
    std::ifstream state_in(opts.state_path);
    if (!state_in) throw validation_error("cannot read state file " + opts.state_path.string());
    auto [state, exposure] = load_state(state_in);
    if (exposure != Exposure::exp) {
      err << "recommend: the state file was fitted with --mode noexp; "
             "exposure probabilities Q are unavailable. Refit with --mode exp.\n";
      return 1;
    }
    const ObservedGraph g = load_graph_auto(opts.graph_path, state.directed);
    if (g.n_nodes() != state.n_nodes())
      throw validation_error("graph and state disagree on node count");
    const auto recs = recommend(g, state, exposure, opts.top_n);
    if (static_cast<int>(recs.size()) < opts.top_n)
      log << "warning: only " << recs.size() << " candidate pairs available\n";
    {
      auto out = open_output(opts.out_path);
      if (opts.format == OutputFormat::csv)
        write_recommendations_csv(recs, g, out);
      else
        write_recommendations_jsonl(recs, g, out);
    }
    return 0;
  } catch (const std::exception& e) {
    err << "recommend: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace expnet::cli
