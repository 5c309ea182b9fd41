// expnet command line: generate | fit | cv | recommend.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "expnet/cli.hpp"

namespace {

// Shared across subcommands; every piece of randomness derives from --seed.
struct CommonFlags {
  std::int64_t seed = 0;
  int threads = 1;
  std::string format = "csv";
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--seed", flags.seed, "master random seed")->capture_default_str();
  cmd->add_option("--threads", flags.threads, "worker threads for restarts/trials")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--format", flags.format, "output format for reports")
      ->check(CLI::IsMember({"csv", "jsonl"}))
      ->capture_default_str();
  cmd->set_config("--config", "", "flat 'key = value' file; command-line flags win");
}

void add_fit_config(CLI::App* cmd, expnet::FitConfig& cfg, std::string& mode) {
  cmd->add_option("--k", cfg.k_communities, "number of communities K")->check(CLI::PositiveNumber);
  cmd->add_option("--mode", mode, "exp (exposure model) or noexp (MultiTensor baseline)")
      ->check(CLI::IsMember({"exp", "noexp"}))
      ->capture_default_str();
  cmd->add_flag("--directed", cfg.directed, "treat the graph as directed");
  cmd->add_option("--restarts", cfg.n_restarts, "independent EM restarts")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--max-iters", cfg.max_iters, "EM iteration cap")->capture_default_str();
  cmd->add_option("--check-every", cfg.check_every, "iterations between convergence checks")
      ->capture_default_str();
  cmd->add_option("--tol", cfg.tol, "convergence tolerance on L")->capture_default_str();
  cmd->add_option("--decision-window", cfg.decision_window,
                  "consecutive passing checks required to stop")
      ->capture_default_str();
  cmd->add_option("--mu-epsilon", cfg.mu_epsilon, "clamp for mu")->capture_default_str();
  cmd->add_option("--mu-solver-tol", cfg.mu_solver_tol, "bisection residual tolerance")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"exposure-aware probabilistic community detection"};
  app.require_subcommand(1);

  int exit_code = 0;

  // generate ----------------------------------------------------------------
  expnet::cli::GenerateOptions gen;
  CommonFlags gen_common;
  double gen_target = 0.0;
  bool gen_mu_one = false;
  std::string gen_out = ".";
  auto* cmd_gen = app.add_subcommand("generate", "sample a synthetic instance with ground truth");
  cmd_gen->add_option("--n", gen.cfg.n_nodes, "number of nodes")->capture_default_str();
  cmd_gen->add_option("--k", gen.cfg.k_communities, "number of communities")->capture_default_str();
  cmd_gen->add_option("--alpha", gen.cfg.dirichlet_alpha, "Dirichlet concentration")
      ->capture_default_str();
  cmd_gen->add_option("--ratio", gen.cfg.assortative_ratio, "off/on diagonal ratio of w")
      ->capture_default_str();
  cmd_gen->add_option("--w-scale", gen.cfg.w_scale, "on-diagonal affinity magnitude")
      ->capture_default_str();
  cmd_gen->add_option("--target-degree", gen_target,
                      "tune w-scale for this expected observed mean degree");
  cmd_gen->add_option("--beta-a", gen.cfg.beta_a, "first Beta parameter")->capture_default_str();
  cmd_gen->add_option("--beta", gen.cfg.beta_b, "second Beta parameter (dilution strength)")
      ->capture_default_str();
  cmd_gen->add_flag("--directed", gen.cfg.directed, "generate a directed instance");
  cmd_gen->add_flag("--mu-one", gen_mu_one, "debug: full exposure, observed = ground truth");
  cmd_gen->add_option("--out", gen_out, "output directory")->capture_default_str();
  add_common(cmd_gen, gen_common);
  cmd_gen->callback([&] {
    gen.cfg.seed = static_cast<std::uint64_t>(gen_common.seed);
    gen.cfg.force_full_exposure = gen_mu_one;
    gen.out_dir = gen_out;
    if (cmd_gen->count("--target-degree")) gen.target_degree = gen_target;
    exit_code = expnet::cli::cmd_generate(gen, std::cout, std::cerr);
  });

  // fit ---------------------------------------------------------------------
  expnet::cli::FitOptions fitopts;
  CommonFlags fit_common;
  std::string fit_mode = "exp";
  std::string fit_graph, fit_out = ".";
  auto* cmd_fit = app.add_subcommand("fit", "run multi-restart EM on a graph");
  cmd_fit->add_option("graph", fit_graph, "edge-list or .gml input")->required();
  add_fit_config(cmd_fit, fitopts.cfg, fit_mode);
  cmd_fit->add_option("--out", fit_out, "output directory")->capture_default_str();
  add_common(cmd_fit, fit_common);
  cmd_fit->callback([&] {
    fitopts.cfg.exposure = expnet::exposure_from_string(fit_mode);
    fitopts.cfg.seed = static_cast<std::uint64_t>(fit_common.seed);
    fitopts.cfg.n_threads = fit_common.threads;
    fitopts.graph_path = fit_graph;
    fitopts.out_dir = fit_out;
    exit_code = expnet::cli::cmd_fit(fitopts, std::cout, std::cerr);
  });

  // cv ----------------------------------------------------------------------
  expnet::cli::CvOptions cvopts;
  CommonFlags cv_common;
  std::string cv_mode = "exp";  // unused: cv always runs both methods
  std::string cv_graph, cv_instance, cv_out = "cv_report.csv";
  std::vector<int> cv_ks{3};
  auto* cmd_cv = app.add_subcommand("cv", "paired EXP vs NoEXP cross-validation grid");
  cmd_cv->add_option("--input", cv_graph, "edge-list or .gml input");
  cmd_cv->add_option("--instance", cv_instance,
                     "generated instance directory (enables ground-truth metrics)");
  cmd_cv->add_option("--k", cv_ks, "community counts to sweep")->capture_default_str();
  cmd_cv->add_option("--seeds", cvopts.grid.n_seeds, "number of random seeds")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd_cv->add_option("--folds", cvopts.grid.n_folds, "cross-validation folds")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  add_fit_config(cmd_cv, cvopts.cfg, cv_mode);
  cmd_cv->add_option("--precision-k", cvopts.precision_k, "k for Precision@k")
      ->capture_default_str();
  cmd_cv->add_option("--out", cv_out, "report path")->capture_default_str();
  cmd_cv->add_flag("--allow-partial", cvopts.allow_partial,
                   "exit 0 even when some trials fail");
  add_common(cmd_cv, cv_common);
  cmd_cv->callback([&] {
    if (cv_graph.empty() == cv_instance.empty()) {
      std::cerr << "cv: provide exactly one of --input or --instance\n";
      exit_code = 1;
      return;
    }
    cvopts.grid.k_values = cv_ks;
    cvopts.cfg.seed = static_cast<std::uint64_t>(cv_common.seed);
    cvopts.cfg.n_threads = cv_common.threads;
    cvopts.graph_path = cv_graph;
    if (!cv_instance.empty()) cvopts.instance_dir = cv_instance;
    cvopts.out_path = cv_out;
    cvopts.format = expnet::cli::format_from_string(cv_common.format);
    exit_code = expnet::cli::cmd_cv(cvopts, std::cout, std::cerr);
  });

  // recommend -----------------------------------------------------------------
  expnet::cli::RecommendOptions recopts;
  CommonFlags rec_common;
  std::string rec_state, rec_graph, rec_out = "recommendations.csv";
  auto* cmd_rec = app.add_subcommand("recommend", "rank unobserved pairs by affinity");
  cmd_rec->add_option("--state", rec_state, "state file from an exp-mode fit")->required();
  cmd_rec->add_option("--graph", rec_graph, "the graph the state was fitted on")->required();
  cmd_rec->add_option("--top", recopts.top_n, "number of recommendations")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd_rec->add_option("--out", rec_out, "output path")->capture_default_str();
  add_common(cmd_rec, rec_common);
  cmd_rec->callback([&] {
    recopts.state_path = rec_state;
    recopts.graph_path = rec_graph;
    recopts.out_path = rec_out;
    recopts.format = expnet::cli::format_from_string(rec_common.format);
    exit_code = expnet::cli::cmd_recommend(recopts, std::cout, std::cerr);
  });

  CLI11_PARSE(app, argc, argv);
  return exit_code;
}
