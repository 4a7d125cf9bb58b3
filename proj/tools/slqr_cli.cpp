// Command-line front end: one subcommand per synthesis algorithm, plus the
// Riccati oracle, optimality checks, the scalar benchmark reproduction, and
// noise-variance sweeps.  Reports go to --out (or stdout); status lines and
// errors go to stderr.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "slqr/harness.hpp"

namespace {

using namespace slqr;

struct RunArgs {
  std::string config_path;
  std::string out;
  std::string format = "csv";
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common_options(CLI::App* cmd, RunArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON experiment config")->required();
  cmd->add_option("--out", args.out, "output file (default: stdout)");
  cmd->add_option("--format", args.format, "csv or json")->capture_default_str();
  cmd->add_option("--seed", args.seed, "override the config seed")
      ->each([&args](const std::string&) { args.seed_set = true; });
}

void print_matrix(const char* name, const Matrix<double>& M) {
  std::printf("%s =\n", name);
  for (Index i = 0; i < M.rows(); ++i) {
    std::printf(" ");
    for (Index k = 0; k < M.cols(); ++k) std::printf(" % .10g", M(i, k));
    std::printf("\n");
  }
}

int run_algorithm(const std::string& name, const RunArgs& args) {
  ExperimentConfig cfg = load_config(args.config_path);
  if (algorithm_name(cfg.algorithm) != name)
    throw ConfigError("config selects algorithm '" + algorithm_name(cfg.algorithm) +
                      "' but the subcommand is '" + name + "'");
  if (args.seed_set) cfg.seed = args.seed;
  const EmitFormat format = emit_format_from_name(args.format);
  const RunReport rep = run_experiment(cfg);
  const std::string text = format == EmitFormat::Csv ? to_csv(rep) : to_json(rep);
  if (args.out.empty())
    std::cout << text;
  else
    write_text_file(args.out, text);
  std::fprintf(stderr, "%s: %d iterations, %s, terminal error %.3e, %.3f s\n",
               rep.algorithm.c_str(), rep.iterations,
               rep.converged ? "converged" : "not converged", rep.terminal_error,
               rep.wall_time_seconds);
  return 0;
}

int run_solve_are(const RunArgs& args) {
  const ExperimentConfig cfg = load_config(args.config_path);
  const auto sol = solve_are(cfg.sys, cfg.cost, cfg.F0);
  print_matrix("X*", sol.X);
  print_matrix("F*", sol.F);
  std::printf("iterations = %d\n", sol.iterations);
  return 0;
}

Matrix<double> excitation_gram(const ExperimentConfig& cfg) {
  if (!cfg.initial_pairs.pairs.empty()) return cfg.initial_pairs.gram();
  return default_initial_pairs<double>(cfg.sys.state_dim(), cfg.sys.input_dim(),
                                       derive_seed(cfg.seed, 0))
      .gram();
}

int run_kkt_check(const RunArgs& args) {
  const ExperimentConfig cfg = load_config(args.config_path);
  const auto sol = solve_are(cfg.sys, cfg.cost, cfg.F0);
  const Matrix<double> P = optimal_P(cfg.sys, cfg.cost, sol.X);
  const Matrix<double> Gamma = excitation_gram(cfg);
  const Matrix<double> S = closed_form_S(cfg.sys, sol.F, Gamma, cfg.cost.gamma);
  const Index d = cfg.sys.state_dim() + cfg.sys.input_dim();
  const Matrix<double> P0 = Matrix<double>::Zero(d, d);
  const auto res = kkt_residuals(S, sol.F, P, P0, cfg.sys, cfg.cost, Gamma);
  std::printf("covariance equation residual   %.3e\n", res.r_primal_lyap);
  std::printf("covariance definiteness defect %.3e\n", res.r_primal_pd);
  std::printf("multiplier residual            %.3e\n", res.r_dual);
  std::printf("value stationarity residual    %.3e\n", res.r_stationary_P);
  std::printf("gain stationarity residual     %.3e\n", res.r_stationary_F);
  std::printf("max residual                   %.3e (tolerance 1e-6)\n", res.max());
  return res.max() < 1e-6 ? 0 : 1;
}

int run_duality_check(const RunArgs& args) {
  const ExperimentConfig cfg = load_config(args.config_path);
  const auto sol = solve_are(cfg.sys, cfg.cost, cfg.F0);
  const Matrix<double> P = optimal_P(cfg.sys, cfg.cost, sol.X);
  const Matrix<double> Gamma = excitation_gram(cfg);
  const Matrix<double> S = closed_form_S(cfg.sys, sol.F, Gamma, cfg.cost.gamma);
  const double primal = primal_objective(S, Matrix<double>(cfg.cost.stage_weight()));
  const double dual = dual_objective(P, sol.F, Gamma, cfg.sys.noise_cov, cfg.cost.gamma);
  std::printf("primal objective %.12g\n", primal);
  std::printf("dual objective   %.12g\n", dual);
  std::printf("gap              %.3e (tolerance 1e-6)\n", primal - dual);
  return std::abs(primal - dual) < 1e-6 ? 0 : 1;
}

int run_reproduce(const std::string& target) {
  if (target != "example1")
    throw ConfigError("unknown reproduction target '" + target + "' (available: example1)");
  const Example1Result result = run_example1();
  std::printf("scalar benchmark, policy iteration trace\n");
  std::printf("  s        F^s        X^s\n");
  for (const auto& step : result.pi.trace.steps)
    std::printf("  %d  %9.6f  %9.6f\n", step.s, step.gain(0, 0), step.value(0, 0));
  std::printf("table deviation %.3e (tolerance 5e-4)\n\n", result.pi_table_deviation);

  std::printf("scalar benchmark, dual iteration trace\n");
  std::printf("  s      F_p^s    P_p^s(1,1)  P_p^s(1,2)  P_p^s(2,2)       X_p^s\n");
  for (std::size_t i = 0; i < result.pd.trace.steps.size(); ++i) {
    const auto& step = result.pd.trace.steps[i];
    const Matrix<double> Fbar =
        gain_stack(Matrix<double>(result.pd.trace.gain_before(i)));
    const Matrix<double> Xp = Fbar.transpose() * step.value * Fbar;
    std::printf("  %d  %9.6f   %9.6f   %9.6f   %9.6f   %9.6f\n", step.s, step.gain(0, 0),
                step.value(0, 0), step.value(0, 1), step.value(1, 1), Xp(0, 0));
  }
  std::printf("table deviation %.3e (tolerance 5e-4)\n\n", result.pd_table_deviation);

  std::printf("per-step gain deviation between the traces  %.3e\n",
              result.equivalence.max_gain_deviation);
  std::printf("per-step value deviation between the traces %.3e\n",
              result.equivalence.max_value_deviation);
  const bool pass = result.tables_match && result.equivalence.max_gain_deviation < 1e-9;
  std::printf("status: %s\n", pass ? "PASS" : "FAIL");
  return pass ? 0 : 1;
}

int run_sweep_cmd(const RunArgs& args) {
  ExperimentConfig cfg = load_config(args.config_path);
  if (args.seed_set) cfg.seed = args.seed;
  if (emit_format_from_name(args.format) != EmitFormat::Csv)
    throw ConfigError("sweep emits plot-ready csv only");
  const SweepResult sweep = run_sweep(cfg);
  const std::string text = sweep_to_csv(sweep);
  if (args.out.empty())
    std::cout << text;
  else
    write_text_file(args.out, text);
  std::fprintf(stderr, "sweep of %s over %zu noise levels, %d repetitions each\n",
               sweep.algorithm.c_str(), sweep.per_alpha.size(), cfg.Y);
  const auto terminal = sweep.terminal_errors();
  for (std::size_t a = 0; a < terminal.size(); ++a)
    std::fprintf(stderr, "  alpha %-6g terminal mean error %.4e  (failures %zu)\n",
                 sweep.per_alpha[a].alpha, terminal[a],
                 sweep.per_alpha[a].failed_seeds.size());
  if (terminal.size() >= 2)
    std::fprintf(stderr, "  rank correlation of terminal error vs alpha: %.4f\n",
                 spearman_rank_correlation(cfg.alpha_grid, terminal));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discounted stochastic LQR synthesis and verification toolkit"};
  app.require_subcommand(1);

  RunArgs args;
  std::string reproduce_target;

  CLI::App* cmd_solve = app.add_subcommand("solve-are", "solve the Riccati equation");
  cmd_solve->add_option("--config", args.config_path, "JSON experiment config")->required();

  CLI::App* cmd_pi = app.add_subcommand("pi", "model-based policy iteration");
  CLI::App* cmd_mbpd = app.add_subcommand("mb-pd", "model-based dual iteration");
  CLI::App* cmd_oppi = app.add_subcommand("mf-oppi", "off-policy model-free policy iteration");
  CLI::App* cmd_pdmf = app.add_subcommand("mb-pd-mf", "trajectory-driven dual iteration");
  for (CLI::App* cmd : {cmd_pi, cmd_mbpd, cmd_oppi, cmd_pdmf}) add_common_options(cmd, args);

  CLI::App* cmd_kkt = app.add_subcommand("kkt-check", "optimality residuals at the Riccati solution");
  cmd_kkt->add_option("--config", args.config_path, "JSON experiment config")->required();

  CLI::App* cmd_dual = app.add_subcommand("duality-check", "primal and dual objectives at the optimum");
  cmd_dual->add_option("--config", args.config_path, "JSON experiment config")->required();

  CLI::App* cmd_repro = app.add_subcommand("reproduce", "rerun a frozen benchmark table");
  cmd_repro->add_option("target", reproduce_target, "benchmark name (example1)")->required();

  CLI::App* cmd_sweep = app.add_subcommand("sweep", "Monte-Carlo sweep over noise variance");
  add_common_options(cmd_sweep, args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(cmd_solve)) return run_solve_are(args);
    if (app.got_subcommand(cmd_pi)) return run_algorithm("pi", args);
    if (app.got_subcommand(cmd_mbpd)) return run_algorithm("mb-pd", args);
    if (app.got_subcommand(cmd_oppi)) return run_algorithm("mf-oppi", args);
    if (app.got_subcommand(cmd_pdmf)) return run_algorithm("mb-pd-mf", args);
    if (app.got_subcommand(cmd_kkt)) return run_kkt_check(args);
    if (app.got_subcommand(cmd_dual)) return run_duality_check(args);
    if (app.got_subcommand(cmd_repro)) return run_reproduce(reproduce_target);
    if (app.got_subcommand(cmd_sweep)) return run_sweep_cmd(args);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
