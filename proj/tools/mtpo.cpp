#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mtpo/experiment.hpp"
#include "mtpo/io.hpp"

// Command-line front end: validate, solve, nash, pg-train, compare, report.

namespace {

int exit_code_for(const std::exception& e, int code) {
  std::cerr << "error: " << e.what() << "\n";
  return code;
}

mtpo::GeneratedEnv env_from_config(const mtpo::ExperimentConfig& cfg) {
  return mtpo::detail::build_environment(cfg.raw.at("environment"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular multi-turn preference-based RL solver"};
  app.require_subcommand(1);

  std::string cmdp_file, config_file, experiment_dir;

  auto* validate = app.add_subcommand("validate", "Validate a CMDP file");
  validate->add_option("cmdp-file", cmdp_file, "CMDP JSON document")->required();

  auto* solve = app.add_subcommand("solve", "Run the configured solvers");
  solve->add_option("config", config_file, "Experiment config JSON")->required();

  auto* nash = app.add_subcommand("nash", "Certify the Nash equilibrium");
  nash->add_option("config", config_file, "Experiment config JSON")->required();

  auto* pg = app.add_subcommand("pg-train", "Policy-gradient training run");
  pg->add_option("config", config_file, "Experiment config JSON")->required();

  auto* compare = app.add_subcommand("compare", "Side-by-side preference matrix");
  compare->add_option("config", config_file, "Experiment config JSON")->required();

  auto* report = app.add_subcommand("report", "Summarize a completed experiment directory");
  report->add_option("dir", experiment_dir, "Experiment output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) {
      try {
        mtpo::io::load_cmdp(cmdp_file);
      } catch (const mtpo::ValidationError& e) {
        std::cerr << e.what() << "\n";
        return 1;
      }
      std::cout << "valid\n";
      return 0;
    }

    if (solve->parsed() || compare->parsed()) {
      const auto cfg = mtpo::load_experiment_config(config_file);
      const bool ok = mtpo::run_experiment(cfg);
      std::cout << (ok ? "complete" : "failed") << ": " << cfg.output_dir.string() << "\n";
      return ok ? 0 : 1;
    }

    if (nash->parsed()) {
      const auto cfg = mtpo::load_experiment_config(config_file);
      const auto env = env_from_config(cfg);
      const auto& nj = cfg.raw.at("nash");
      const auto cert = mtpo::nash_solve(env.cmdp, env.preference, nj.value("alpha", 0.1),
                                         nj.value("tolerance", 1e-8), nj.value("cap", 100000));
      std::cout << "residual " << cert.residual << ", exploitability " << cert.exploitability
                << ", iterations " << cert.iterations_used << "\n";
      return 0;
    }

    if (pg->parsed()) {
      const auto cfg = mtpo::load_experiment_config(config_file);
      const auto env = env_from_config(cfg);
      const auto& pj = cfg.raw.at("pg");
      mtpo::PgConfig pc;
      pc.alpha = pj.value("alpha", 0.1);
      pc.gae_lambda = pj.value("gae_lambda", 1.0);
      pc.batch_size = pj.value("batch_size", 8);
      pc.policy_lr = pj.value("policy_lr", 0.05);
      pc.value_lr = pj.value("value_lr", 0.1);
      pc.normalize_advantage = pj.value("normalize_advantage", false);
      pc.steps = pj.value("steps", 50000);
      pc.eval_interval = pj.value("eval_interval", 1000);
      pc.seed = pj.value("seed", 0);
      const auto cert = mtpo::nash_solve(env.cmdp, env.preference, pc.alpha);
      const auto trace = mtpo::pg_train(env.cmdp, env.preference, cert.policy, pc);
      std::filesystem::create_directories(cfg.output_dir);
      mtpo::io::write_file((cfg.output_dir / "pg_trace.csv").string(),
                           mtpo::pg_trace_csv(trace));
      std::cout << "final exploitability " << trace.records.back().exploitability << "\n";
      return 0;
    }

    if (report->parsed()) {
      std::cout << mtpo::report(experiment_dir);
      return 0;
    }
  } catch (const mtpo::io::FormatError& e) {
    return exit_code_for(e, 2);
  } catch (const mtpo::ValidationError& e) {
    return exit_code_for(e, 2);
  } catch (const std::exception& e) {
    return exit_code_for(e, 1);
  }
  return 0;
}
