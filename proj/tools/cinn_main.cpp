#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cinn/error.hpp"
#include "cinn/pipeline.hpp"
#include "cinn/run_config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Causality-informed neural network pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<double> gamma;
  std::optional<double> lr;
  std::string baseline;
  bool no_pcgrad = false;
  app.add_option("--config,-c", config_path, "Run config (YAML)")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Master seed for folds, init, noise and PCGrad order");
  app.add_option("--jobs,-j", jobs, "Folds trained in parallel")->check(CLI::PositiveNumber);
  app.add_option("--gamma", gamma, "Weight of the domain-prior loss");
  app.add_option("--lr", lr, "Adam learning rate");
  app.add_option("--baseline", baseline, "Train only this baseline: early-stop, l1, l2, dropout, noise");
  app.add_flag("--no-pcgrad", no_pcgrad, "Sum the loss gradients instead of projecting conflicts");

  auto* discover = app.add_subcommand("discover", "Learn a weighted DAG and threshold it");
  auto* refine = app.add_subcommand("refine", "Apply the refinement script and compile the architecture");
  auto* train = app.add_subcommand("train", "Cross-validate CINN (or one baseline)");
  auto* evaluate = app.add_subcommand("evaluate", "Cross-validate CINN and all configured baselines on the same folds");
  auto* ablate = app.add_subcommand("ablate", "Run the incremental-knowledge ablation steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // usage errors share the invalid-input exit code
    return app.exit(e) == 0 ? 0 : cinn::Error(cinn::ErrorKind::kInput, "").exit_code();
  }

  try {
    auto cfg = cinn::config::load_run_config(config_path);
    if (seed) cfg.training.seed = *seed;
    if (jobs) cfg.jobs = *jobs;
    if (gamma) cfg.training.gamma = *gamma;
    if (lr) cfg.training.learning_rate = *lr;
    if (no_pcgrad) cfg.training.use_pcgrad = false;
    cfg.training.validate();
    std::optional<cinn::train::ModelKind> only;
    if (!baseline.empty()) only = cinn::train::parse_model_kind(baseline);

    if (discover->parsed()) {
      std::cout << cinn::pipeline::cmd_discover(cfg);
    } else if (refine->parsed()) {
      std::cout << cinn::pipeline::cmd_refine(cfg);
    } else if (train->parsed()) {
      std::cout << cinn::pipeline::cmd_train(cfg, only);
    } else if (evaluate->parsed()) {
      std::cout << cinn::pipeline::cmd_evaluate(cfg);
    } else if (ablate->parsed()) {
      std::cout << cinn::pipeline::cmd_ablate(cfg);
    }
  } catch (const cinn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
