#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cinn/dataset.hpp"
#include "cinn/discovery.hpp"
#include "cinn/graph.hpp"
#include "cinn/model.hpp"
#include "cinn/trainer.hpp"

namespace cinn::config {

struct RunConfig {
  std::filesystem::path source;  // the config file itself, empty when parsed from text

  std::filesystem::path dataset_path;
  data::Schema schema;

  discovery::DiscoveryConfig discovery;
  double discovery_fraction = 0.8;  // share of rows used for structure learning

  std::optional<std::filesystem::path> dag_path;  // skips discovery when set
  graph::RefinementScript refinement;
  std::vector<model::DomainPrior> priors;

  train::TrainConfig training;
  std::vector<train::ModelKind> baselines;
  std::size_t folds = 10;
  double val_fraction = 0.1;
  int jobs = 1;

  std::vector<train::AblationStep> ablation;

  std::filesystem::path output = "runs/out";
};

// Relative paths are resolved against `base_dir`.
RunConfig parse_run_config(const std::string& yaml_text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Throws Error(kInput) if a referenced file is missing.
void check_files(const RunConfig& cfg);

}  // namespace cinn::config
