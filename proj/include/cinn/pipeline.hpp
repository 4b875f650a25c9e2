#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cinn/dataset.hpp"
#include "cinn/discovery.hpp"
#include "cinn/graph.hpp"
#include "cinn/run_config.hpp"
#include "cinn/trainer.hpp"

namespace cinn::pipeline {

// Dataset loaded and split into standardized folds; columns are DAG vertices.
struct Prepared {
  data::TabularDataset table;
  std::vector<std::string> vertex_names;
  graph::Vertex target = 0;
  std::vector<data::FoldSplit> splits;
  std::vector<train::FoldData> folds;
};

// Preprocessing is refit on each fold's training rows. Category vocabularies
// come from the full table so every fold has the same encoded layout.
std::vector<train::FoldData> standardize_folds(const data::TabularDataset& table,
                                               const std::vector<data::FoldSplit>& splits);

Prepared prepare(const config::RunConfig& cfg);

struct DiscoveryOutcome {
  discovery::DiscoveryResult result;
  graph::CausalDag dag;
  std::size_t rows_used = 0;
};

DiscoveryOutcome run_discovery(const config::RunConfig& cfg, const data::TabularDataset& table);

// cfg.dag_path if set, otherwise <output>/discovery/dag.txt.
graph::CausalDag base_dag(const config::RunConfig& cfg, const Prepared& prepared);

// Output layout under cfg.output.
std::filesystem::path discovery_dir(const config::RunConfig& cfg);
std::filesystem::path dag_dir(const config::RunConfig& cfg);
std::filesystem::path models_dir(const config::RunConfig& cfg);
std::filesystem::path reports_dir(const config::RunConfig& cfg);

// Each command writes its artifacts and returns a human-readable summary.
std::string cmd_discover(const config::RunConfig& cfg);
std::string cmd_refine(const config::RunConfig& cfg);
// Trains CINN, or only the given baseline.
std::string cmd_train(const config::RunConfig& cfg, std::optional<train::ModelKind> baseline = std::nullopt);
// CINN and every configured baseline on the same folds.
std::string cmd_evaluate(const config::RunConfig& cfg);
std::string cmd_ablate(const config::RunConfig& cfg);

}  // namespace cinn::pipeline
