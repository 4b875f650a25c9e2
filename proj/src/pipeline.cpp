#include "cinn/pipeline.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "cinn/error.hpp"
#include "cinn/model.hpp"

namespace cinn::pipeline {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kInput, "cannot write " + path.string());
  out << text;
}

data::IndexList all_rows(std::size_t n) {
  data::IndexList rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

graph::CausalDag refined(const config::RunConfig& cfg, const Prepared& p) {
  return graph::apply_refinement(base_dag(cfg, p), cfg.refinement);
}

model::CinnArchitecture compile(const config::RunConfig& cfg, const Prepared& p, const graph::CausalDag& dag) {
  auto arch = model::CinnArchitecture::compile(graph::partition_dag(dag), dag, p.target, cfg.training.widths,
                                                    cfg.training.promote_isolated);
  for (const auto& prior : cfg.priors) arch.validate_prior(prior);
  return arch;
}

void save_models(const config::RunConfig& cfg, const train::CvResult& r) {
  fs::create_directories(models_dir(cfg));
  for (const auto& f : r.folds) {
    const auto stem = models_dir(cfg) / (r.model + "_fold" + std::to_string(f.fold));
    f.params.save(stem.string() + ".params", stem.string() + ".manifest");
  }
}

void write_reports(const config::RunConfig& cfg, const std::string& name, const std::vector<train::CvResult>& results) {
  write_text(reports_dir(cfg) / (name + ".json"), train::results_json(results));
  write_text(reports_dir(cfg) / (name + ".timing.json"), train::timing_json(results));
  write_text(reports_dir(cfg) / (name + ".txt"), train::format_table(results));
}

}  // namespace

fs::path discovery_dir(const config::RunConfig& cfg) { return cfg.output / "discovery"; }
fs::path dag_dir(const config::RunConfig& cfg) { return cfg.output / "dag"; }
fs::path models_dir(const config::RunConfig& cfg) { return cfg.output / "models"; }
fs::path reports_dir(const config::RunConfig& cfg) { return cfg.output / "reports"; }

std::vector<train::FoldData> standardize_folds(const data::TabularDataset& table,
                                               const std::vector<data::FoldSplit>& splits) {
  const auto global = data::fit_preprocess(table, all_rows(table.n_rows()));
  std::vector<train::FoldData> folds;
  for (const auto& s : splits) {
    auto plan = data::fit_preprocess(table, s.train_indices);
    for (std::size_t c = 0; c < plan.columns.size(); ++c)
      if (plan.columns[c].kind == data::ColumnKind::kCategorical) plan.columns[c].vocabulary = global.columns[c].vocabulary;
    folds.push_back({data::apply_preprocess(plan, table, s.train_indices), data::apply_preprocess(plan, table, s.val_indices),
                     data::apply_preprocess(plan, table, s.test_indices)});
  }
  return folds;
}

Prepared prepare(const config::RunConfig& cfg) {
  config::check_files(cfg);
  Prepared p;
  p.table = data::load_csv(cfg.dataset_path, cfg.schema);
  if (p.table.column_kinds[p.table.target_column] != data::ColumnKind::kContinuous) {
    throw Error(ErrorKind::kData, "target column '" + cfg.schema.target + "' must be continuous");
  }
  const auto global = data::fit_preprocess(p.table, all_rows(p.table.n_rows()));
  p.vertex_names = global.encoded_names();
  p.target = global.encoded_offset(p.table.target_column);
  p.splits = data::make_folds(p.table.n_rows(), cfg.folds, cfg.training.seed, cfg.val_fraction);
  p.folds = standardize_folds(p.table, p.splits);
  return p;
}

DiscoveryOutcome run_discovery(const config::RunConfig& cfg, const data::TabularDataset& table) {
  const auto rows = cfg.discovery_fraction >= 1.0
                        ? all_rows(table.n_rows())
                        : data::holdout_split(table.n_rows(), cfg.discovery_fraction, cfg.training.seed).first;
  const auto plan = data::fit_preprocess(table, rows);
  const auto x = data::apply_preprocess(plan, table, rows);
  DiscoveryOutcome out;
  out.rows_used = rows.size();
  out.result = discovery::discover(x, cfg.discovery);
  out.dag = discovery::threshold_to_dag(out.result.w, cfg.discovery.tau, plan.encoded_names());
  return out;
}

graph::CausalDag base_dag(const config::RunConfig& cfg, const Prepared& prepared) {
  const auto path = cfg.dag_path ? *cfg.dag_path : discovery_dir(cfg) / "dag.txt";
  if (!fs::exists(path)) {
    throw Error(ErrorKind::kInput, "no DAG at " + path.string() + " (run 'discover' first or set 'dag' in the config)");
  }
  auto dag = graph::load_dag(path);
  if (dag.n_vertices() != prepared.vertex_names.size()) {
    throw Error(ErrorKind::kGraph, "DAG " + path.string() + " has " + std::to_string(dag.n_vertices()) +
                                       " vertices but the dataset encodes " + std::to_string(prepared.vertex_names.size()) +
                                       " columns");
  }
  if (dag.names().empty()) dag = graph::CausalDag(dag.n_vertices(), dag.edges(), prepared.vertex_names);
  return dag;
}

std::string cmd_discover(const config::RunConfig& cfg) {
  config::check_files(cfg);
  const auto table = data::load_csv(cfg.dataset_path, cfg.schema);
  const auto out = run_discovery(cfg, table);
  discovery::save_matrix(out.result.w.values(), discovery_dir(cfg) / "W.txt");
  graph::save_dag(out.dag, discovery_dir(cfg) / "dag.txt");
  nlohmann::ordered_json summary{{"rows", out.rows_used},
                                 {"vertices", out.dag.n_vertices()},
                                 {"edges", out.dag.n_edges()},
                                 {"h", out.result.h},
                                 {"objective", out.result.objective},
                                 {"penalty", out.result.penalty},
                                 {"outer_iterations", out.result.outer_iterations},
                                 {"inner_iterations", out.result.inner_iterations},
                                 {"lambda", cfg.discovery.lambda},
                                 {"tau", cfg.discovery.tau}};
  write_text(discovery_dir(cfg) / "summary.json", summary.dump(2) + "\n");
  std::ostringstream msg;
  msg << "discovered " << out.dag.n_edges() << " edges over " << out.dag.n_vertices() << " variables (h(W) = " << out.result.h
      << ", objective = " << out.result.objective << ")\n";
  for (const auto& [i, j] : out.dag.edges()) msg << "  " << i << " -> " << j << "  " << out.dag.name(i) << " -> " << out.dag.name(j) << '\n';
  msg << "wrote " << (discovery_dir(cfg) / "dag.txt").string() << '\n';
  return msg.str();
}

std::string cmd_refine(const config::RunConfig& cfg) {
  const auto p = prepare(cfg);
  const auto dag = refined(cfg, p);
  const auto arch = compile(cfg, p, dag);
  graph::save_dag(dag, dag_dir(cfg) / "refined.dag");
  write_text(dag_dir(cfg) / "architecture.txt", arch.summary());
  return arch.summary() + "wrote " + (dag_dir(cfg) / "refined.dag").string() + "\n";
}

std::string cmd_train(const config::RunConfig& cfg, std::optional<train::ModelKind> baseline) {
  const auto p = prepare(cfg);
  std::vector<train::CvResult> results;
  std::string name;
  if (baseline && *baseline != train::ModelKind::kCinn) {
    auto tc = cfg.training;
    tc.baseline = *baseline;
    results.push_back(train::cross_validate(train::to_string(*baseline), p.folds.size(), [&](std::size_t f) {
      return train::train_baseline_mlp(p.folds[f], p.target, tc, f);
    }, cfg.jobs));
    name = "train_" + train::to_string(*baseline);
  } else {
    const auto dag = refined(cfg, p);
    const auto arch = compile(cfg, p, dag);
    graph::save_dag(dag, dag_dir(cfg) / "refined.dag");
    write_text(dag_dir(cfg) / "architecture.txt", arch.summary());
    const std::string label = cfg.training.use_pcgrad ? "cinn" : "cinn-no-pcgrad";
    results.push_back(train::cross_validate(label, p.folds.size(), [&](std::size_t f) {
      return train::train_cinn(arch, p.folds[f], cfg.priors, cfg.training, f);
    }, cfg.jobs));
    name = "train_" + label;
  }
  save_models(cfg, results.front());
  write_reports(cfg, name, results);
  return train::format_table(results);
}

std::string cmd_evaluate(const config::RunConfig& cfg) {
  const auto p = prepare(cfg);
  const auto dag = refined(cfg, p);
  const auto arch = compile(cfg, p, dag);
  std::vector<train::CvResult> results;
  const std::string label = cfg.training.use_pcgrad ? "cinn" : "cinn-no-pcgrad";
  results.push_back(train::cross_validate(label, p.folds.size(), [&](std::size_t f) {
    return train::train_cinn(arch, p.folds[f], cfg.priors, cfg.training, f);
  }, cfg.jobs));
  for (auto kind : cfg.baselines) {
    auto tc = cfg.training;
    tc.baseline = kind;
    results.push_back(train::cross_validate(train::to_string(kind), p.folds.size(), [&](std::size_t f) {
      return train::train_baseline_mlp(p.folds[f], p.target, tc, f);
    }, cfg.jobs));
  }
  write_reports(cfg, "evaluation", results);
  return train::format_table(results);
}

std::string cmd_ablate(const config::RunConfig& cfg) {
  if (cfg.ablation.empty()) throw Error(ErrorKind::kInput, "config has no 'ablation' steps");
  const auto p = prepare(cfg);
  const auto rows = train::run_ablation(base_dag(cfg, p), p.target, cfg.ablation, p.folds, cfg.training, cfg.jobs);
  write_text(reports_dir(cfg) / "ablation.json", train::ablation_json(rows));
  write_text(reports_dir(cfg) / "ablation.txt", train::format_ablation(rows));
  return train::format_ablation(rows);
}

}  // namespace cinn::pipeline
