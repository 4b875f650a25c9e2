#include "cinn/run_config.hpp"

#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "cinn/error.hpp"

namespace cinn::config {

namespace {

[[noreturn]] void bad(const YAML::Node& n, const std::string& what) {
  const auto mark = n.Mark();
  std::string where = mark.is_null() ? "" : " (line " + std::to_string(mark.line + 1) + ")";
  throw Error(ErrorKind::kInput, "config: " + what + where);
}

template <typename T>
void read(const YAML::Node& parent, const char* key, T& out) {
  const auto n = parent[key];
  if (!n) return;
  try {
    out = n.as<T>();
  } catch (const YAML::Exception&) {
    bad(n, std::string("bad value for '") + key + "'");
  }
}

void check_keys(const YAML::Node& n, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!n.IsMap()) bad(n, "'" + section + "' must be a mapping");
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) bad(kv.first, "unknown key '" + key + "' in " + section);
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

graph::RefinementScript read_edits(const YAML::Node& n, const std::filesystem::path& base) {
  if (!n) return {};
  if (n.IsScalar()) return graph::load_refinement(resolve(base, n.as<std::string>()));
  if (!n.IsSequence()) bad(n, "edits must be a file path or a list of 'remove|add|reverse i j' lines");
  std::string text;
  for (const auto& e : n) text += e.as<std::string>() + "\n";
  return graph::parse_refinement(text);
}

model::DomainPrior read_prior(const YAML::Node& n) {
  if (n.IsScalar()) return model::parse_prior(n.as<std::string>());
  check_keys(n, "prior", {"cause", "effect", "relation", "bound", "margin"});
  model::DomainPrior p;
  if (!n["cause"] || !n["effect"] || !n["relation"]) bad(n, "prior needs cause, effect and relation");
  read(n, "cause", p.cause);
  read(n, "effect", p.effect);
  const auto rel = n["relation"].as<std::string>();
  if (rel == "<=") {
    p.relation = model::Relation::kAtMost;
  } else if (rel == ">=") {
    p.relation = model::Relation::kAtLeast;
  } else if (rel == "=" || rel == "==") {
    p.relation = model::Relation::kEqual;
  } else {
    bad(n["relation"], "relation must be <=, >= or =");
  }
  read(n, "bound", p.bound);
  read(n, "margin", p.margin);
  if (!(p.margin >= 0.0)) bad(n, "prior margin must be >= 0");
  return p;
}

std::vector<model::DomainPrior> read_priors(const YAML::Node& n) {
  std::vector<model::DomainPrior> out;
  if (!n) return out;
  if (!n.IsSequence()) bad(n, "priors must be a list");
  for (const auto& p : n) out.push_back(read_prior(p));
  return out;
}

}  // namespace

RunConfig parse_run_config(const std::string& yaml_text, const std::filesystem::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw Error(ErrorKind::kInput, std::string("config: ") + e.what());
  }
  if (!root.IsMap()) throw Error(ErrorKind::kInput, "config: top level must be a mapping");
  check_keys(root, "config", {"dataset", "discovery", "dag", "refinement", "priors", "training", "baselines",
                              "folds", "val_fraction", "seed", "jobs", "ablation", "output"});
  RunConfig cfg;

  const auto ds = root["dataset"];
  if (!ds) throw Error(ErrorKind::kInput, "config: missing 'dataset' section");
  check_keys(ds, "dataset", {"path", "target", "categorical"});
  if (!ds["path"]) bad(ds, "dataset.path is required");
  if (!ds["target"]) bad(ds, "dataset.target is required");
  cfg.dataset_path = resolve(base_dir, ds["path"].as<std::string>());
  read(ds, "target", cfg.schema.target);
  read(ds, "categorical", cfg.schema.categorical);

  if (const auto d = root["discovery"]) {
    check_keys(d, "discovery", {"lambda", "tau", "penalty_init", "penalty_growth", "penalty_max", "max_outer_iters",
                                "max_inner_iters", "grad_tol", "acyclicity_tol", "fraction"});
    read(d, "lambda", cfg.discovery.lambda);
    read(d, "tau", cfg.discovery.tau);
    read(d, "penalty_init", cfg.discovery.penalty_init);
    read(d, "penalty_growth", cfg.discovery.penalty_growth);
    read(d, "penalty_max", cfg.discovery.penalty_max);
    read(d, "max_outer_iters", cfg.discovery.max_outer_iters);
    read(d, "max_inner_iters", cfg.discovery.max_inner_iters);
    read(d, "grad_tol", cfg.discovery.grad_tol);
    read(d, "acyclicity_tol", cfg.discovery.acyclicity_tol);
    read(d, "fraction", cfg.discovery_fraction);
    cfg.discovery.validate();
    if (!(cfg.discovery_fraction > 0.0 && cfg.discovery_fraction <= 1.0)) bad(d, "discovery.fraction must be in (0, 1]");
  }

  if (root["dag"]) cfg.dag_path = resolve(base_dir, root["dag"].as<std::string>());
  cfg.refinement = read_edits(root["refinement"], base_dir);
  cfg.priors = read_priors(root["priors"]);

  if (const auto t = root["training"]) {
    check_keys(t, "training", {"learning_rate", "epochs", "patience", "batch_size", "gamma", "pcgrad",
                               "pcgrad_granular", "promote_isolated", "widths"});
    auto& tc = cfg.training;
    read(t, "learning_rate", tc.learning_rate);
    read(t, "epochs", tc.epochs);
    read(t, "patience", tc.patience);
    read(t, "batch_size", tc.batch_size);
    read(t, "gamma", tc.gamma);
    read(t, "pcgrad", tc.use_pcgrad);
    read(t, "pcgrad_granular", tc.pcgrad_granular);
    read(t, "promote_isolated", tc.promote_isolated);
    if (const auto w = t["widths"]) {
      check_keys(w, "training.widths", {"trunk", "branch_b", "branch_o", "fusion"});
      read(w, "trunk", tc.widths.trunk);
      read(w, "branch_b", tc.widths.branch_b);
      read(w, "branch_o", tc.widths.branch_o);
      read(w, "fusion", tc.widths.fusion);
    }
  }
  if (const auto b = root["baselines"]) {
    check_keys(b, "baselines", {"models", "l1_alpha", "l2_alpha", "dropout", "noise_sigma"});
    auto& tc = cfg.training;
    read(b, "l1_alpha", tc.l1_alpha);
    read(b, "l2_alpha", tc.l2_alpha);
    read(b, "dropout", tc.dropout);
    read(b, "noise_sigma", tc.noise_sigma);
    if (const auto m = b["models"]) {
      if (!m.IsSequence()) bad(m, "baselines.models must be a list");
      for (const auto& k : m) {
        const auto kind = train::parse_model_kind(k.as<std::string>());
        if (kind == train::ModelKind::kCinn) bad(k, "'cinn' is not a baseline");
        cfg.baselines.push_back(kind);
      }
    }
  }
  read(root, "folds", cfg.folds);
  read(root, "val_fraction", cfg.val_fraction);
  read(root, "seed", cfg.training.seed);
  read(root, "jobs", cfg.jobs);
  if (cfg.folds < 2) throw Error(ErrorKind::kInput, "config: folds must be >= 2");
  if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0)) throw Error(ErrorKind::kInput, "config: val_fraction must be in [0, 1)");
  if (cfg.jobs < 1) throw Error(ErrorKind::kInput, "config: jobs must be >= 1");
  cfg.training.validate();

  if (const auto a = root["ablation"]) {
    if (!a.IsSequence()) bad(a, "ablation must be a list of steps");
    for (const auto& s : a) {
      check_keys(s, "ablation step", {"label", "edits", "priors"});
      train::AblationStep step;
      read(s, "label", step.label);
      step.edits = read_edits(s["edits"], base_dir);
      step.priors = read_priors(s["priors"]);
      cfg.ablation.push_back(std::move(step));
    }
  }
  if (root["output"]) cfg.output = resolve(base_dir, root["output"].as<std::string>());
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kInput, "cannot open config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  auto cfg = parse_run_config(ss.str(), path.parent_path());
  cfg.source = path;
  return cfg;
}

void check_files(const RunConfig& cfg) {
  if (!std::filesystem::exists(cfg.dataset_path)) {
    throw Error(ErrorKind::kInput, "dataset file not found: " + cfg.dataset_path.string());
  }
  if (cfg.dag_path && !std::filesystem::exists(*cfg.dag_path)) {
    throw Error(ErrorKind::kInput, "DAG file not found: " + cfg.dag_path->string());
  }
}

}  // namespace cinn::config
