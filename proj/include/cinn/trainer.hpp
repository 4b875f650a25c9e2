#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cinn/autodiff.hpp"
#include "cinn/graph.hpp"
#include "cinn/model.hpp"

namespace cinn::train {

using ad::Matrix;
using ad::ParamStore;
using ad::Vector;

enum class ModelKind { kCinn, kEarlyStop, kL1, kL2, kDropout, kInputNoise };

std::string to_string(ModelKind k);
// Accepts cinn, early-stop, l1, l2, dropout, noise (or input-noise).
ModelKind parse_model_kind(const std::string& s);

struct TrainConfig {
  double learning_rate = 0.001;
  int epochs = 800;
  int patience = 30;
  std::size_t batch_size = 0;  // 0 = full batch
  double gamma = 1.0;
  bool use_pcgrad = true;
  bool pcgrad_granular = false;
  std::uint64_t seed = 0;
  ModelKind baseline = ModelKind::kEarlyStop;  // used by train_baseline_mlp
  double l1_alpha = 1e-3;
  double l2_alpha = 1e-3;
  double dropout = 0.2;
  double noise_sigma = 0.1;
  model::Widths widths;
  bool promote_isolated = false;  // feed isolated variables to CINN as roots

  void validate() const;
};

struct TrainReport {
  std::string model;
  std::size_t fold = 0;
  std::vector<double> train_loss;  // per epoch, mean objective over the epoch's steps
  std::vector<double> val_mse;     // per epoch, target-only
  int best_epoch = 0;              // 1-based
  int epochs_run = 0;
  double best_val_mse = 0.0;
  double test_mse = 0.0;
  double seconds = 0.0;
  ParamStore params;  // best-epoch parameters
};

// Standardized splits whose columns are DAG vertices.
struct FoldData {
  Matrix train;
  Matrix val;
  Matrix test;
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(Vector& theta, const Vector& grad);
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  Vector m_, v_;
  long t_ = 0;
};

TrainReport train_cinn(const model::CinnArchitecture& arch, const FoldData& data,
                       const std::vector<model::DomainPrior>& priors, const TrainConfig& cfg,
                       std::size_t fold_index = 0);

// All non-target columns -> trunk -> 16 -> 8 -> target, regularized per cfg.baseline.
TrainReport train_baseline_mlp(const FoldData& data, graph::Vertex target, const TrainConfig& cfg,
                               std::size_t fold_index = 0);

struct CvResult {
  std::string model;
  std::vector<TrainReport> folds;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over folds
};

using FoldTrainer = std::function<TrainReport(std::size_t fold_index)>;

// Runs fold_trainer(0..n_folds-1) on up to `jobs` threads; results are ordered by fold.
CvResult cross_validate(const std::string& label, std::size_t n_folds, const FoldTrainer& fold_trainer, int jobs = 1);

struct AblationStep {
  std::string label;
  graph::RefinementScript edits;             // added at this step
  std::vector<model::DomainPrior> priors;    // added at this step
};

struct AblationRow {
  std::string label;
  std::size_t n_edges = 0;
  std::size_t n_priors = 0;
  CvResult result;
};

// Step k applies the edits and priors of steps 1..k to `base`.
std::vector<AblationRow> run_ablation(const graph::CausalDag& base, graph::Vertex target,
                                      const std::vector<AblationStep>& steps, const std::vector<FoldData>& folds,
                                      const TrainConfig& cfg, int jobs = 1);

// One record per model x fold; wall-clock time is left out so reruns compare byte for byte.
std::string results_json(const std::vector<CvResult>& results);
std::string ablation_json(const std::vector<AblationRow>& rows);
std::string timing_json(const std::vector<CvResult>& results);
std::string format_table(const std::vector<CvResult>& results);
std::string format_ablation(const std::vector<AblationRow>& rows);

}  // namespace cinn::train
