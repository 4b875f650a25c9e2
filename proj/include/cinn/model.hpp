#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cinn/autodiff.hpp"
#include "cinn/graph.hpp"

namespace cinn::model {

using ad::Matrix;
using ad::ParamStore;
using ad::Vector;
using graph::Vertex;

struct Widths {
  Eigen::Index trunk = 32;     // r
  Eigen::Index branch_b = 16;  // q, feeds intermediate heads
  Eigen::Index branch_o = 16;  // u, feeds the output side
  Eigen::Index fusion = 8;     // s
};

enum class Relation { kAtMost, kAtLeast, kEqual };

// d(effect)/d(cause) compared against `bound` with tolerance `margin`.
struct DomainPrior {
  Vertex cause = 0;
  Vertex effect = 0;
  Relation relation = Relation::kAtMost;
  double bound = 0.0;
  double margin = 0.01;

  bool operator==(const DomainPrior&) const = default;
};

std::string format_prior(const DomainPrior& p);
// "d13/d12 <= 0 eps 0.01", "d11/d4 >= -0.5", "d3/d1 = 0 eps 0.05"; eps defaults to 0.01.
DomainPrior parse_prior(const std::string& text);

struct LossBreakdown {
  double mse_b = 0.0;
  double mse_o = 0.0;
  double domain = 0.0;
  double gamma = 0.0;
  double total = 0.0;
};

LossBreakdown total_loss(double mse_b, double mse_o, double domain, double gamma);

// One named parameter block of the compiled network.
struct ParamSpec {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
  bool weight;  // false for biases
};

class CinnArchitecture {
 public:
  // Errors: empty root set, target missing from V_B and V_O, target not
  // reachable from any root. Isolated vertices are left out unless
  // `promote_isolated`, which feeds them in as extra roots.
  static CinnArchitecture compile(const graph::NodePartition& partition, const graph::CausalDag& dag,
                                  Vertex target, Widths widths = {}, bool promote_isolated = false);

  const graph::CausalDag& dag() const { return dag_; }
  const graph::NodePartition& partition() const { return partition_; }
  const Widths& widths() const { return widths_; }
  Vertex target() const { return target_; }

  std::size_t input_size() const { return partition_.roots.size(); }
  std::size_t n_layers() const { return partition_.layers.size(); }
  std::size_t n_intermediate() const { return partition_.intermediate.size(); }
  std::size_t n_outputs() const { return partition_.leaves.size(); }
  const std::vector<Vertex>& roots() const { return partition_.roots; }
  const std::vector<Vertex>& leaves() const { return partition_.leaves; }
  const std::vector<Vertex>& layer(std::size_t j) const { return partition_.layers.at(j); }
  // Intermediate vertices in layer order, the column order of mse_b targets.
  const std::vector<Vertex>& intermediate_order() const { return intermediate_order_; }
  // Intermediate vertices whose heads feed the fusion layer.
  const std::vector<Vertex>& fusion_sources() const { return fusion_sources_; }

  // Where a modeled vertex's prediction lives: (layer index or n_layers() for outputs, column).
  std::optional<std::pair<std::size_t, Eigen::Index>> head_of(Vertex v) const;
  bool is_modeled(Vertex v) const { return head_of(v).has_value(); }

  const std::vector<ParamSpec>& param_specs() const { return specs_; }
  std::size_t parameter_count() const;
  // Head connectivity mask for intermediate layer j (rows: heads, cols: [q trunk units | earlier heads]).
  const Matrix& head_mask(std::size_t j) const { return head_masks_.at(j); }

  // Glorot-uniform weights and zero biases, drawn in param_specs() order.
  ParamStore init_params(std::uint64_t seed) const;

  // Throws Error(kGraph) unless cause reaches effect in the DAG, the cause is a
  // root or intermediate node and the effect is modeled.
  void validate_prior(const DomainPrior& p) const;

  // Layer table and head-to-node mapping.
  std::string summary() const;

 private:
  graph::CausalDag dag_;
  graph::NodePartition partition_;
  Widths widths_;
  Vertex target_ = 0;
  std::vector<Vertex> intermediate_order_;
  std::vector<Vertex> fusion_sources_;
  std::vector<Matrix> head_masks_;
  std::vector<ParamSpec> specs_;
};

// Observations aligned with an architecture: roots, intermediates (layer order), leaves.
struct Batch {
  Matrix roots;
  Matrix intermediates;
  Matrix leaves;

  Eigen::Index size() const { return roots.rows(); }
};

// Splits a standardized matrix whose columns are DAG vertices.
Batch make_batch(const CinnArchitecture& arch, const Matrix& data);

struct Predictions {
  std::vector<Matrix> layers;  // one N x K[j] block per intermediate layer
  Matrix outputs;              // N x Z
};

struct NetOptions {
  std::vector<DomainPrior> priors;
  double gamma = 1.0;
  bool granular = false;  // one squared-error slot per modeled node
};

// A recorded tape for one architecture. Not thread-safe; build one per worker.
class CinnNet {
 public:
  CinnNet(const CinnArchitecture& arch, NetOptions options = {});

  const CinnArchitecture& architecture() const { return *arch_; }
  const NetOptions& options() const { return options_; }

  Predictions forward_all(const ParamStore& params, const Matrix& roots);
  Vector predict_target(const ParamStore& params, const Matrix& roots);
  std::pair<double, double> loss_mse(const ParamStore& params, const Batch& batch);
  double loss_domain(const ParamStore& params, const Batch& batch);
  LossBreakdown evaluate(const ParamStore& params, const Batch& batch);

  // Per-task parameter gradients at `batch`: {mse_b, mse_o, gamma * L_R}, or in
  // granular mode one entry per modeled node followed by gamma * L_R.
  std::vector<Vector> task_gradients(const ParamStore& params, const Batch& batch, LossBreakdown* losses = nullptr);
  // Gradient of the plain composite loss.
  Vector total_gradient(const ParamStore& params, const Batch& batch, LossBreakdown* losses = nullptr);

  ad::Tape& tape() { return tape_; }
  ad::Slot roots_slot() const { return x_; }
  ad::Slot outputs_slot() const { return out_; }
  ad::Slot layer_slot(std::size_t j) const { return heads_.at(j); }

 private:
  struct Tangent {
    std::vector<ad::Slot> heads;  // per intermediate layer
    ad::Slot outputs;
  };
  Tangent build_tangent(std::optional<Vertex> root_cause, std::optional<Vertex> head_cause);
  void run(const ParamStore& params, const Batch& batch);
  void set_batch(const Batch& batch);
  LossBreakdown read_losses() const;

  std::shared_ptr<const CinnArchitecture> arch_;
  NetOptions options_;
  ad::Tape tape_;
  ad::Slot x_ = 0, yb_ = 0, yo_ = 0;
  ad::Slot p1_ = 0, p2_ = 0, p3_ = 0, p4_ = 0;
  std::vector<ad::Slot> heads_;
  ad::Slot out_ = 0;
  ad::Slot mse_b_ = 0, mse_o_ = 0, domain_ = 0, domain_scaled_ = 0, total_ = 0;
  std::vector<ad::Slot> granular_;
};

// Convenience wrappers that build a temporary CinnNet.
Predictions forward_all(const CinnArchitecture& arch, const ParamStore& params, const Matrix& roots);
std::pair<double, double> loss_mse(const CinnArchitecture& arch, const ParamStore& params, const Batch& batch);
double loss_domain(const CinnArchitecture& arch, const ParamStore& params, const Batch& batch,
                   const std::vector<DomainPrior>& priors);
Vector predict_target(const CinnArchitecture& arch, const ParamStore& params, const Matrix& roots, Vertex target);

}  // namespace cinn::model
