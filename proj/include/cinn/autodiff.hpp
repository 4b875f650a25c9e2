#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace cinn::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ParamId = std::size_t;
using Slot = std::size_t;

// Named parameter blocks. Flattening concatenates blocks in insertion order,
// each block column-major.
class ParamStore {
 public:
  ParamId add(std::string name, Matrix init);

  std::size_t n_blocks() const { return blocks_.size(); }
  ParamId id(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::string& name(ParamId p) const { return blocks_.at(p).name; }
  const Matrix& value(ParamId p) const { return blocks_.at(p).value; }
  Matrix& value(ParamId p) { return blocks_.at(p).value; }
  Eigen::Index offset(ParamId p) const { return blocks_.at(p).offset; }
  Eigen::Index total_size() const { return total_; }

  Vector flatten() const;
  void assign(const Vector& flat);

  // Text manifest: header line, then `name rows cols offset` per block.
  std::string manifest() const;
  void save(const std::filesystem::path& blob, const std::filesystem::path& manifest_path) const;
  static ParamStore load(const std::filesystem::path& blob, const std::filesystem::path& manifest_path);

 private:
  struct Block {
    std::string name;
    Matrix value;
    Eigen::Index offset;
  };
  std::vector<Block> blocks_;
  Eigen::Index total_ = 0;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)) for an out x in weight matrix.
Matrix glorot_uniform(Eigen::Index fan_out, Eigen::Index fan_in, std::mt19937_64& rng);

enum class HingeKind {
  kAtMost,   // max(0, x - target - margin)
  kAtLeast,  // max(0, target - x - margin)
  kWithin,   // max(0, |x - target| - margin)
};

// A column of a tape node, used to address Jacobian rows and columns.
struct Port {
  Slot slot;
  Eigen::Index column;
};

// Recorded computation over row-batched matrices. Build once, then call
// set_input / forward / backward per batch. Values and adjoints live in the
// tape, so a tape must not be shared between threads.
class Tape {
 public:
  Slot input(std::string name, Eigen::Index width);
  // y = x (W o mask)^T + b^T, W stored out x in, b stored out x 1.
  Slot affine(Slot x, ParamId weight, std::optional<ParamId> bias = std::nullopt,
              std::optional<Matrix> mask = std::nullopt);
  Slot relu(Slot x);
  // x o 1[reference > 0]; no gradient flows into `reference`.
  Slot gate(Slot x, Slot reference);
  Slot concat(const std::vector<Slot>& parts);
  Slot select(Slot x, std::vector<Eigen::Index> columns);
  Slot hadamard(Slot a, Slot b);
  // Constant: rows(like) copies of `row`.
  Slot broadcast_row(Slot like, Vector row);
  Slot add(Slot a, Slot b);
  Slot scale(Slot x, double factor);
  // Scalar: (1/rows) * sum of squared entries of (pred - target).
  Slot squared_error(Slot pred, Slot target);
  Slot hinge(Slot x, HingeKind kind, double target, double margin);
  // Scalar: (1/rows) * sum of entries.
  Slot mean_rows(Slot x);
  Slot weight_abs_sum(ParamId p);
  Slot weight_square_sum(ParamId p);
  Slot sum(const std::vector<Slot>& scalars);

  void mark_output(std::string name, Slot s);
  Slot output_slot(std::string_view name) const;
  Slot input_slot(std::string_view name) const;

  std::size_t size() const { return nodes_.size(); }
  // Column count; -1 for affine-derived nodes until the first forward.
  Eigen::Index width(Slot s) const {
    return nodes_.at(s).width >= 0 || !evaluated_ ? nodes_.at(s).width : values_.at(s).cols();
  }

  void set_input(Slot s, const Matrix& value);
  void set_input(std::string_view name, const Matrix& value) { set_input(input_slot(name), value); }
  void forward(const ParamStore& params);
  const Matrix& value(Slot s) const { return values_.at(s); }
  const Matrix& output(std::string_view name) const { return values_.at(output_slot(name)); }
  double scalar(Slot s) const;

  // Gradient of a scalar slot with respect to every parameter, flattened in
  // ParamStore order. Input adjoints are available afterwards via adjoint().
  Vector backward(const ParamStore& params, Slot loss);
  // Reverse sweep seeded with `seed` (same shape as value(from)).
  void backward_seeded(const ParamStore& params, Slot from, const Matrix& seed, Vector* param_grad);
  const Matrix& adjoint(Slot s) const { return adjoints_.at(s); }

  // One Jacobian per batch row: entry (o, i) = d outputs[o] / d inputs[i].
  // Computed by one reverse sweep per output port; forward must have run.
  std::vector<Matrix> jacobian(const ParamStore& params, const std::vector<Port>& outputs,
                               const std::vector<Port>& inputs);

 private:
  enum class Op {
    kInput, kAffine, kRelu, kGate, kConcat, kSelect, kHadamard, kBroadcastRow,
    kAdd, kScale, kSquaredError, kHinge, kMeanRows, kWeightAbsSum, kWeightSquareSum, kSum,
  };
  struct Node {
    Op op;
    std::vector<Slot> args{};
    Eigen::Index width = 0;
    std::string name{};
    ParamId param = 0;
    std::optional<ParamId> bias{};
    std::optional<Matrix> mask{};
    std::vector<Eigen::Index> columns{};
    Vector row{};
    double a = 0.0;
    double b = 0.0;
    HingeKind hinge = HingeKind::kAtMost;
  };

  Slot push(Node n);
  void check_slot(Slot s) const;
  Matrix& accumulate(Slot s, Eigen::Index rows, Eigen::Index cols);

  std::vector<Node> nodes_;
  std::vector<Matrix> values_;
  std::vector<Matrix> adjoints_;
  std::vector<bool> touched_;
  std::vector<bool> input_set_;
  std::vector<std::pair<std::string, Slot>> outputs_;
  bool evaluated_ = false;
};

}  // namespace cinn::ad
