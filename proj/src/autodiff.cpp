#include "cinn/autodiff.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cinn/error.hpp"

namespace cinn::ad {

// ---------------------------------------------------------------- ParamStore

ParamId ParamStore::add(std::string name, Matrix init) {
  if (contains(name)) throw Error(ErrorKind::kInput, "duplicate parameter block: " + name);
  const Eigen::Index size = init.size();
  blocks_.push_back({std::move(name), std::move(init), total_});
  total_ += size;
  return blocks_.size() - 1;
}

ParamId ParamStore::id(std::string_view name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].name == name) return i;
  throw Error(ErrorKind::kInput, "unknown parameter block: " + std::string(name));
}

bool ParamStore::contains(std::string_view name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return true;
  return false;
}

Vector ParamStore::flatten() const {
  Vector flat(total_);
  for (const auto& b : blocks_) flat.segment(b.offset, b.value.size()) = b.value.reshaped();
  return flat;
}

void ParamStore::assign(const Vector& flat) {
  if (flat.size() != total_) throw Error(ErrorKind::kShape, "ParamStore::assign: size mismatch");
  for (auto& b : blocks_) b.value.reshaped() = flat.segment(b.offset, b.value.size());
}

std::string ParamStore::manifest() const {
  std::ostringstream out;
  out << "cinn-params 1 " << blocks_.size() << ' ' << total_ << '\n';
  for (const auto& b : blocks_) out << b.name << ' ' << b.value.rows() << ' ' << b.value.cols() << ' ' << b.offset << '\n';
  return out.str();
}

namespace {
constexpr char kMagic[8] = {'C', 'I', 'N', 'N', 'P', 'A', 'R', '1'};
}

void ParamStore::save(const std::filesystem::path& blob, const std::filesystem::path& manifest_path) const {
  std::ofstream out(blob, std::ios::binary);
  if (!out) throw Error(ErrorKind::kInput, "cannot write parameter blob: " + blob.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t count = blocks_.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  for (const auto& b : blocks_) {
    const std::uint64_t dims[2] = {static_cast<std::uint64_t>(b.value.rows()), static_cast<std::uint64_t>(b.value.cols())};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    out.write(reinterpret_cast<const char*>(b.value.data()), static_cast<std::streamsize>(sizeof(double) * b.value.size()));
  }
  std::ofstream man(manifest_path);
  if (!man) throw Error(ErrorKind::kInput, "cannot write parameter manifest: " + manifest_path.string());
  man << manifest();
}

ParamStore ParamStore::load(const std::filesystem::path& blob, const std::filesystem::path& manifest_path) {
  std::ifstream man(manifest_path);
  if (!man) throw Error(ErrorKind::kInput, "cannot open parameter manifest: " + manifest_path.string());
  std::string tag;
  int version = 0;
  std::size_t count = 0;
  Eigen::Index total = 0;
  if (!(man >> tag >> version >> count >> total) || tag != "cinn-params" || version != 1) {
    throw Error(ErrorKind::kInput, "unsupported parameter manifest: " + manifest_path.string());
  }
  std::ifstream in(blob, std::ios::binary);
  if (!in) throw Error(ErrorKind::kInput, "cannot open parameter blob: " + blob.string());
  char magic[8];
  std::uint64_t blob_count = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&blob_count), sizeof blob_count);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0 || blob_count != count) {
    throw Error(ErrorKind::kInput, "parameter blob does not match manifest: " + blob.string());
  }
  ParamStore store;
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    Eigen::Index rows = 0, cols = 0, offset = 0;
    if (!(man >> name >> rows >> cols >> offset)) throw Error(ErrorKind::kInput, "truncated parameter manifest");
    std::uint64_t dims[2];
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    if (!in || static_cast<Eigen::Index>(dims[0]) != rows || static_cast<Eigen::Index>(dims[1]) != cols) {
      throw Error(ErrorKind::kInput, "parameter block shape mismatch for " + name);
    }
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!in) throw Error(ErrorKind::kInput, "truncated parameter blob");
    store.add(name, std::move(m));
    if (store.offset(i) != offset) throw Error(ErrorKind::kInput, "parameter manifest offsets are inconsistent");
  }
  if (store.total_size() != total) throw Error(ErrorKind::kInput, "parameter manifest total is inconsistent");
  return store;
}

Matrix glorot_uniform(Eigen::Index fan_out, Eigen::Index fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(fan_out, fan_in);
  // Row-major draw order so the layout of the stream does not depend on Eigen storage.
  for (Eigen::Index i = 0; i < fan_out; ++i)
    for (Eigen::Index j = 0; j < fan_in; ++j) w(i, j) = dist(rng);
  return w;
}

// ---------------------------------------------------------------- Tape: build

Slot Tape::push(Node n) {
  for (Slot a : n.args) check_slot(a);
  nodes_.push_back(std::move(n));
  values_.emplace_back();
  adjoints_.emplace_back();
  touched_.push_back(false);
  input_set_.push_back(false);
  evaluated_ = false;
  return nodes_.size() - 1;
}

void Tape::check_slot(Slot s) const {
  if (s >= nodes_.size()) throw Error(ErrorKind::kShape, "tape slot " + std::to_string(s) + " does not exist");
}

Slot Tape::input(std::string name, Eigen::Index width) {
  Node n{Op::kInput};
  n.name = std::move(name);
  n.width = width;
  return push(std::move(n));
}

Slot Tape::affine(Slot x, ParamId weight, std::optional<ParamId> bias, std::optional<Matrix> mask) {
  Node n{Op::kAffine, {x}};
  n.param = weight;
  n.bias = bias;
  n.mask = std::move(mask);
  n.width = -1;  // resolved against the ParamStore at forward time
  return push(std::move(n));
}

Slot Tape::relu(Slot x) {
  check_slot(x);
  Node n{Op::kRelu, {x}};
  n.width = nodes_[x].width;
  return push(std::move(n));
}

Slot Tape::gate(Slot x, Slot reference) {
  check_slot(x);
  Node n{Op::kGate, {x, reference}};
  n.width = nodes_[x].width;
  return push(std::move(n));
}

Slot Tape::concat(const std::vector<Slot>& parts) {
  if (parts.empty()) throw Error(ErrorKind::kShape, "concat of nothing");
  Node n{Op::kConcat, parts};
  n.width = -1;
  return push(std::move(n));
}

Slot Tape::select(Slot x, std::vector<Eigen::Index> columns) {
  Node n{Op::kSelect, {x}};
  n.width = static_cast<Eigen::Index>(columns.size());
  n.columns = std::move(columns);
  return push(std::move(n));
}

Slot Tape::hadamard(Slot a, Slot b) {
  check_slot(a);
  Node n{Op::kHadamard, {a, b}};
  n.width = nodes_[a].width;
  return push(std::move(n));
}

Slot Tape::broadcast_row(Slot like, Vector row) {
  Node n{Op::kBroadcastRow, {like}};
  n.width = row.size();
  n.row = std::move(row);
  return push(std::move(n));
}

Slot Tape::add(Slot a, Slot b) {
  check_slot(a);
  Node n{Op::kAdd, {a, b}};
  n.width = nodes_[a].width;
  return push(std::move(n));
}

Slot Tape::scale(Slot x, double factor) {
  check_slot(x);
  Node n{Op::kScale, {x}};
  n.width = nodes_[x].width;
  n.a = factor;
  return push(std::move(n));
}

Slot Tape::squared_error(Slot pred, Slot target) {
  Node n{Op::kSquaredError, {pred, target}};
  n.width = 1;
  return push(std::move(n));
}

Slot Tape::hinge(Slot x, HingeKind kind, double target, double margin) {
  check_slot(x);
  Node n{Op::kHinge, {x}};
  n.width = nodes_[x].width;
  n.hinge = kind;
  n.a = target;
  n.b = margin;
  return push(std::move(n));
}

Slot Tape::mean_rows(Slot x) {
  Node n{Op::kMeanRows, {x}};
  n.width = 1;
  return push(std::move(n));
}

Slot Tape::weight_abs_sum(ParamId p) {
  Node n{Op::kWeightAbsSum};
  n.param = p;
  n.width = 1;
  return push(std::move(n));
}

Slot Tape::weight_square_sum(ParamId p) {
  Node n{Op::kWeightSquareSum};
  n.param = p;
  n.width = 1;
  return push(std::move(n));
}

Slot Tape::sum(const std::vector<Slot>& scalars) {
  if (scalars.empty()) throw Error(ErrorKind::kShape, "sum of nothing");
  Node n{Op::kSum, scalars};
  n.width = 1;
  return push(std::move(n));
}

void Tape::mark_output(std::string name, Slot s) {
  check_slot(s);
  outputs_.emplace_back(std::move(name), s);
}

Slot Tape::output_slot(std::string_view name) const {
  for (const auto& [n, s] : outputs_)
    if (n == name) return s;
  throw Error(ErrorKind::kShape, "tape has no output named " + std::string(name));
}

Slot Tape::input_slot(std::string_view name) const {
  for (Slot s = 0; s < nodes_.size(); ++s)
    if (nodes_[s].op == Op::kInput && nodes_[s].name == name) return s;
  throw Error(ErrorKind::kShape, "tape has no input named " + std::string(name));
}

// ---------------------------------------------------------------- Tape: run

void Tape::set_input(Slot s, const Matrix& value) {
  check_slot(s);
  if (nodes_[s].op != Op::kInput) throw Error(ErrorKind::kShape, "slot " + std::to_string(s) + " is not an input");
  if (value.cols() != nodes_[s].width) {
    throw Error(ErrorKind::kShape, "input '" + nodes_[s].name + "' expects width " + std::to_string(nodes_[s].width) +
                                       ", got " + std::to_string(value.cols()));
  }
  values_[s] = value;
  input_set_[s] = true;
  evaluated_ = false;
}

double Tape::scalar(Slot s) const {
  const auto& v = values_.at(s);
  if (v.rows() != 1 || v.cols() != 1) throw Error(ErrorKind::kShape, "slot " + std::to_string(s) + " is not scalar");
  return v(0, 0);
}

namespace {
Matrix effective_weight(const Matrix& w, const std::optional<Matrix>& mask) {
  if (!mask) return w;
  if (mask->rows() != w.rows() || mask->cols() != w.cols()) throw Error(ErrorKind::kShape, "affine mask shape mismatch");
  return w.cwiseProduct(*mask);
}

double hinge_value(HingeKind k, double x, double target, double margin) {
  switch (k) {
    case HingeKind::kAtMost: return std::max(0.0, x - target - margin);
    case HingeKind::kAtLeast: return std::max(0.0, target - x - margin);
    case HingeKind::kWithin: return std::max(0.0, std::abs(x - target) - margin);
  }
  return 0.0;
}

double hinge_slope(HingeKind k, double x, double target, double margin) {
  if (hinge_value(k, x, target, margin) <= 0.0) return 0.0;
  switch (k) {
    case HingeKind::kAtMost: return 1.0;
    case HingeKind::kAtLeast: return -1.0;
    case HingeKind::kWithin: return x > target ? 1.0 : -1.0;
  }
  return 0.0;
}
}  // namespace

void Tape::forward(const ParamStore& params) {
  for (Slot s = 0; s < nodes_.size(); ++s) {
    const Node& n = nodes_[s];
    Matrix& out = values_[s];
    switch (n.op) {
      case Op::kInput:
        if (!input_set_[s]) throw Error(ErrorKind::kShape, "input '" + n.name + "' was not set");
        break;
      case Op::kAffine: {
        const Matrix& x = values_[n.args[0]];
        const Matrix w = effective_weight(params.value(n.param), n.mask);
        if (x.cols() != w.cols()) {
          throw Error(ErrorKind::kShape, "affine '" + params.name(n.param) + "' expects width " +
                                             std::to_string(w.cols()) + ", got " + std::to_string(x.cols()));
        }
        out.noalias() = x * w.transpose();
        if (n.bias) out.rowwise() += params.value(*n.bias).col(0).transpose();
        break;
      }
      case Op::kRelu:
        out = values_[n.args[0]].cwiseMax(0.0);
        break;
      case Op::kGate:
        out = values_[n.args[0]].cwiseProduct((values_[n.args[1]].array() > 0.0).cast<double>().matrix());
        break;
      case Op::kConcat: {
        Eigen::Index cols = 0;
        const Eigen::Index rows = values_[n.args[0]].rows();
        for (Slot a : n.args) {
          if (values_[a].rows() != rows) throw Error(ErrorKind::kShape, "concat row mismatch");
          cols += values_[a].cols();
        }
        out.resize(rows, cols);
        Eigen::Index c = 0;
        for (Slot a : n.args) {
          out.middleCols(c, values_[a].cols()) = values_[a];
          c += values_[a].cols();
        }
        break;
      }
      case Op::kSelect: {
        const Matrix& x = values_[n.args[0]];
        out.resize(x.rows(), static_cast<Eigen::Index>(n.columns.size()));
        for (std::size_t k = 0; k < n.columns.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = x.col(n.columns[k]);
        break;
      }
      case Op::kHadamard:
        out = values_[n.args[0]].cwiseProduct(values_[n.args[1]]);
        break;
      case Op::kBroadcastRow:
        out = n.row.transpose().replicate(values_[n.args[0]].rows(), 1);
        break;
      case Op::kAdd:
        out = values_[n.args[0]] + values_[n.args[1]];
        break;
      case Op::kScale:
        out = n.a * values_[n.args[0]];
        break;
      case Op::kSquaredError: {
        const Matrix& p = values_[n.args[0]];
        const Matrix& t = values_[n.args[1]];
        if (p.rows() != t.rows() || p.cols() != t.cols()) {
          throw Error(ErrorKind::kShape, "squared_error: prediction " + std::to_string(p.rows()) + "x" +
                                             std::to_string(p.cols()) + " vs target " + std::to_string(t.rows()) +
                                             "x" + std::to_string(t.cols()));
        }
        const double rows = static_cast<double>(std::max<Eigen::Index>(p.rows(), 1));
        out = Matrix::Constant(1, 1, (p - t).squaredNorm() / rows);
        break;
      }
      case Op::kHinge:
        out = values_[n.args[0]].unaryExpr([&n](double x) { return hinge_value(n.hinge, x, n.a, n.b); });
        break;
      case Op::kMeanRows: {
        const Matrix& x = values_[n.args[0]];
        const double rows = static_cast<double>(std::max<Eigen::Index>(x.rows(), 1));
        out = Matrix::Constant(1, 1, x.sum() / rows);
        break;
      }
      case Op::kWeightAbsSum:
        out = Matrix::Constant(1, 1, params.value(n.param).cwiseAbs().sum());
        break;
      case Op::kWeightSquareSum:
        out = Matrix::Constant(1, 1, params.value(n.param).squaredNorm());
        break;
      case Op::kSum: {
        double total = 0.0;
        for (Slot a : n.args) total += values_[a](0, 0);
        out = Matrix::Constant(1, 1, total);
        break;
      }
    }
  }
  evaluated_ = true;
}

Matrix& Tape::accumulate(Slot s, Eigen::Index rows, Eigen::Index cols) {
  if (!touched_[s]) {
    adjoints_[s].setZero(rows, cols);
    touched_[s] = true;
  }
  return adjoints_[s];
}

Vector Tape::backward(const ParamStore& params, Slot loss) {
  check_slot(loss);
  if (!evaluated_) throw Error(ErrorKind::kShape, "backward called before forward");
  const auto& v = values_[loss];
  if (v.rows() != 1 || v.cols() != 1) throw Error(ErrorKind::kShape, "backward: slot " + std::to_string(loss) + " is not scalar");
  Vector grad = Vector::Zero(params.total_size());
  backward_seeded(params, loss, Matrix::Ones(1, 1), &grad);
  return grad;
}

void Tape::backward_seeded(const ParamStore& params, Slot from, const Matrix& seed, Vector* param_grad) {
  check_slot(from);
  if (!evaluated_) throw Error(ErrorKind::kShape, "backward called before forward");
  if (seed.rows() != values_[from].rows() || seed.cols() != values_[from].cols()) {
    throw Error(ErrorKind::kShape, "backward seed shape mismatch");
  }
  std::fill(touched_.begin(), touched_.end(), false);
  adjoints_[from] = seed;
  touched_[from] = true;

  auto param_block = [&](ParamId p) {
    const Matrix& value = params.value(p);
    return Eigen::Map<Matrix>(param_grad->data() + params.offset(p), value.rows(), value.cols());
  };

  for (Slot s = from + 1; s-- > 0;) {
    if (!touched_[s]) continue;
    const Node& n = nodes_[s];
    const Matrix& dy = adjoints_[s];
    switch (n.op) {
      case Op::kInput:
      case Op::kBroadcastRow:
        break;
      case Op::kAffine: {
        const Slot x = n.args[0];
        const Matrix w = effective_weight(params.value(n.param), n.mask);
        accumulate(x, values_[x].rows(), values_[x].cols()).noalias() += dy * w;
        if (param_grad) {
          if (n.mask) {
            param_block(n.param) += (dy.transpose() * values_[x]).cwiseProduct(*n.mask);
          } else {
            param_block(n.param).noalias() += dy.transpose() * values_[x];
          }
          if (n.bias) param_block(*n.bias) += dy.colwise().sum().transpose();
        }
        break;
      }
      case Op::kRelu: {
        const Slot x = n.args[0];
        accumulate(x, dy.rows(), dy.cols()) += dy.cwiseProduct((values_[x].array() > 0.0).cast<double>().matrix());
        break;
      }
      case Op::kGate: {
        const Slot x = n.args[0];
        accumulate(x, dy.rows(), dy.cols()) +=
            dy.cwiseProduct((values_[n.args[1]].array() > 0.0).cast<double>().matrix());
        break;
      }
      case Op::kConcat: {
        Eigen::Index c = 0;
        for (Slot a : n.args) {
          const auto w = values_[a].cols();
          accumulate(a, dy.rows(), w) += dy.middleCols(c, w);
          c += w;
        }
        break;
      }
      case Op::kSelect: {
        const Slot x = n.args[0];
        Matrix& dx = accumulate(x, values_[x].rows(), values_[x].cols());
        for (std::size_t k = 0; k < n.columns.size(); ++k) dx.col(n.columns[k]) += dy.col(static_cast<Eigen::Index>(k));
        break;
      }
      case Op::kHadamard: {
        const Slot a = n.args[0];
        const Slot b = n.args[1];
        accumulate(a, dy.rows(), dy.cols()) += dy.cwiseProduct(values_[b]);
        accumulate(b, dy.rows(), dy.cols()) += dy.cwiseProduct(values_[a]);
        break;
      }
      case Op::kAdd:
        accumulate(n.args[0], dy.rows(), dy.cols()) += dy;
        accumulate(n.args[1], dy.rows(), dy.cols()) += dy;
        break;
      case Op::kScale:
        accumulate(n.args[0], dy.rows(), dy.cols()) += n.a * dy;
        break;
      case Op::kSquaredError: {
        const Matrix& p = values_[n.args[0]];
        const Matrix& t = values_[n.args[1]];
        const double rows = static_cast<double>(std::max<Eigen::Index>(p.rows(), 1));
        const Matrix g = (2.0 * dy(0, 0) / rows) * (p - t);
        accumulate(n.args[0], p.rows(), p.cols()) += g;
        accumulate(n.args[1], t.rows(), t.cols()) -= g;
        break;
      }
      case Op::kHinge: {
        const Slot x = n.args[0];
        const Matrix slope = values_[x].unaryExpr([&n](double v) { return hinge_slope(n.hinge, v, n.a, n.b); });
        accumulate(x, dy.rows(), dy.cols()) += dy.cwiseProduct(slope);
        break;
      }
      case Op::kMeanRows: {
        const Slot x = n.args[0];
        const double rows = static_cast<double>(std::max<Eigen::Index>(values_[x].rows(), 1));
        accumulate(x, values_[x].rows(), values_[x].cols()).array() += dy(0, 0) / rows;
        break;
      }
      case Op::kWeightAbsSum:
        if (param_grad) {
          param_block(n.param) +=
              dy(0, 0) * params.value(n.param).unaryExpr([](double w) { return w > 0.0 ? 1.0 : (w < 0.0 ? -1.0 : 0.0); });
        }
        break;
      case Op::kWeightSquareSum:
        if (param_grad) param_block(n.param) += (2.0 * dy(0, 0)) * params.value(n.param);
        break;
      case Op::kSum:
        for (Slot a : n.args) accumulate(a, 1, 1)(0, 0) += dy(0, 0);
        break;
    }
  }
  // Untouched slots expose a zero adjoint of the right shape.
  for (Slot s = 0; s < nodes_.size(); ++s)
    if (!touched_[s]) adjoints_[s].setZero(values_[s].rows(), values_[s].cols());
}

std::vector<Matrix> Tape::jacobian(const ParamStore& params, const std::vector<Port>& outputs,
                                   const std::vector<Port>& inputs) {
  if (!evaluated_) throw Error(ErrorKind::kShape, "jacobian called before forward");
  for (const auto& p : outputs) {
    check_slot(p.slot);
    if (p.column < 0 || p.column >= values_[p.slot].cols()) throw Error(ErrorKind::kShape, "jacobian: output column out of range");
  }
  Eigen::Index rows = -1;
  for (const auto& p : inputs) {
    check_slot(p.slot);
    if (p.column < 0 || p.column >= values_[p.slot].cols()) throw Error(ErrorKind::kShape, "jacobian: input column out of range");
    if (rows >= 0 && values_[p.slot].rows() != rows) throw Error(ErrorKind::kShape, "jacobian: input batch sizes differ");
    rows = values_[p.slot].rows();
  }
  if (outputs.empty() || inputs.empty()) return {};
  if (values_[outputs.front().slot].rows() != rows) throw Error(ErrorKind::kShape, "jacobian: output/input batch sizes differ");

  std::vector<Matrix> jac(static_cast<std::size_t>(rows),
                          Matrix::Zero(static_cast<Eigen::Index>(outputs.size()), static_cast<Eigen::Index>(inputs.size())));
  for (std::size_t o = 0; o < outputs.size(); ++o) {
    const auto& out = outputs[o];
    Matrix seed = Matrix::Zero(values_[out.slot].rows(), values_[out.slot].cols());
    seed.col(out.column).setOnes();
    backward_seeded(params, out.slot, seed, nullptr);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto& in = inputs[i];
      for (Eigen::Index r = 0; r < rows; ++r)
        jac[static_cast<std::size_t>(r)](static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)) = adjoints_[in.slot](r, in.column);
    }
  }
  return jac;
}

}  // namespace cinn::ad
