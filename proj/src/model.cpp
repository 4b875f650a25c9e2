#include "cinn/model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <regex>
#include <sstream>

#include "cinn/error.hpp"
#include "cinn/random.hpp"

namespace cinn::model {

namespace {

std::string relation_symbol(Relation r) {
  switch (r) {
    case Relation::kAtMost: return "<=";
    case Relation::kAtLeast: return ">=";
    case Relation::kEqual: return "=";
  }
  return "?";
}

ad::HingeKind hinge_kind(Relation r) {
  switch (r) {
    case Relation::kAtMost: return ad::HingeKind::kAtMost;
    case Relation::kAtLeast: return ad::HingeKind::kAtLeast;
    case Relation::kEqual: return ad::HingeKind::kWithin;
  }
  return ad::HingeKind::kAtMost;
}

Eigen::Index index_in(const std::vector<Vertex>& v, Vertex x) {
  auto it = std::find(v.begin(), v.end(), x);
  return it == v.end() ? -1 : static_cast<Eigen::Index>(it - v.begin());
}

}  // namespace

std::string format_prior(const DomainPrior& p) {
  std::ostringstream out;
  out << 'd' << p.effect << "/d" << p.cause << ' ' << relation_symbol(p.relation) << ' ' << p.bound << " eps "
      << p.margin;
  return out.str();
}

DomainPrior parse_prior(const std::string& text) {
  static const std::regex re(
      R"(^\s*d(\d+)\s*/\s*d(\d+)\s*(<=|>=|==|=)\s*([-+0-9.eE]+)(?:\s+eps\s+([-+0-9.eE]+))?\s*$)");
  std::smatch m;
  if (!std::regex_match(text, m, re)) {
    throw Error(ErrorKind::kInput, "cannot parse prior '" + text + "' (expected e.g. 'd13/d12 <= 0 eps 0.01')");
  }
  DomainPrior p;
  p.effect = std::stoul(m[1]);
  p.cause = std::stoul(m[2]);
  const std::string rel = m[3];
  p.relation = rel == "<=" ? Relation::kAtMost : rel == ">=" ? Relation::kAtLeast : Relation::kEqual;
  try {
    p.bound = std::stod(m[4]);
    if (m[5].matched) p.margin = std::stod(m[5]);
  } catch (const std::exception&) {
    throw Error(ErrorKind::kInput, "prior '" + text + "': bad number");
  }
  if (!(p.margin >= 0.0)) throw Error(ErrorKind::kInput, "prior '" + text + "': margin must be >= 0");
  if (p.cause == p.effect) throw Error(ErrorKind::kInput, "prior '" + text + "': cause equals effect");
  return p;
}

LossBreakdown total_loss(double mse_b, double mse_o, double domain, double gamma) {
  if (!std::isfinite(mse_b) || !std::isfinite(mse_o) || !std::isfinite(domain)) {
    throw Error(ErrorKind::kNumeric, "total_loss: non-finite loss component");
  }
  return {mse_b, mse_o, domain, gamma, mse_b + mse_o + gamma * domain};
}

// ---------------------------------------------------------------- architecture

CinnArchitecture CinnArchitecture::compile(const graph::NodePartition& given, const graph::CausalDag& dag,
                                           Vertex target, Widths widths, bool promote_isolated) {
  if (given.total_vertices() != dag.n_vertices()) {
    throw Error(ErrorKind::kGraph, "compile: partition does not cover the DAG");
  }
  graph::NodePartition partition = given;
  if (promote_isolated && !partition.isolated.empty()) {
    partition.roots.insert(partition.roots.end(), partition.isolated.begin(), partition.isolated.end());
    std::sort(partition.roots.begin(), partition.roots.end());
    partition.isolated.clear();
  }
  if (partition.roots.empty()) throw Error(ErrorKind::kGraph, "compile: the DAG has no root nodes");
  if (!partition.intermediate.empty() && partition.layers.empty()) {
    throw Error(ErrorKind::kGraph, "compile: intermediate nodes are not layered");
  }
  if (target >= dag.n_vertices()) throw Error(ErrorKind::kGraph, "compile: target vertex out of range");
  if (partition.is_root(target)) {
    throw Error(ErrorKind::kGraph, "compile: target " + dag.name(target) + " is a root (an input, not an output)");
  }
  if (!partition.is_intermediate(target) && !partition.is_leaf(target)) {
    throw Error(ErrorKind::kGraph, "compile: target " + dag.name(target) + " is isolated");
  }
  bool reachable = false;
  for (Vertex r : partition.roots) reachable = reachable || dag.reaches(r, target);
  if (!reachable) throw Error(ErrorKind::kGraph, "compile: target " + dag.name(target) + " is unreachable from the roots");
  if (widths.trunk < 1 || widths.branch_b < 1 || widths.branch_o < 1 || widths.fusion < 1) {
    throw Error(ErrorKind::kInput, "compile: layer widths must be >= 1");
  }

  CinnArchitecture a;
  a.dag_ = dag;
  a.partition_ = partition;
  a.widths_ = widths;
  a.target_ = target;
  for (const auto& l : partition.layers) a.intermediate_order_.insert(a.intermediate_order_.end(), l.begin(), l.end());
  for (Vertex v : a.intermediate_order_) {
    for (Vertex c : dag.children(v)) {
      if (partition.is_leaf(c)) {
        a.fusion_sources_.push_back(v);
        break;
      }
    }
  }

  const auto T = static_cast<Eigen::Index>(partition.roots.size());
  const auto Z = static_cast<Eigen::Index>(partition.leaves.size());
  auto add = [&a](std::string name, Eigen::Index rows, Eigen::Index cols) {
    a.specs_.push_back({name + ".W", rows, cols, true});
    a.specs_.push_back({name + ".b", rows, 1, false});
  };
  add("trunk", widths.trunk, T);
  if (!partition.layers.empty()) {
    add("branch_b", widths.branch_b, widths.trunk);
    std::vector<Vertex> earlier;
    for (std::size_t j = 0; j < partition.layers.size(); ++j) {
      const auto& heads = partition.layers[j];
      const auto K = static_cast<Eigen::Index>(heads.size());
      const auto in = widths.branch_b + static_cast<Eigen::Index>(earlier.size());
      Matrix mask = Matrix::Zero(K, in);
      mask.leftCols(widths.branch_b).setOnes();
      for (Eigen::Index k = 0; k < K; ++k)
        for (std::size_t e = 0; e < earlier.size(); ++e)
          if (dag.has_edge(earlier[e], heads[static_cast<std::size_t>(k)]))
            mask(k, widths.branch_b + static_cast<Eigen::Index>(e)) = 1.0;
      a.head_masks_.push_back(std::move(mask));
      add("head" + std::to_string(j + 1), K, in);
      earlier.insert(earlier.end(), heads.begin(), heads.end());
    }
  }
  if (Z > 0) {
    add("branch_o", widths.branch_o, widths.trunk);
    add("fusion", widths.fusion, static_cast<Eigen::Index>(a.fusion_sources_.size()) + widths.branch_o);
    add("out", Z, widths.fusion);
  }
  return a;
}

std::optional<std::pair<std::size_t, Eigen::Index>> CinnArchitecture::head_of(Vertex v) const {
  for (std::size_t j = 0; j < partition_.layers.size(); ++j) {
    const auto k = index_in(partition_.layers[j], v);
    if (k >= 0) return std::make_pair(j, k);
  }
  const auto z = index_in(partition_.leaves, v);
  if (z >= 0) return std::make_pair(partition_.layers.size(), z);
  return std::nullopt;
}

std::size_t CinnArchitecture::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : specs_) n += static_cast<std::size_t>(s.rows * s.cols);
  return n;
}

ParamStore CinnArchitecture::init_params(std::uint64_t seed) const {
  auto rng = make_stream(seed, Stream::kInit);
  ParamStore store;
  for (const auto& s : specs_) {
    store.add(s.name, s.weight ? ad::glorot_uniform(s.rows, s.cols, rng) : Matrix::Zero(s.rows, s.cols));
  }
  return store;
}

void CinnArchitecture::validate_prior(const DomainPrior& p) const {
  const auto label = format_prior(p);
  if (p.cause >= dag_.n_vertices() || p.effect >= dag_.n_vertices()) {
    throw Error(ErrorKind::kGraph, "prior " + label + ": vertex out of range");
  }
  if (!(p.margin >= 0.0)) throw Error(ErrorKind::kInput, "prior " + label + ": margin must be >= 0");
  if (!partition_.is_root(p.cause) && !partition_.is_intermediate(p.cause)) {
    throw Error(ErrorKind::kGraph, "prior " + label + ": cause " + dag_.name(p.cause) + " is neither a root nor an intermediate node");
  }
  if (!is_modeled(p.effect)) {
    throw Error(ErrorKind::kGraph, "prior " + label + ": effect " + dag_.name(p.effect) + " is not an intermediate or leaf node");
  }
  if (!dag_.reaches(p.cause, p.effect)) {
    throw Error(ErrorKind::kGraph, "prior " + label + ": no directed path from " + dag_.name(p.cause) + " to " +
                                       dag_.name(p.effect));
  }
}

std::string CinnArchitecture::summary() const {
  std::ostringstream out;
  auto names = [this](const std::vector<Vertex>& vs) {
    std::string s;
    for (Vertex v : vs) s += (s.empty() ? "" : " ") + std::to_string(v) + ":" + dag_.name(v);
    return s.empty() ? std::string("-") : s;
  };
  out << "target      " << target_ << ":" << dag_.name(target_) << '\n';
  out << "inputs      " << names(partition_.roots) << '\n';
  out << "isolated    " << names(partition_.isolated) << '\n';
  for (std::size_t j = 0; j < partition_.layers.size(); ++j)
    out << "layer " << std::setw(2) << j + 1 << "    " << names(partition_.layers[j]) << '\n';
  out << "outputs     " << names(partition_.leaves) << '\n';
  out << "fusion in   " << names(fusion_sources_) << '\n';
  out << "\nblock        rows  cols\n";
  for (const auto& s : specs_) out << std::left << std::setw(12) << s.name << std::right << std::setw(6) << s.rows << std::setw(6) << s.cols << '\n';
  out << "parameters  " << parameter_count() << '\n';
  for (std::size_t j = 0; j < head_masks_.size(); ++j) {
    const auto& heads = partition_.layers[j];
    std::vector<Vertex> earlier;
    for (std::size_t i = 0; i < j; ++i) earlier.insert(earlier.end(), partition_.layers[i].begin(), partition_.layers[i].end());
    if (earlier.empty()) continue;
    out << "\nhead" << j + 1 << " inputs from earlier heads\n";
    for (std::size_t k = 0; k < heads.size(); ++k) {
      std::vector<Vertex> from;
      for (std::size_t e = 0; e < earlier.size(); ++e)
        if (head_masks_[j](static_cast<Eigen::Index>(k), widths_.branch_b + static_cast<Eigen::Index>(e)) != 0.0)
          from.push_back(earlier[e]);
      out << "  " << heads[k] << " <- " << names(from) << '\n';
    }
  }
  return out.str();
}

Batch make_batch(const CinnArchitecture& arch, const Matrix& data) {
  if (data.cols() != static_cast<Eigen::Index>(arch.dag().n_vertices())) {
    throw Error(ErrorKind::kShape, "make_batch: data has " + std::to_string(data.cols()) + " columns, DAG has " +
                                       std::to_string(arch.dag().n_vertices()) + " vertices");
  }
  auto take = [&data](const std::vector<Vertex>& cols) {
    Matrix m(data.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = data.col(static_cast<Eigen::Index>(cols[k]));
    return m;
  };
  return {take(arch.roots()), take(arch.intermediate_order()), take(arch.leaves())};
}

// ---------------------------------------------------------------- network

CinnNet::CinnNet(const CinnArchitecture& arch, NetOptions options)
    : arch_(std::make_shared<const CinnArchitecture>(arch)), options_(std::move(options)) {
  const auto& a = *arch_;
  for (const auto& p : options_.priors) a.validate_prior(p);

  std::map<std::string, ad::ParamId> id;
  for (std::size_t i = 0; i < a.param_specs().size(); ++i) id[a.param_specs()[i].name] = i;
  const auto R = a.n_layers();
  const auto Z = a.n_outputs();

  auto& t = tape_;
  x_ = t.input("roots", static_cast<Eigen::Index>(a.input_size()));
  yb_ = t.input("intermediates", static_cast<Eigen::Index>(a.n_intermediate()));
  yo_ = t.input("leaves", static_cast<Eigen::Index>(Z));

  p1_ = t.affine(x_, id["trunk.W"], id["trunk.b"]);
  const auto h1 = t.relu(p1_);
  ad::Slot h2 = 0;
  if (R > 0) {
    p2_ = t.affine(h1, id["branch_b.W"], id["branch_b.b"]);
    h2 = t.relu(p2_);
    for (std::size_t j = 0; j < R; ++j) {
      std::vector<ad::Slot> parts{h2};
      parts.insert(parts.end(), heads_.begin(), heads_.end());
      const auto in = parts.size() == 1 ? h2 : t.concat(parts);
      const auto name = "head" + std::to_string(j + 1);
      heads_.push_back(t.affine(in, id[name + ".W"], id[name + ".b"], a.head_mask(j)));
    }
  }
  if (Z > 0) {
    p3_ = t.affine(h1, id["branch_o.W"], id["branch_o.b"]);
    const auto h3 = t.relu(p3_);
    std::vector<ad::Slot> parts;
    for (std::size_t j = 0; j < R; ++j) {
      std::vector<Eigen::Index> cols;
      for (Vertex v : a.layer(j))
        if (index_in(a.fusion_sources(), v) >= 0) cols.push_back(a.head_of(v)->second);
      if (!cols.empty()) parts.push_back(t.select(heads_[j], cols));
    }
    parts.push_back(h3);
    const auto fin = parts.size() == 1 ? h3 : t.concat(parts);
    p4_ = t.affine(fin, id["fusion.W"], id["fusion.b"]);
    out_ = t.affine(t.relu(p4_), id["out.W"], id["out.b"]);
  }

  const auto zero_scalar = [&] { return t.mean_rows(t.broadcast_row(x_, Vector::Zero(1))); };
  if (R > 0) {
    const auto pred_b = heads_.size() == 1 ? heads_[0] : t.concat(heads_);
    mse_b_ = t.squared_error(pred_b, yb_);
    if (options_.granular) {
      for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(a.n_intermediate()); ++k)
        granular_.push_back(t.squared_error(t.select(pred_b, {k}), t.select(yb_, {k})));
    }
  } else {
    mse_b_ = zero_scalar();
  }
  if (Z > 0) {
    mse_o_ = t.squared_error(out_, yo_);
    if (options_.granular) {
      for (Eigen::Index z = 0; z < static_cast<Eigen::Index>(Z); ++z)
        granular_.push_back(t.squared_error(t.select(out_, {z}), t.select(yo_, {z})));
    }
  } else {
    mse_o_ = zero_scalar();
  }

  // Derivatives of heads with respect to causes, as forward-mode tangents on the tape.
  std::map<Vertex, Tangent> tangents;
  std::vector<ad::Slot> terms;
  for (const auto& p : options_.priors) {
    if (!tangents.count(p.cause)) {
      tangents.emplace(p.cause, a.partition().is_root(p.cause) ? build_tangent(p.cause, std::nullopt)
                                                                : build_tangent(std::nullopt, p.cause));
    }
    const auto& tg = tangents.at(p.cause);
    const auto [layer, col] = *a.head_of(p.effect);
    const auto src = layer < R ? tg.heads[layer] : tg.outputs;
    const auto d = t.select(src, {col});
    terms.push_back(t.mean_rows(t.hinge(d, hinge_kind(p.relation), p.bound, p.margin)));
  }
  domain_ = terms.empty() ? zero_scalar() : t.sum(terms);
  domain_scaled_ = t.scale(domain_, options_.gamma);
  total_ = t.sum({mse_b_, mse_o_, domain_scaled_});
  if (Z > 0) t.mark_output("outputs", out_);
  for (std::size_t j = 0; j < R; ++j) t.mark_output("layer" + std::to_string(j + 1), heads_[j]);
}

CinnNet::Tangent CinnNet::build_tangent(std::optional<Vertex> root_cause, std::optional<Vertex> head_cause) {
  const auto& a = *arch_;
  auto& t = tape_;
  std::map<std::string, ad::ParamId> id;
  for (std::size_t i = 0; i < a.param_specs().size(); ++i) id[a.param_specs()[i].name] = i;
  const auto R = a.n_layers();
  const auto zeros = [&](Eigen::Index w) { return t.broadcast_row(x_, Vector::Zero(w)); };

  Tangent tg;
  ad::Slot t1 = 0, t2 = 0;
  std::size_t start = 0;
  if (root_cause) {
    Vector seed = Vector::Zero(static_cast<Eigen::Index>(a.input_size()));
    seed(index_in(a.roots(), *root_cause)) = 1.0;
    t1 = t.gate(t.affine(t.broadcast_row(x_, seed), id["trunk.W"]), p1_);
    if (R > 0) t2 = t.gate(t.affine(t1, id["branch_b.W"]), p2_);
  } else {
    const auto [layer, col] = *a.head_of(*head_cause);
    t1 = zeros(a.widths().trunk);
    if (R > 0) t2 = zeros(a.widths().branch_b);
    for (std::size_t j = 0; j < layer; ++j) tg.heads.push_back(zeros(static_cast<Eigen::Index>(a.layer(j).size())));
    Vector seed = Vector::Zero(static_cast<Eigen::Index>(a.layer(layer).size()));
    seed(col) = 1.0;
    tg.heads.push_back(t.broadcast_row(x_, seed));
    start = layer + 1;
  }
  for (std::size_t j = start; j < R; ++j) {
    std::vector<ad::Slot> parts{t2};
    parts.insert(parts.end(), tg.heads.begin(), tg.heads.end());
    const auto in = parts.size() == 1 ? t2 : t.concat(parts);
    tg.heads.push_back(t.affine(in, id["head" + std::to_string(j + 1) + ".W"], std::nullopt, a.head_mask(j)));
  }
  if (a.n_outputs() > 0) {
    const auto t3 = root_cause ? t.gate(t.affine(t1, id["branch_o.W"]), p3_) : zeros(a.widths().branch_o);
    std::vector<ad::Slot> parts;
    for (std::size_t j = 0; j < R; ++j) {
      std::vector<Eigen::Index> cols;
      for (Vertex v : a.layer(j))
        if (index_in(a.fusion_sources(), v) >= 0) cols.push_back(a.head_of(v)->second);
      if (!cols.empty()) parts.push_back(t.select(tg.heads[j], cols));
    }
    parts.push_back(t3);
    const auto fin = parts.size() == 1 ? t3 : t.concat(parts);
    const auto t4 = t.gate(t.affine(fin, id["fusion.W"]), p4_);
    tg.outputs = t.affine(t4, id["out.W"]);
  }
  return tg;
}

void CinnNet::set_batch(const Batch& b) {
  const auto& a = *arch_;
  const auto n = b.roots.rows();
  if (b.roots.cols() != static_cast<Eigen::Index>(a.input_size())) {
    throw Error(ErrorKind::kShape, "expected " + std::to_string(a.input_size()) + " root values, got " +
                                       std::to_string(b.roots.cols()));
  }
  if (b.intermediates.rows() != n || b.intermediates.cols() != static_cast<Eigen::Index>(a.n_intermediate())) {
    throw Error(ErrorKind::kShape, "intermediate observations must be " + std::to_string(n) + "x" +
                                       std::to_string(a.n_intermediate()));
  }
  if (b.leaves.rows() != n || b.leaves.cols() != static_cast<Eigen::Index>(a.n_outputs())) {
    throw Error(ErrorKind::kShape, "leaf observations must be " + std::to_string(n) + "x" + std::to_string(a.n_outputs()));
  }
  tape_.set_input(x_, b.roots);
  tape_.set_input(yb_, b.intermediates);
  tape_.set_input(yo_, b.leaves);
}

void CinnNet::run(const ParamStore& params, const Batch& batch) {
  if (params.n_blocks() != arch_->param_specs().size()) {
    throw Error(ErrorKind::kShape, "parameter store does not match the architecture");
  }
  set_batch(batch);
  tape_.forward(params);
}

LossBreakdown CinnNet::read_losses() const {
  return total_loss(tape_.scalar(mse_b_), tape_.scalar(mse_o_), tape_.scalar(domain_), options_.gamma);
}

Predictions CinnNet::forward_all(const ParamStore& params, const Matrix& roots) {
  const auto n = roots.rows();
  Batch b{roots, Matrix::Zero(n, static_cast<Eigen::Index>(arch_->n_intermediate())),
          Matrix::Zero(n, static_cast<Eigen::Index>(arch_->n_outputs()))};
  run(params, b);
  Predictions p;
  for (auto s : heads_) p.layers.push_back(tape_.value(s));
  p.outputs = arch_->n_outputs() > 0 ? tape_.value(out_) : Matrix(n, 0);
  return p;
}

Vector CinnNet::predict_target(const ParamStore& params, const Matrix& roots) {
  const auto [layer, col] = *arch_->head_of(arch_->target());
  const auto p = forward_all(params, roots);
  return layer < p.layers.size() ? Vector(p.layers[layer].col(col)) : Vector(p.outputs.col(col));
}

std::pair<double, double> CinnNet::loss_mse(const ParamStore& params, const Batch& batch) {
  run(params, batch);
  return {tape_.scalar(mse_b_), tape_.scalar(mse_o_)};
}

double CinnNet::loss_domain(const ParamStore& params, const Batch& batch) {
  run(params, batch);
  return tape_.scalar(domain_);
}

LossBreakdown CinnNet::evaluate(const ParamStore& params, const Batch& batch) {
  run(params, batch);
  return read_losses();
}

std::vector<Vector> CinnNet::task_gradients(const ParamStore& params, const Batch& batch, LossBreakdown* losses) {
  run(params, batch);
  if (losses) *losses = read_losses();
  std::vector<Vector> grads;
  if (options_.granular) {
    for (auto s : granular_) grads.push_back(tape_.backward(params, s));
  } else {
    grads.push_back(tape_.backward(params, mse_b_));
    grads.push_back(tape_.backward(params, mse_o_));
  }
  grads.push_back(tape_.backward(params, domain_scaled_));
  return grads;
}

Vector CinnNet::total_gradient(const ParamStore& params, const Batch& batch, LossBreakdown* losses) {
  run(params, batch);
  if (losses) *losses = read_losses();
  return tape_.backward(params, total_);
}

Predictions forward_all(const CinnArchitecture& arch, const ParamStore& params, const Matrix& roots) {
  return CinnNet(arch).forward_all(params, roots);
}

std::pair<double, double> loss_mse(const CinnArchitecture& arch, const ParamStore& params, const Batch& batch) {
  return CinnNet(arch).loss_mse(params, batch);
}

double loss_domain(const CinnArchitecture& arch, const ParamStore& params, const Batch& batch,
                   const std::vector<DomainPrior>& priors) {
  return CinnNet(arch, {priors, 1.0, false}).loss_domain(params, batch);
}

Vector predict_target(const CinnArchitecture& arch, const ParamStore& params, const Matrix& roots, Vertex target) {
  if (!arch.is_modeled(target)) {
    throw Error(ErrorKind::kGraph, "predict_target: vertex " + arch.dag().name(target) + " is not an intermediate or leaf node");
  }
  const auto [layer, col] = *arch.head_of(target);
  const auto p = forward_all(arch, params, roots);
  return layer < p.layers.size() ? Vector(p.layers[layer].col(col)) : Vector(p.outputs.col(col));
}

}  // namespace cinn::model
