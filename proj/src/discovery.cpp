#include "cinn/discovery.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "cinn/error.hpp"

namespace cinn::discovery {

WeightedAdjacency::WeightedAdjacency(Matrix values) : values_(std::move(values)) {
  if (values_.rows() != values_.cols()) throw Error(ErrorKind::kShape, "WeightedAdjacency must be square");
  values_.diagonal().setZero();
}

void DiscoveryConfig::validate() const {
  if (lambda < 0.0) throw Error(ErrorKind::kInput, "discovery: lambda must be >= 0");
  if (!(tau > 0.0)) throw Error(ErrorKind::kInput, "discovery: tau must be > 0");
  if (!(penalty_init > 0.0)) throw Error(ErrorKind::kInput, "discovery: penalty_init must be > 0");
  if (!(penalty_growth > 1.0)) throw Error(ErrorKind::kInput, "discovery: penalty_growth must be > 1");
  if (max_outer_iters < 1 || max_inner_iters < 1) throw Error(ErrorKind::kInput, "discovery: iteration limits must be >= 1");
  if (!(grad_tol > 0.0) || !(acyclicity_tol > 0.0)) throw Error(ErrorKind::kInput, "discovery: tolerances must be > 0");
}

Matrix matrix_exp(const Matrix& m) {
  if (m.rows() != m.cols()) throw Error(ErrorKind::kShape, "matrix_exp: matrix is not square");
  if (!m.allFinite()) throw Error(ErrorKind::kNumeric, "matrix_exp: non-finite entries");
  const auto n = m.rows();
  if (n == 0) return m;

  // Higham (2005) degree-13 coefficients and scaling threshold.
  static constexpr std::array<double, 14> b = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
      129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
      1323241920.0,        40840800.0,          960960.0,           16380.0,
      182.0,               1.0};
  constexpr double theta13 = 5.371920351148152;

  const double norm1 = m.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > theta13) squarings = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));
  const Matrix a = m / std::ldexp(1.0, squarings);
  const Matrix ident = Matrix::Identity(n, n);
  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix u =
      a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident);
  const Matrix v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident;
  Matrix x = (v - u).partialPivLu().solve(v + u);
  for (int k = 0; k < squarings; ++k) x = x * x;
  return x;
}

double acyclicity_h(const Matrix& w) {
  return matrix_exp(w.cwiseProduct(w)).trace() - static_cast<double>(w.rows());
}

double acyclicity_value(const WeightedAdjacency& w) {
  const double h = acyclicity_h(w.values());
  return h * h;
}

Matrix acyclicity_gradient(const WeightedAdjacency& w) {
  const Matrix& m = w.values();
  const Matrix e = matrix_exp(m.cwiseProduct(m));
  const double h = e.trace() - static_cast<double>(m.rows());
  return (2.0 * h) * e.transpose().cwiseProduct(2.0 * m);
}

namespace {

struct Smooth {
  double value;
  double h;
  Matrix grad;
};

// Least squares on the scatter matrix S = X^T X / N, plus penalty*h^2 + multiplier*h.
Smooth smooth_part(const Matrix& w, const Matrix& scatter, double penalty, double multiplier) {
  const auto d = w.rows();
  const Matrix resid = Matrix::Identity(d, d) - w;
  const Matrix s_resid = scatter * resid;
  const double loss = (resid.transpose() * s_resid).trace();
  const Matrix e = matrix_exp(w.cwiseProduct(w));
  const double h = e.trace() - static_cast<double>(d);
  Smooth out{loss + penalty * h * h + multiplier * h, h,
             -2.0 * s_resid + (2.0 * penalty * h + multiplier) * e.transpose().cwiseProduct(2.0 * w)};
  out.grad.diagonal().setZero();
  return out;
}

Matrix soft_threshold(const Matrix& m, double t) {
  Matrix out = m.unaryExpr([t](double x) { return x > t ? x - t : (x < -t ? x + t : 0.0); });
  out.diagonal().setZero();
  return out;
}

struct InnerResult {
  Matrix w;
  double h;
  long iterations;
};

// Proximal gradient with Barzilai-Borwein steps and Armijo backtracking on
// smooth(W) + lambda*||W||_1.
InnerResult solve_inner(Matrix w, const Matrix& scatter, double lambda, double penalty,
                        double multiplier, const DiscoveryConfig& cfg) {
  Smooth cur = smooth_part(w, scatter, penalty, multiplier);
  double step = 1.0 / (2.0 * scatter.norm() + 1.0);
  long it = 0;
  for (; it < cfg.max_inner_iters; ++it) {
    Matrix next;
    Smooth nxt;
    Matrix diff;
    for (;;) {
      next = soft_threshold(w - step * cur.grad, step * lambda);
      diff = next - w;
      nxt = smooth_part(next, scatter, penalty, multiplier);
      const double model = cur.value + cur.grad.cwiseProduct(diff).sum() + diff.squaredNorm() / (2.0 * step);
      if (std::isfinite(nxt.value) && nxt.value <= model + 1e-12 * std::abs(cur.value)) break;
      step *= 0.5;
      if (step < 1e-30) return {w, cur.h, it};
    }
    const double mapping = diff.cwiseAbs().maxCoeff() / step;
    const Matrix y = nxt.grad - cur.grad;
    const double sy = diff.cwiseProduct(y).sum();
    w = std::move(next);
    cur = std::move(nxt);
    if (mapping <= cfg.grad_tol) {
      ++it;
      break;
    }
    step = sy > 0.0 ? std::clamp(diff.squaredNorm() / sy, 1e-12, 1e6) : std::min(step * 2.0, 1e6);
  }
  return {w, cur.h, it};
}

}  // namespace

ObjectiveValue discovery_objective(const WeightedAdjacency& w, const Matrix& data,
                                   const DiscoveryConfig& cfg, double penalty) {
  if (data.cols() != static_cast<Eigen::Index>(w.dim())) {
    throw Error(ErrorKind::kShape, "discovery_objective: data has " + std::to_string(data.cols()) +
                                       " columns but W is " + std::to_string(w.dim()) + "x" +
                                       std::to_string(w.dim()));
  }
  const double n = static_cast<double>(data.rows());
  const Matrix& m = w.values();
  const Matrix resid = data - data * m;
  const Matrix e = matrix_exp(m.cwiseProduct(m));
  const double h = e.trace() - static_cast<double>(m.rows());
  ObjectiveValue out;
  out.value = resid.squaredNorm() / n + penalty * h * h + cfg.lambda * m.cwiseAbs().sum();
  out.gradient = (-2.0 / n) * data.transpose() * resid + (2.0 * penalty * h) * e.transpose().cwiseProduct(2.0 * m);
  out.gradient.diagonal().setZero();
  return out;
}

DiscoveryResult discover(const Matrix& data, const DiscoveryConfig& cfg) {
  cfg.validate();
  if (data.rows() < 2) throw Error(ErrorKind::kData, "discover: need at least 2 observations");
  if (!data.allFinite()) throw Error(ErrorKind::kData, "discover: data contains non-finite values");
  const auto d = data.cols();
  DiscoveryResult result;
  result.w = WeightedAdjacency(static_cast<std::size_t>(d));
  result.penalty = cfg.penalty_init;
  if (d <= 1) {
    result.objective = discovery_objective(result.w, data, cfg, cfg.penalty_init).value;
    return result;
  }

  const Matrix scatter = data.transpose() * data / static_cast<double>(data.rows());
  Matrix w = Matrix::Zero(d, d);
  double penalty = cfg.penalty_init;
  double multiplier = 0.0;
  double h = std::numeric_limits<double>::infinity();
  for (int outer = 0; outer < cfg.max_outer_iters; ++outer) {
    InnerResult inner;
    for (;;) {
      inner = solve_inner(w, scatter, cfg.lambda, penalty, multiplier, cfg);
      result.inner_iterations += inner.iterations;
      if (inner.h > 0.25 * h && penalty < cfg.penalty_max) {
        penalty *= cfg.penalty_growth;
      } else {
        break;
      }
    }
    w = std::move(inner.w);
    h = inner.h;
    multiplier += 2.0 * penalty * h;
    result.outer_iterations = outer + 1;
    if (std::abs(h) <= cfg.acyclicity_tol) break;
  }
  result.w = WeightedAdjacency(w);
  result.h = h;
  result.penalty = penalty;
  result.objective = discovery_objective(result.w, data, cfg, penalty).value;
  if (!(std::abs(h) <= cfg.acyclicity_tol)) {
    std::ostringstream msg;
    msg << "discover: no acyclic solution after " << cfg.max_outer_iters << " outer iterations (h(W) = " << h
        << ", penalty = " << penalty << ")";
    throw Error(ErrorKind::kConvergence, msg.str());
  }
  return result;
}

graph::CausalDag threshold_to_dag(const WeightedAdjacency& w, double tau, std::vector<std::string> names) {
  return graph::from_adjacency(w.values(), tau, std::move(names));
}

std::string format_matrix(const Matrix& m) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << m(i, j);
    out << '\n';
  }
  return out.str();
}

Matrix parse_matrix(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<double> row;
    double v = 0.0;
    while (ls >> v) row.push_back(v);
    if (!ls.eof()) throw Error(ErrorKind::kInput, "matrix file: non-numeric entry on row " + std::to_string(rows.size()));
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorKind::kInput, "matrix file: ragged row " + std::to_string(rows.size()));
    }
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

void save_matrix(const Matrix& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kInput, "cannot write matrix file: " + path.string());
  out << format_matrix(m);
}

Matrix load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kInput, "cannot open matrix file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_matrix(ss.str());
}

}  // namespace cinn::discovery
