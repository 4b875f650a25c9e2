#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include <Eigen/Dense>

#include "cinn/graph.hpp"

namespace cinn::discovery {

using Matrix = Eigen::MatrixXd;

// Square matrix with a zero diagonal; entry (i, j) weights edge i -> j.
class WeightedAdjacency {
 public:
  WeightedAdjacency() = default;
  explicit WeightedAdjacency(std::size_t dim) : values_(Matrix::Zero(dim, dim)) {}
  // Throws if `values` is not square; the diagonal is zeroed.
  explicit WeightedAdjacency(Matrix values);

  std::size_t dim() const { return static_cast<std::size_t>(values_.rows()); }
  const Matrix& values() const { return values_; }

 private:
  Matrix values_;
};

struct DiscoveryConfig {
  double lambda = 0.1;            // L1 weight
  double tau = 0.3;               // edge threshold
  double penalty_init = 1.0;
  double penalty_growth = 10.0;
  double penalty_max = 1e20;
  int max_outer_iters = 20;
  int max_inner_iters = 20000;
  double grad_tol = 1e-6;
  double acyclicity_tol = 1e-8;

  void validate() const;
};

// e^m by scaling and squaring with the degree-13 Pade approximant.
Matrix matrix_exp(const Matrix& m);

// h(W) = tr(exp(W o W)) - dim. Zero exactly when the support of W is acyclic.
double acyclicity_h(const Matrix& w);
// R(W) = h(W)^2.
double acyclicity_value(const WeightedAdjacency& w);
// dR/dW = 2 h(W) * exp(W o W)^T o 2W.
Matrix acyclicity_gradient(const WeightedAdjacency& w);

struct ObjectiveValue {
  double value = 0.0;
  Matrix gradient;  // gradient of the smooth part; the L1 term is handled by the proximal step
};

// (1/N)||X - XW||_F^2 + penalty * R(W) + lambda * ||W||_1.
// `gradient` holds the gradient of the first two terms only.
ObjectiveValue discovery_objective(const WeightedAdjacency& w, const Matrix& data,
                                   const DiscoveryConfig& cfg, double penalty);

struct DiscoveryResult {
  WeightedAdjacency w;
  double h = 0.0;
  double objective = 0.0;  // final discovery_objective value at the final penalty
  double penalty = 0.0;
  int outer_iterations = 0;
  long inner_iterations = 0;
};

// Throws Error(kConvergence) if |h| > acyclicity_tol after max_outer_iters.
DiscoveryResult discover(const Matrix& data, const DiscoveryConfig& cfg);

graph::CausalDag threshold_to_dag(const WeightedAdjacency& w, double tau,
                                  std::vector<std::string> names = {});

// Row-major, space separated, one matrix row per line.
void save_matrix(const Matrix& m, const std::filesystem::path& path);
Matrix load_matrix(const std::filesystem::path& path);
std::string format_matrix(const Matrix& m);
Matrix parse_matrix(const std::string& text);

}  // namespace cinn::discovery
