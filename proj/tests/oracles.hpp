#pragma once

// Slow, obvious reference implementations the library is checked against.

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Edge = std::pair<std::size_t, std::size_t>;

inline Matrix taylor_expm(const Matrix& m, int terms = 60) {
  Matrix out = Matrix::Identity(m.rows(), m.cols());
  Matrix term = out;
  for (int k = 1; k < terms; ++k) {
    term = term * m / static_cast<double>(k);
    out += term;
  }
  return out;
}

inline bool has_cycle(std::size_t n, const std::set<Edge>& edges) {
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& [u, v] : edges) adj[u].push_back(v);
  std::vector<int> color(n, 0);  // 0 new, 1 on stack, 2 done
  std::function<bool(std::size_t)> visit = [&](std::size_t u) {
    color[u] = 1;
    for (auto v : adj[u]) {
      if (color[v] == 1) return true;
      if (color[v] == 0 && visit(v)) return true;
    }
    color[u] = 2;
    return false;
  };
  for (std::size_t u = 0; u < n; ++u)
    if (color[u] == 0 && visit(u)) return true;
  return false;
}

// Longest path (in edges) from any source; roots and isolated vertices get 0.
inline std::vector<std::size_t> depth_from_sources(std::size_t n, const std::set<Edge>& edges) {
  std::vector<std::size_t> depth(n, 0);
  for (std::size_t pass = 0; pass < n; ++pass)
    for (const auto& [u, v] : edges) depth[v] = std::max(depth[v], depth[u] + 1);
  return depth;
}

inline Vector central_diff(const std::function<double(const Vector&)>& f, Vector x, double step) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + step;
    const double up = f(x);
    x[i] = x0 - step;
    const double down = f(x);
    x[i] = x0;
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

inline Matrix central_diff(const std::function<double(const Matrix&)>& f, Matrix x, double step) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double x0 = x(i, j);
      x(i, j) = x0 + step;
      const double up = f(x);
      x(i, j) = x0 - step;
      const double down = f(x);
      x(i, j) = x0;
      g(i, j) = (up - down) / (2 * step);
    }
  return g;
}

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max(1.0, std::max(a.norm(), b.norm()));
}

// Multi-output squared error summed over every index, divided by N.
// obs_b / pred_b hold one N x K[j] block per intermediate layer.
inline std::pair<double, double> squared_error_loops(const std::vector<Matrix>& obs_b, const std::vector<Matrix>& pred_b,
                                           const Matrix& obs_o, const Matrix& pred_o) {
  const auto n = obs_o.rows();
  double b = 0.0, o = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < obs_b.size(); ++j)
      for (Eigen::Index k = 0; k < obs_b[j].cols(); ++k) {
        const double e = obs_b[j](i, k) - pred_b[j](i, k);
        b += e * e;
      }
    for (Eigen::Index z = 0; z < obs_o.cols(); ++z) {
      const double e = obs_o(i, z) - pred_o(i, z);
      o += e * e;
    }
  }
  return {b / static_cast<double>(n), o / static_cast<double>(n)};
}

// Random DAG on n vertices: each pair (i < j in a random order) gets an edge with probability p.
inline std::set<Edge> random_dag(std::size_t n, double p, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::bernoulli_distribution coin(p);
  std::set<Edge> edges;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      if (coin(rng)) edges.insert({order[a], order[b]});
  return edges;
}

struct Sem {
  std::set<Edge> edges;
  Matrix weights;
  Matrix data;
};

// Linear SEM with weights in +-[0.5, 2] and unit Gaussian noise.
inline Sem sample_sem(std::size_t n_vars, std::size_t n_rows, double p, std::mt19937_64& rng) {
  Sem s;
  s.edges = random_dag(n_vars, p, rng);
  s.weights = Matrix::Zero(n_vars, n_vars);
  std::uniform_real_distribution<double> mag(0.5, 2.0);
  std::bernoulli_distribution sign(0.5);
  for (const auto& [u, v] : s.edges) s.weights(u, v) = sign(rng) ? mag(rng) : -mag(rng);
  const auto depth = depth_from_sources(n_vars, s.edges);
  std::vector<std::size_t> order(n_vars);
  for (std::size_t i = 0; i < n_vars; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return depth[a] < depth[b]; });
  std::normal_distribution<double> noise(0.0, 1.0);
  s.data = Matrix::Zero(n_rows, n_vars);
  for (std::size_t r = 0; r < n_rows; ++r)
    for (auto v : order) {
      double x = noise(rng);
      for (std::size_t u = 0; u < n_vars; ++u) x += s.data(r, u) * s.weights(u, v);
      s.data(r, v) = x;
    }
  return s;
}

}  // namespace oracle
