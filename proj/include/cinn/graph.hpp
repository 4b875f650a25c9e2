#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace cinn::graph {

using Vertex = std::size_t;
using Edge = std::pair<Vertex, Vertex>;  // (from, to)

bool is_acyclic(std::size_t n_vertices, const std::set<Edge>& edges);

// Immutable directed acyclic graph. Construction validates vertex ranges,
// rejects self-loops and rejects cycles.
class CausalDag {
 public:
  CausalDag() = default;
  explicit CausalDag(std::size_t n_vertices, std::set<Edge> edges = {},
                     std::vector<std::string> names = {});

  std::size_t n_vertices() const { return n_; }
  const std::vector<std::string>& names() const { return names_; }
  std::string name(Vertex v) const;
  const std::set<Edge>& edges() const { return edges_; }
  std::size_t n_edges() const { return edges_.size(); }

  bool has_edge(Vertex from, Vertex to) const { return edges_.count({from, to}) > 0; }
  std::vector<Vertex> parents(Vertex v) const;
  std::vector<Vertex> children(Vertex v) const;
  std::size_t in_degree(Vertex v) const { return parents(v).size(); }
  std::size_t out_degree(Vertex v) const { return children(v).size(); }

  std::vector<Vertex> topological_order() const;
  // True when a directed path of length >= 1 leads from `from` to `to`.
  bool reaches(Vertex from, Vertex to) const;
  std::vector<Vertex> ancestors(Vertex v) const;

 private:
  std::size_t n_ = 0;
  std::set<Edge> edges_;
  std::vector<std::string> names_;
};

// Edge set {(i, j) : |w(i, j)| >= tau}. When both directions pass the
// threshold the larger magnitude wins (ties keep i < j). Throws on cycles.
CausalDag from_adjacency(const Eigen::MatrixXd& w, double tau,
                         std::vector<std::string> names = {});

struct Edit {
  enum class Kind { kRemove, kAdd, kReverse };
  Kind kind;
  Vertex from;
  Vertex to;

  bool operator==(const Edit&) const = default;
};

using RefinementScript = std::vector<Edit>;

// One edit per line: `remove i j`, `add i j`, `reverse i j`. '#' starts a comment.
RefinementScript parse_refinement(const std::string& text);
RefinementScript load_refinement(const std::filesystem::path& path);
std::string format_refinement(const RefinementScript& script);
RefinementScript inverse(const RefinementScript& script);

// Applies edits in order, validating acyclicity after each one. Errors name the
// zero-based index of the offending edit.
CausalDag apply_refinement(const CausalDag& dag, const RefinementScript& script);

struct NodePartition {
  std::vector<Vertex> isolated;                  // V_S
  std::vector<Vertex> roots;                     // V_C
  std::vector<Vertex> intermediate;              // V_B, all layers
  std::vector<std::vector<Vertex>> layers;       // V_B^1 .. V_B^R (empty until layered)
  std::vector<Vertex> leaves;                    // V_O

  std::size_t n_layers() const { return layers.size(); }
  std::size_t total_vertices() const;
  // 0 for roots, j for V_B^j, -1 otherwise.
  int layer_of(Vertex v) const;
  bool is_root(Vertex v) const;
  bool is_leaf(Vertex v) const;
  bool is_intermediate(Vertex v) const;
};

NodePartition categorize_nodes(const CausalDag& dag);
NodePartition layer_intermediates(const CausalDag& dag, NodePartition partition);
inline NodePartition partition_dag(const CausalDag& dag) {
  return layer_intermediates(dag, categorize_nodes(dag));
}

// Plain-text DAG file: `vertices N`, optional `names a b ...`, then `i j` per edge.
CausalDag load_dag(const std::filesystem::path& path);
void save_dag(const CausalDag& dag, const std::filesystem::path& path);
std::string format_dag(const CausalDag& dag);
CausalDag parse_dag(const std::string& text);

// Structural Hamming distance: additions + deletions + reversals (a reversal counts once).
std::size_t structural_hamming_distance(const CausalDag& a, const CausalDag& b);

}  // namespace cinn::graph
