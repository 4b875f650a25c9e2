#include "cinn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>

#include "cinn/error.hpp"

namespace cinn::graph {

bool is_acyclic(std::size_t n_vertices, const std::set<Edge>& edges) {
  std::vector<std::size_t> indeg(n_vertices, 0);
  std::vector<std::vector<Vertex>> out(n_vertices);
  for (const auto& [u, v] : edges) {
    out[u].push_back(v);
    ++indeg[v];
  }
  std::queue<Vertex> ready;
  for (Vertex v = 0; v < n_vertices; ++v)
    if (indeg[v] == 0) ready.push(v);
  std::size_t seen = 0;
  while (!ready.empty()) {
    const Vertex u = ready.front();
    ready.pop();
    ++seen;
    for (Vertex v : out[u])
      if (--indeg[v] == 0) ready.push(v);
  }
  return seen == n_vertices;
}

CausalDag::CausalDag(std::size_t n_vertices, std::set<Edge> edges, std::vector<std::string> names)
    : n_(n_vertices), edges_(std::move(edges)), names_(std::move(names)) {
  if (!names_.empty() && names_.size() != n_) {
    throw Error(ErrorKind::kShape, "CausalDag: " + std::to_string(names_.size()) + " names for " +
                                       std::to_string(n_) + " vertices");
  }
  for (const auto& [u, v] : edges_) {
    if (u >= n_ || v >= n_) {
      throw Error(ErrorKind::kGraph, "edge [" + std::to_string(u) + ", " + std::to_string(v) +
                                         "] references a vertex outside 0.." + std::to_string(n_ - 1));
    }
    if (u == v) throw Error(ErrorKind::kGraph, "self-loop on vertex " + std::to_string(u));
  }
  if (!is_acyclic(n_, edges_)) throw Error(ErrorKind::kGraph, "graph contains a cycle");
}

std::string CausalDag::name(Vertex v) const {
  return names_.empty() ? std::to_string(v) : names_.at(v);
}

std::vector<Vertex> CausalDag::parents(Vertex v) const {
  std::vector<Vertex> p;
  for (const auto& [a, b] : edges_)
    if (b == v) p.push_back(a);
  return p;
}

std::vector<Vertex> CausalDag::children(Vertex v) const {
  std::vector<Vertex> c;
  for (auto it = edges_.lower_bound({v, 0}); it != edges_.end() && it->first == v; ++it) c.push_back(it->second);
  return c;
}

std::vector<Vertex> CausalDag::topological_order() const {
  std::vector<std::size_t> indeg(n_, 0);
  for (const auto& e : edges_) ++indeg[e.second];
  // Smallest ready vertex first, so the order is canonical.
  std::priority_queue<Vertex, std::vector<Vertex>, std::greater<>> ready;
  for (Vertex v = 0; v < n_; ++v)
    if (indeg[v] == 0) ready.push(v);
  std::vector<Vertex> order;
  while (!ready.empty()) {
    const Vertex u = ready.top();
    ready.pop();
    order.push_back(u);
    for (Vertex v : children(u))
      if (--indeg[v] == 0) ready.push(v);
  }
  return order;
}

bool CausalDag::reaches(Vertex from, Vertex to) const {
  std::vector<bool> seen(n_, false);
  std::vector<Vertex> stack = children(from);
  while (!stack.empty()) {
    const Vertex u = stack.back();
    stack.pop_back();
    if (u == to) return true;
    if (seen[u]) continue;
    seen[u] = true;
    for (Vertex c : children(u)) stack.push_back(c);
  }
  return false;
}

std::vector<Vertex> CausalDag::ancestors(Vertex v) const {
  std::vector<Vertex> out;
  for (Vertex u = 0; u < n_; ++u)
    if (u != v && reaches(u, v)) out.push_back(u);
  return out;
}

CausalDag from_adjacency(const Eigen::MatrixXd& w, double tau, std::vector<std::string> names) {
  if (w.rows() != w.cols()) throw Error(ErrorKind::kShape, "adjacency matrix is not square");
  if (!(tau > 0.0)) throw Error(ErrorKind::kInput, "threshold tau must be positive");
  const auto n = static_cast<std::size_t>(w.rows());
  std::set<Edge> edges;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      if (i == j) continue;
      const double a = std::abs(w(i, j));
      if (a < tau) continue;
      const double back = std::abs(w(j, i));
      if (back >= tau && (back > a || (back == a && j < i))) continue;
      edges.insert({static_cast<Vertex>(i), static_cast<Vertex>(j)});
    }
  }
  if (!is_acyclic(n, edges)) {
    throw Error(ErrorKind::kGraph, "thresholded graph at tau=" + std::to_string(tau) +
                                       " contains a cycle; raise tau or refine");
  }
  return CausalDag(n, std::move(edges), std::move(names));
}

RefinementScript parse_refinement(const std::string& text) {
  RefinementScript script;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string verb;
    if (!(ls >> verb)) continue;
    long long a = -1;
    long long b = -1;
    std::string trailing;
    if (!(ls >> a >> b) || a < 0 || b < 0 || (ls >> trailing)) {
      throw Error(ErrorKind::kInput, "refinement script line " + std::to_string(line_no) +
                                         ": expected '<verb> i j' with non-negative indices");
    }
    Edit e{Edit::Kind::kAdd, static_cast<Vertex>(a), static_cast<Vertex>(b)};
    if (verb == "remove") {
      e.kind = Edit::Kind::kRemove;
    } else if (verb == "add") {
      e.kind = Edit::Kind::kAdd;
    } else if (verb == "reverse") {
      e.kind = Edit::Kind::kReverse;
    } else {
      throw Error(ErrorKind::kInput, "refinement script line " + std::to_string(line_no) +
                                         ": unknown edit '" + verb + "'");
    }
    script.push_back(e);
  }
  return script;
}

RefinementScript load_refinement(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kInput, "cannot open refinement script: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_refinement(ss.str());
}

std::string format_refinement(const RefinementScript& script) {
  std::ostringstream out;
  for (const auto& e : script) {
    switch (e.kind) {
      case Edit::Kind::kRemove: out << "remove "; break;
      case Edit::Kind::kAdd: out << "add "; break;
      case Edit::Kind::kReverse: out << "reverse "; break;
    }
    out << e.from << ' ' << e.to << '\n';
  }
  return out.str();
}

RefinementScript inverse(const RefinementScript& script) {
  RefinementScript inv;
  for (auto it = script.rbegin(); it != script.rend(); ++it) {
    switch (it->kind) {
      case Edit::Kind::kRemove: inv.push_back({Edit::Kind::kAdd, it->from, it->to}); break;
      case Edit::Kind::kAdd: inv.push_back({Edit::Kind::kRemove, it->from, it->to}); break;
      case Edit::Kind::kReverse: inv.push_back({Edit::Kind::kReverse, it->to, it->from}); break;
    }
  }
  return inv;
}

CausalDag apply_refinement(const CausalDag& dag, const RefinementScript& script) {
  std::set<Edge> edges = dag.edges();
  const auto n = dag.n_vertices();
  for (std::size_t k = 0; k < script.size(); ++k) {
    const auto& e = script[k];
    auto text = format_refinement({e});
    text.pop_back();
    const auto where = "edit " + std::to_string(k) + " (" + text + ")";
    if (e.from >= n || e.to >= n) throw Error(ErrorKind::kGraph, where + ": vertex out of range");
    if (e.from == e.to) throw Error(ErrorKind::kGraph, where + ": self-loop");
    switch (e.kind) {
      case Edit::Kind::kRemove:
        if (edges.erase({e.from, e.to}) == 0) throw Error(ErrorKind::kGraph, where + ": edge does not exist");
        break;
      case Edit::Kind::kAdd:
        edges.insert({e.from, e.to});
        break;
      case Edit::Kind::kReverse:
        if (edges.erase({e.from, e.to}) == 0) throw Error(ErrorKind::kGraph, where + ": edge does not exist");
        edges.insert({e.to, e.from});
        break;
    }
    if (!is_acyclic(n, edges)) throw Error(ErrorKind::kGraph, where + ": creates a cycle");
  }
  return CausalDag(n, std::move(edges), dag.names());
}

std::size_t NodePartition::total_vertices() const {
  std::size_t layered = 0;
  for (const auto& l : layers) layered += l.size();
  const std::size_t mid = layers.empty() ? intermediate.size() : layered;
  return isolated.size() + roots.size() + mid + leaves.size();
}

namespace {
bool contains(const std::vector<Vertex>& v, Vertex x) { return std::find(v.begin(), v.end(), x) != v.end(); }
}  // namespace

int NodePartition::layer_of(Vertex v) const {
  if (contains(roots, v)) return 0;
  for (std::size_t j = 0; j < layers.size(); ++j)
    if (contains(layers[j], v)) return static_cast<int>(j) + 1;
  return -1;
}

bool NodePartition::is_root(Vertex v) const { return contains(roots, v); }
bool NodePartition::is_leaf(Vertex v) const { return contains(leaves, v); }
bool NodePartition::is_intermediate(Vertex v) const { return contains(intermediate, v); }

NodePartition categorize_nodes(const CausalDag& dag) {
  NodePartition p;
  for (Vertex v = 0; v < dag.n_vertices(); ++v) {
    const bool has_in = dag.in_degree(v) > 0;
    const bool has_out = dag.out_degree(v) > 0;
    if (!has_in && !has_out) {
      p.isolated.push_back(v);
    } else if (!has_in) {
      p.roots.push_back(v);
    } else if (has_out) {
      p.intermediate.push_back(v);
    } else {
      p.leaves.push_back(v);
    }
  }
  return p;
}

NodePartition layer_intermediates(const CausalDag& dag, NodePartition partition) {
  partition.layers.clear();
  std::vector<bool> removed(dag.n_vertices(), false);
  std::vector<std::size_t> indeg(dag.n_vertices(), 0);
  for (const auto& e : dag.edges()) ++indeg[e.second];

  std::vector<Vertex> current;
  for (Vertex v = 0; v < dag.n_vertices(); ++v)
    if (indeg[v] == 0) current.push_back(v);

  std::size_t placed = 0;
  while (placed < partition.intermediate.size()) {
    if (current.empty()) {
      throw Error(ErrorKind::kGraph, "layer_intermediates: peeling stalled before all intermediates were layered");
    }
    std::vector<Vertex> next;
    for (Vertex u : current) {
      removed[u] = true;
      for (Vertex c : dag.children(u))
        if (--indeg[c] == 0) next.push_back(c);
    }
    std::sort(next.begin(), next.end());
    std::vector<Vertex> layer;
    for (Vertex v : next)
      if (contains(partition.intermediate, v)) layer.push_back(v);
    if (!layer.empty()) {
      placed += layer.size();
      partition.layers.push_back(std::move(layer));
    }
    current = std::move(next);
  }
  return partition;
}

CausalDag parse_dag(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::optional<std::size_t> n;
  std::vector<std::string> names;
  std::set<Edge> edges;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string head;
    if (!(ls >> head)) continue;
    if (head == "vertices") {
      std::size_t count = 0;
      if (!(ls >> count)) throw Error(ErrorKind::kInput, "dag file line " + std::to_string(line_no) + ": bad vertex count");
      n = count;
    } else if (head == "names") {
      std::string nm;
      while (ls >> nm) names.push_back(nm);
    } else {
      long long a = -1;
      long long b = -1;
      try {
        a = std::stoll(head);
      } catch (const std::exception&) {
        throw Error(ErrorKind::kInput, "dag file line " + std::to_string(line_no) + ": unrecognized '" + head + "'");
      }
      if (!(ls >> b) || a < 0 || b < 0) {
        throw Error(ErrorKind::kInput, "dag file line " + std::to_string(line_no) + ": expected 'i j'");
      }
      edges.insert({static_cast<Vertex>(a), static_cast<Vertex>(b)});
    }
  }
  if (!n) throw Error(ErrorKind::kInput, "dag file has no 'vertices' line");
  return CausalDag(*n, std::move(edges), std::move(names));
}

CausalDag load_dag(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kInput, "cannot open dag file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_dag(ss.str());
}

std::string format_dag(const CausalDag& dag) {
  std::ostringstream out;
  out << "vertices " << dag.n_vertices() << '\n';
  if (!dag.names().empty()) {
    out << "names";
    for (const auto& nm : dag.names()) out << ' ' << nm;
    out << '\n';
  }
  for (const auto& [u, v] : dag.edges()) out << u << ' ' << v << '\n';
  return out.str();
}

void save_dag(const CausalDag& dag, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kInput, "cannot write dag file: " + path.string());
  out << format_dag(dag);
}

std::size_t structural_hamming_distance(const CausalDag& a, const CausalDag& b) {
  if (a.n_vertices() != b.n_vertices()) throw Error(ErrorKind::kShape, "SHD: vertex counts differ");
  std::size_t shd = 0;
  const auto n = a.n_vertices();
  for (Vertex i = 0; i < n; ++i) {
    for (Vertex j = i + 1; j < n; ++j) {
      const bool a_ij = a.has_edge(i, j), a_ji = a.has_edge(j, i);
      const bool b_ij = b.has_edge(i, j), b_ji = b.has_edge(j, i);
      if (a_ij != b_ij || a_ji != b_ji) ++shd;
    }
  }
  return shd;
}

}  // namespace cinn::graph
