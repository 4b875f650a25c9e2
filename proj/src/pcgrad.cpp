#include "cinn/pcgrad.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "cinn/error.hpp"

namespace cinn::pcgrad {

double cosine_similarity(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::kShape, "cosine_similarity: length mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

Vector project_out(const Vector& g, const Vector& onto) {
  if (g.size() != onto.size()) throw Error(ErrorKind::kShape, "project_out: length mismatch");
  const double nn = onto.squaredNorm();
  if (nn == 0.0) return g;
  return g - (g.dot(onto) / nn) * onto;
}

Vector combine(const TaskGradients& tasks) {
  const auto& g = tasks.gradients;
  if (g.empty()) throw Error(ErrorKind::kShape, "pcgrad: no task gradients");
  for (const auto& v : g) {
    if (v.size() != g.front().size()) throw Error(ErrorKind::kShape, "pcgrad: task gradients differ in length");
    if (!v.allFinite()) throw Error(ErrorKind::kNumeric, "pcgrad: non-finite task gradient");
  }
  std::mt19937_64 rng(tasks.rng_seed);
  Vector total = Vector::Zero(g.front().size());
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < g.size(); ++i) {
    Vector pc = g[i];
    order.clear();
    for (std::size_t j = 0; j < g.size(); ++j)
      if (j != i) order.push_back(j);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t j : order) {
      if (cosine_similarity(pc, g[j]) < 0.0) pc = project_out(pc, g[j]);
    }
    total += pc;
  }
  return total;
}

}  // namespace cinn::pcgrad
