#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace cinn::pcgrad {

using Vector = Eigen::VectorXd;

struct TaskGradients {
  std::vector<Vector> gradients;
  std::uint64_t rng_seed = 0;
};

// a.b / (|a| |b|); 0 when either vector is zero.
double cosine_similarity(const Vector& a, const Vector& b);

// g - (g.onto / |onto|^2) onto; g unchanged when onto is zero.
Vector project_out(const Vector& g, const Vector& onto);

// For every task i, visits the other tasks in a seeded random order and removes
// the component along the original gradient of any task it conflicts with.
// Returns the sum of the projected gradients.
Vector combine(const TaskGradients& tasks);

}  // namespace cinn::pcgrad
