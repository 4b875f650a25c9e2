#include <doctest.h>

#include <cmath>
#include <random>

#include "cinn/error.hpp"
#include "cinn/pcgrad.hpp"

using namespace cinn;
using namespace cinn::pcgrad;

namespace {

Vector v2(double a, double b) { return (Vector(2) << a, b).finished(); }

Vector gaussian(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

}  // namespace

TEST_SUITE("pcgrad") {
  TEST_CASE("cosine similarity") {
    const Vector a = v2(3, 4);
    CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
    CHECK(cosine_similarity(a, -a) == doctest::Approx(-1.0));
    CHECK(cosine_similarity(v2(1, 0), v2(0, 2)) == 0.0);
    CHECK(cosine_similarity(v2(0, 0), a) == 0.0);
    CHECK_THROWS_AS(cosine_similarity(a, Vector::Zero(3)), Error);
  }

  TEST_CASE("projection") {
    const Vector p = project_out(v2(1, 0), v2(-1, 1));
    CHECK((p - v2(0.5, 0.5)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(p.dot(v2(-1, 1))) < 1e-12);
    CHECK(project_out(v2(1, 0), v2(0, 3)) == v2(1, 0));
    CHECK(project_out(v2(2, 4), v2(1, 2)).norm() < 1e-12);
    CHECK(project_out(v2(2, 4), v2(0, 0)) == v2(2, 4));

    std::mt19937_64 rng(1);
    for (int t = 0; t < 100; ++t) {
      const Vector g = gaussian(7, rng), o = gaussian(7, rng);
      CHECK(project_out(g, o).norm() <= g.norm() + 1e-12);
    }
  }

  TEST_CASE("worked examples") {
    CHECK(combine({{v2(1, 0), v2(0, 1)}, 3}) == v2(1, 1));
    // [1,0] loses its [-1,1] component and [-1,1] loses its [1,0] component
    const Vector c = combine({{v2(1, 0), v2(-1, 1)}, 0});
    CHECK((c - v2(0.5, 1.5)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(combine({{v2(-2, 5)}, 9}) == v2(-2, 5));
    CHECK_THROWS_AS(combine({{}, 0}), Error);
    CHECK_THROWS_AS(combine({{v2(1, 0), Vector::Zero(3)}, 0}), Error);
    CHECK_THROWS_AS(combine({{v2(1, std::nan(""))}, 0}), Error);
  }

  TEST_CASE("two conflicting tasks no longer conflict after projection") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 100; ++t) {
      const Vector a = gaussian(6, rng), b = gaussian(6, rng);
      Vector pa = a, pb = b;
      if (cosine_similarity(a, b) < 0) {
        pa = project_out(a, b);
        pb = project_out(b, a);
      }
      CHECK(pa.dot(b) >= -1e-12);
      CHECK(pb.dot(a) >= -1e-12);
      CHECK((combine({{a, b}, rng()}) - (pa + pb)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("no conflict means a plain sum") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 50; ++t) {
      std::vector<Vector> g;
      for (int k = 0; k < 4; ++k) g.push_back(gaussian(5, rng).cwiseAbs());
      g.push_back(Vector::Zero(5));
      const Vector sum = g[0] + g[1] + g[2] + g[3];
      CHECK(combine({g, rng()}) == sum);
    }
  }

  TEST_CASE("projections use the original gradients and the order is seeded") {
    std::mt19937_64 rng(4);
    bool order_matters = false;
    for (int t = 0; t < 50; ++t) {
      std::vector<Vector> g{gaussian(3, rng), gaussian(3, rng), gaussian(3, rng)};
      const Vector a = combine({g, 11});
      CHECK(combine({g, 11}) == a);
      // reference: task i projected in the same shuffled order
      std::mt19937_64 order_rng(11);
      Vector ref = Vector::Zero(3);
      for (std::size_t i = 0; i < 3; ++i) {
        std::vector<std::size_t> others;
        for (std::size_t j = 0; j < 3; ++j)
          if (j != i) others.push_back(j);
        std::shuffle(others.begin(), others.end(), order_rng);
        Vector pc = g[i];
        for (auto j : others)
          if (pc.dot(g[j]) < 0) pc -= pc.dot(g[j]) / g[j].squaredNorm() * g[j];
        ref += pc;
      }
      CHECK((a - ref).cwiseAbs().maxCoeff() < 1e-12);
    }
    // with several mutually conflicting tasks the visiting order changes the result
    for (int t = 0; t < 50 && !order_matters; ++t) {
      std::vector<Vector> g;
      for (int k = 0; k < 5; ++k) g.push_back(gaussian(2, rng));
      const Vector a = combine({g, 0});
      for (std::uint64_t s = 1; s < 10; ++s) order_matters = order_matters || (combine({g, s}) - a).norm() > 1e-9;
    }
    CHECK(order_matters);
  }
}
