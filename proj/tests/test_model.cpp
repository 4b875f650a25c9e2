#include <doctest.h>

#include <random>

#include "cinn/error.hpp"
#include "cinn/model.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cinn;
using namespace cinn::model;
using graph::CausalDag;
using graph::partition_dag;
using support::Toy;

namespace {

CinnArchitecture compile(const CausalDag& dag, Vertex target, Widths w = {}) {
  return CinnArchitecture::compile(partition_dag(dag), dag, target, w);
}

Matrix gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Non-zero biases so that gradient checks exercise every block.
ParamStore random_params(const CinnArchitecture& a, std::mt19937_64& rng) {
  auto p = a.init_params(rng());
  for (ad::ParamId i = 0; i < p.n_blocks(); ++i)
    if (!a.param_specs()[i].weight) p.value(i) = gaussian(p.value(i).rows(), 1, rng, 0.3);
  return p;
}

Batch random_batch(const CinnArchitecture& a, Eigen::Index n, std::mt19937_64& rng) {
  return make_batch(a, gaussian(n, static_cast<Eigen::Index>(a.dag().n_vertices()), rng));
}

void set(ParamStore& p, const std::string& name, std::initializer_list<double> values) {
  auto& m = p.value(p.id(name));
  REQUIRE(static_cast<std::size_t>(m.size()) == values.size());
  std::copy(values.begin(), values.end(), m.data());
}

// 0 -> 1 with every width 1 and every unit active on inputs in [-1, 1]:
// d(out)/d(x) = slope exactly.
ParamStore linear_single_edge(const CinnArchitecture& a, double slope) {
  auto p = a.init_params(0);
  set(p, "trunk.W", {1.0});
  set(p, "trunk.b", {10.0});
  set(p, "branch_o.W", {1.0});
  set(p, "branch_o.b", {0.0});
  set(p, "fusion.W", {1.0});
  set(p, "fusion.b", {0.0});
  set(p, "out.W", {slope});
  set(p, "out.b", {0.0});
  return p;
}

Widths unit_widths() { return {1, 1, 1, 1}; }

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("boston housing architecture") {
    const auto a = compile(support::bh_refined(), 13);
    CHECK(a.input_size() == 8);
    CHECK(a.n_layers() == 1);
    CHECK(a.layer(0) == std::vector<Vertex>{1, 2, 13});
    CHECK(a.n_outputs() == 3);
    CHECK(a.fusion_sources() == std::vector<Vertex>{1, 2, 13});
    CHECK(a.head_of(13) == std::make_pair(std::size_t{0}, Eigen::Index{2}));
    CHECK(a.head_of(11) == std::make_pair(std::size_t{1}, Eigen::Index{2}));
    CHECK_FALSE(a.is_modeled(12));
    // trunk 8->32, branch_b 32->16, head 16->3, branch_o 32->16, fusion 19->8, out 8->3
    CHECK(a.parameter_count() == (32 * 8 + 32) + (16 * 32 + 16) + (3 * 16 + 3) + (16 * 32 + 16) + (8 * 19 + 8) + (3 * 8 + 3));

    std::mt19937_64 rng(1);
    const auto p = a.init_params(3);
    const auto pred = forward_all(a, p, gaussian(5, 8, rng));
    REQUIRE(pred.layers.size() == 1);
    CHECK(pred.layers[0].rows() == 5);
    CHECK(pred.layers[0].cols() + pred.outputs.cols() == 6);
    const auto summary = a.summary();
    CHECK(summary.find("13:MEDV") != std::string::npos);
    CHECK(summary.find("parameters  " + std::to_string(a.parameter_count())) != std::string::npos);
  }

  TEST_CASE("no intermediates: trunk, output branch and heads only") {
    const CausalDag d(4, {{0, 3}, {1, 3}, {2, 3}});
    const auto a = compile(d, 3);
    CHECK(a.n_layers() == 0);
    std::vector<std::string> names;
    for (const auto& s : a.param_specs()) names.push_back(s.name);
    CHECK(names == std::vector<std::string>{"trunk.W", "trunk.b", "branch_o.W", "branch_o.b", "fusion.W", "fusion.b", "out.W", "out.b"});
    std::mt19937_64 rng(2);
    const auto b = random_batch(a, 7, rng);
    CHECK(loss_mse(a, a.init_params(0), b).first == 0.0);
  }

  TEST_CASE("toy graph compiles to two stacked head layers") {
    const auto a = compile(support::toy_graph(), Toy::X9);
    REQUIRE(a.n_layers() == 2);
    CHECK(a.layer(0).size() == 4);
    CHECK(a.layer(1).size() == 1);
    CHECK(a.input_size() == 3);
    // X8's head sees the branch units plus only its parents X4 and Y among the first-layer heads
    const auto& mask = a.head_mask(1);
    CHECK(mask.cols() == 16 + 4);
    for (std::size_t e = 0; e < 4; ++e) {
      const Vertex v = a.layer(0)[e];
      CHECK(mask(0, 16 + static_cast<Eigen::Index>(e)) == ((v == Toy::X4 || v == Toy::Y) ? 1.0 : 0.0));
    }
    CHECK(a.head_mask(0).isOnes());
  }

  TEST_CASE("isolated variables can be promoted to inputs") {
    const auto d = support::toy_graph();
    const auto a = CinnArchitecture::compile(partition_dag(d), d, Toy::X9, {}, true);
    CHECK(a.roots() == std::vector<Vertex>{Toy::X1, Toy::X2, Toy::X3, Toy::X11, Toy::X12});
    CHECK(a.partition().isolated.empty());
  }

  TEST_CASE("compile errors") {
    const auto d = support::toy_graph();
    CHECK_THROWS_AS(compile(d, Toy::X1), Error);   // root
    CHECK_THROWS_AS(compile(d, Toy::X11), Error);  // isolated
    CHECK_THROWS_AS(compile(CausalDag(2), 1), Error);
    CHECK_THROWS_AS(compile(d, Toy::X9, {0, 16, 16, 8}), Error);
    try {
      compile(d, Toy::X1);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kGraph);
    }
  }

  TEST_CASE("zero parameters predict zero") {
    const auto a = compile(support::toy_graph(), Toy::X9);
    auto p = a.init_params(0);
    p.assign(Vector::Zero(p.total_size()));
    std::mt19937_64 rng(4);
    const auto pred = forward_all(a, p, gaussian(3, 3, rng));
    for (const auto& l : pred.layers) CHECK(l.isZero());
    CHECK(pred.outputs.isZero());
  }

  TEST_CASE("single edge network equals the plain stacked regressor") {
    const CausalDag d(2, {{0, 1}});
    const auto a = compile(d, 1);
    std::mt19937_64 rng(5);
    const auto p = random_params(a, rng);
    const Matrix x = gaussian(9, 1, rng);
    const Vector y = predict_target(a, p, x, 1);

    ad::Tape tape;
    const auto in = tape.input("x", 1);
    auto h = tape.relu(tape.affine(in, p.id("trunk.W"), p.id("trunk.b")));
    h = tape.relu(tape.affine(h, p.id("branch_o.W"), p.id("branch_o.b")));
    h = tape.relu(tape.affine(h, p.id("fusion.W"), p.id("fusion.b")));
    const auto out = tape.affine(h, p.id("out.W"), p.id("out.b"));
    tape.set_input(in, x);
    tape.forward(p);
    CHECK(tape.value(out).col(0) == y);
  }

  TEST_CASE("squared error examples") {
    const auto a = compile(support::toy_graph(), Toy::X9);
    std::mt19937_64 rng(6);
    const auto p = random_params(a, rng);
    const Matrix roots = gaussian(4, 3, rng);
    const auto pred = forward_all(a, p, roots);
    Batch exact{roots, Matrix(4, 5), pred.outputs};
    exact.intermediates << pred.layers[0], pred.layers[1];
    const auto [b, o] = loss_mse(a, p, exact);
    CHECK(b == 0.0);
    CHECK(o == 0.0);

    const CausalDag d(2, {{0, 1}});
    const auto s = compile(d, 1);
    const auto q = s.init_params(1);
    const Matrix one = Matrix::Constant(1, 1, 0.25);
    const double yhat = predict_target(s, q, one, 1)(0);
    const Batch off{one, Matrix(1, 0), Matrix::Constant(1, 1, yhat + 2.0)};
    CHECK(loss_mse(s, q, off).second == doctest::Approx(4.0).epsilon(1e-15));
  }

  TEST_CASE("squared error equals the index-loop sum") {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 20; ++t) {
      const auto a = compile(t % 2 ? support::toy_graph() : support::bh_refined(), t % 2 ? Toy::X9 : 13);
      const auto p = random_params(a, rng);
      const auto batch = random_batch(a, 1 + static_cast<Eigen::Index>(rng() % 40), rng);
      const auto pred = forward_all(a, p, batch.roots);
      std::vector<Matrix> obs;
      Eigen::Index col = 0;
      for (const auto& l : pred.layers) {
        obs.push_back(batch.intermediates.middleCols(col, l.cols()));
        col += l.cols();
      }
      const auto expect = oracle::squared_error_loops(obs, pred.layers, batch.leaves, pred.outputs);
      const auto got = loss_mse(a, p, batch);
      CHECK(std::abs(got.first - expect.first) < 1e-12);
      CHECK(std::abs(got.second - expect.second) < 1e-12);
    }
  }

  TEST_CASE("masked connectivity: non-parent heads do not influence a head") {
    const auto a = compile(support::toy_graph(), Toy::X9);
    std::mt19937_64 rng(8);
    auto p = random_params(a, rng);
    const Matrix roots = gaussian(6, 3, rng);
    const auto before = forward_all(a, p, roots);
    const auto x5 = a.head_of(Toy::X5)->second;
    const auto x6 = a.head_of(Toy::X6)->second;
    auto& w = p.value(p.id("head1.W"));
    w.row(x5).setConstant(3.0);
    w.row(x6).setZero();
    p.value(p.id("head2.W")).rightCols(4).setConstant(-2.0);  // masked entries are ignored
    const auto after = forward_all(a, p, roots);
    CHECK(after.layers[1] != before.layers[1]);  // the X4/Y columns were changed too
    p.value(p.id("head2.W")).rightCols(4) = Matrix::Zero(1, 4);
    auto q = p;
    q.value(q.id("head1.W")).row(x5).setConstant(-9.0);
    CHECK(forward_all(a, q, roots).layers[1] == forward_all(a, p, roots).layers[1]);
  }

  TEST_CASE("domain prior on a hand-built linear network") {
    const CausalDag d(2, {{0, 1}});
    const auto a = compile(d, 1, unit_widths());
    const Batch batch{Matrix::Constant(5, 1, 0.3), Matrix(5, 0), Matrix::Zero(5, 1)};
    const DomainPrior prior{0, 1, Relation::kAtMost, 0.0, 0.01};
    CHECK(std::abs(loss_domain(a, linear_single_edge(a, 0.5), batch, {prior}) - 0.49) < 1e-15);
    CHECK(loss_domain(a, linear_single_edge(a, -0.5), batch, {prior}) == 0.0);
    CHECK(loss_domain(a, linear_single_edge(a, 0.5), batch, {}) == 0.0);
    const DomainPrior above{0, 1, Relation::kAtLeast, 0.0, 0.01};
    CHECK(loss_domain(a, linear_single_edge(a, 0.5), batch, {above}) == 0.0);
    const DomainPrior equal{0, 1, Relation::kEqual, 0.2, 0.1};
    CHECK(std::abs(loss_domain(a, linear_single_edge(a, -0.5), batch, {equal}) - 0.6) < 1e-15);
  }

  TEST_CASE("prior derivatives agree with Jacobians for root and intermediate causes") {
    const auto a = compile(support::toy_graph(), Toy::X9);
    std::mt19937_64 rng(9);
    const auto p = random_params(a, rng);
    const auto batch = random_batch(a, 12, rng);
    // ">= B" with a huge B makes the penalty B - mean(derivative)
    const double big = 1e3;
    auto mean_derivative = [&](Vertex cause, Vertex effect) {
      return big - loss_domain(a, p, batch, {{cause, effect, Relation::kAtLeast, big, 0.0}});
    };
    CinnNet net(a);
    net.forward_all(p, batch.roots);
    auto& tape = net.tape();
    auto port = [&](Vertex v) {
      const auto [layer, col] = *a.head_of(v);
      return ad::Port{layer < a.n_layers() ? net.layer_slot(layer) : net.outputs_slot(), col};
    };
    const std::vector<std::pair<Vertex, Vertex>> pairs{{Toy::X1, Toy::X4}, {Toy::X1, Toy::X8}, {Toy::X1, Toy::X9},
                                                       {Toy::X2, Toy::X10}, {Toy::X4, Toy::X8}, {Toy::Y, Toy::X9},
                                                       {Toy::X4, Toy::X7}, {Toy::X8, Toy::X9}};
    for (const auto& [cause, effect] : pairs) {
      const auto in = a.partition().is_root(cause)
                          ? ad::Port{net.roots_slot(), static_cast<Eigen::Index>(std::find(a.roots().begin(), a.roots().end(), cause) - a.roots().begin())}
                          : port(cause);
      const auto jac = tape.jacobian(p, {port(effect)}, {in});
      double mean = 0.0;
      for (const auto& j : jac) mean += j(0, 0);
      mean /= static_cast<double>(jac.size());
      CHECK(mean_derivative(cause, effect) == doctest::Approx(mean).epsilon(1e-9));
    }
  }

  TEST_CASE("priors must follow a directed path from a modeled cause") {
    const auto a = compile(support::toy_graph(), Toy::X9);
    CHECK_NOTHROW(a.validate_prior({Toy::X1, Toy::X9, Relation::kAtMost}));
    CHECK_THROWS_AS(a.validate_prior({Toy::X3, Toy::X9, Relation::kAtMost}), Error);   // no path
    CHECK_THROWS_AS(a.validate_prior({Toy::X9, Toy::X1, Relation::kAtMost}), Error);   // wrong direction
    CHECK_THROWS_AS(a.validate_prior({Toy::X7, Toy::X9, Relation::kAtMost}), Error);   // leaf cause
    CHECK_THROWS_AS(a.validate_prior({Toy::X11, Toy::X9, Relation::kAtMost}), Error);  // isolated
    CHECK_THROWS_AS(CinnNet(a, {{{Toy::X3, Toy::X9, Relation::kAtMost}}}), Error);
  }

  TEST_CASE("prior text round-trip") {
    const auto p = parse_prior("d13/d12 <= 0 eps 0.01");
    CHECK(p == DomainPrior{12, 13, Relation::kAtMost, 0.0, 0.01});
    CHECK(parse_prior("d11/d4 >= -0.5").relation == Relation::kAtLeast);
    CHECK(parse_prior("d11/d4 >= -0.5").margin == 0.01);
    CHECK(parse_prior("d3/d1 = 0 eps 0.05").relation == Relation::kEqual);
    CHECK(parse_prior(format_prior(p)) == p);
    CHECK_THROWS_AS(parse_prior("d13 <= 0"), Error);
    CHECK_THROWS_AS(parse_prior("d1/d1 <= 0"), Error);
    CHECK_THROWS_AS(parse_prior("d2/d1 <= 0 eps -1"), Error);
  }

  TEST_CASE("total loss") {
    CHECK(total_loss(1, 2, 3, 0).total == 3.0);
    CHECK(total_loss(1, 2, 3, 1).total == 6.0);
    CHECK_THROWS_AS(total_loss(1, std::nan(""), 0, 1), Error);

    const auto a = compile(support::bh_refined(), 13);
    std::mt19937_64 rng(10);
    const auto p = random_params(a, rng);
    const auto batch = random_batch(a, 20, rng);
    const std::vector<DomainPrior> priors{parse_prior("d13/d12 <= 0"), parse_prior("d11/d4 <= 0"), parse_prior("d13/d5 >= 0")};
    const auto l1 = CinnNet(a, {priors, 1.0}).evaluate(p, batch);
    const auto l3 = CinnNet(a, {priors, 3.0}).evaluate(p, batch);
    CHECK(l1.domain == l3.domain);
    CHECK(l3.total - l1.total == doctest::Approx(2.0 * l1.domain).epsilon(1e-12));

    // satisfied priors contribute nothing
    const std::vector<DomainPrior> loose{{12, 13, Relation::kAtMost, 1e6, 0.01}};
    const auto sat = CinnNet(a, {loose, 1.0}).evaluate(p, batch);
    CHECK(sat.domain == 0.0);
    CHECK(sat.total == sat.mse_b + sat.mse_o);
  }

  TEST_CASE("composite gradient matches finite differences and the task sum") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 6; ++t) {
      const bool toy = t % 2;
      const auto a = compile(toy ? support::toy_graph() : support::bh_refined(), toy ? Toy::X9 : 13, {6, 5, 4, 3});
      const std::vector<DomainPrior> priors =
          toy ? std::vector<DomainPrior>{{Toy::X1, Toy::X9, Relation::kAtMost, -0.2, 0.0}, {Toy::X4, Toy::X8, Relation::kEqual, 0.3, 0.01}}
              : std::vector<DomainPrior>{parse_prior("d13/d12 <= -0.1"), parse_prior("d11/d13 >= 0.5"), parse_prior("d6/d1 = 0.2")};
      CinnNet net(a, {priors, 0.7});
      const auto p = random_params(a, rng);
      const auto batch = random_batch(a, 8, rng);
      const Vector g = net.total_gradient(p, batch);
      const Vector fd = oracle::central_diff(
          [&](const Vector& v) {
            auto q = p;
            q.assign(v);
            return net.evaluate(q, batch).total;
          },
          p.flatten(), 1e-6);
      CHECK(oracle::rel_err(g, fd) < 1e-4);

      const auto tasks = net.task_gradients(p, batch);
      REQUIRE(tasks.size() == 3);
      CHECK(oracle::rel_err(tasks[0] + tasks[1] + tasks[2], g) < 1e-12);

      CinnNet granular(a, {priors, 0.7, true});
      const auto per_node = granular.task_gradients(p, batch);
      CHECK(per_node.size() == a.n_intermediate() + a.n_outputs() + 1);
      Vector sum = Vector::Zero(g.size());
      for (const auto& v : per_node) sum += v;
      CHECK(oracle::rel_err(sum, g) < 1e-12);
    }
  }

  TEST_CASE("predict_target") {
    const auto a = compile(support::bh_refined(), 13);
    std::mt19937_64 rng(12);
    const auto p = random_params(a, rng);
    const Matrix roots = gaussian(4, 8, rng);
    const auto pred = forward_all(a, p, roots);
    CHECK(predict_target(a, p, roots, 13) == Vector(pred.layers[0].col(2)));
    CHECK(predict_target(a, p, roots, 11) == Vector(pred.outputs.col(2)));
    CHECK_THROWS_AS(predict_target(a, p, roots, 12), Error);
    CHECK_THROWS_AS(forward_all(a, p, gaussian(4, 7, rng)), Error);
    CHECK_THROWS_AS(make_batch(a, gaussian(4, 7, rng)), Error);
  }

  TEST_CASE("wine quality style graph: quality head is a leaf output") {
    // eleven inputs feeding quality (11) through two intermediates
    std::set<graph::Edge> e{{5, 11}, {6, 11}, {3, 11}, {4, 11}, {7, 11}, {10, 7}, {0, 7}, {1, 10}};
    const CausalDag d(12, e);
    const auto a = compile(d, 11);
    CHECK(a.head_of(11)->first == a.n_layers());
    std::mt19937_64 rng(13);
    const auto p = a.init_params(1);
    CHECK(predict_target(a, p, gaussian(3, static_cast<Eigen::Index>(a.input_size()), rng), 11).size() == 3);
  }
}
