#pragma once

#include <random>

#include "cinn/autodiff.hpp"
#include "oracles.hpp"

namespace fixtures {

using namespace cinn::ad;

inline Matrix gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Two hidden ReLU layers with a mix of auxiliary ops, reduced to one scalar.
struct RandomNet {
  ParamStore params;
  Tape tape;
  Slot x = 0, t = 0, hidden = 0, out = 0, loss = 0;
  Matrix xv, tv;

  explicit RandomNet(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> width(2, 6);
    const int in = width(rng), h1 = width(rng), h2 = width(rng), o = width(rng);
    const Eigen::Index rows = 1 + rng() % 7;
    const auto w1 = params.add("w1", gaussian(h1, in, rng));
    const auto b1 = params.add("b1", gaussian(h1, 1, rng));
    const auto w2 = params.add("w2", gaussian(h2, h1 + in, rng));
    const auto w3 = params.add("w3", gaussian(o, h2, rng));
    const auto b3 = params.add("b3", gaussian(o, 1, rng));
    Matrix mask = Matrix::Ones(h2, h1 + in);
    for (Eigen::Index i = 0; i < mask.size(); ++i)
      if (rng() % 3 == 0) mask.data()[i] = 0.0;

    x = tape.input("x", in);
    t = tape.input("t", o);
    const auto a1 = tape.affine(x, w1, b1);
    hidden = tape.relu(a1);
    const auto a2 = tape.affine(tape.concat({hidden, x}), w2, std::nullopt, mask);
    const auto h2v = tape.relu(a2);
    out = tape.affine(h2v, w3, b3);
    const auto sq = tape.squared_error(out, t);
    const auto gated = tape.gate(tape.hadamard(tape.select(out, {0}), tape.select(x, {0})), tape.select(a1, {0}));
    const auto hin = tape.mean_rows(tape.hinge(gated, static_cast<HingeKind>(rng() % 3), 0.1, 0.05));
    const auto shifted = tape.add(out, tape.broadcast_row(out, Vector::Constant(o, 0.3)));
    loss = tape.sum({sq, tape.scale(hin, 0.7), tape.scale(tape.mean_rows(shifted), 0.2), tape.scale(tape.weight_abs_sum(w1), 0.01),
                     tape.scale(tape.weight_square_sum(w2), 0.02)});
    xv = gaussian(rows, in, rng);
    tv = gaussian(rows, o, rng);
  }

  double eval(const Vector& flat) {
    ParamStore p = params;
    p.assign(flat);
    tape.set_input(x, xv);
    tape.set_input(t, tv);
    tape.forward(p);
    return tape.scalar(loss);
  }
};

// Relative error of backward against central differences over all parameters.
inline double gradient_fd_error(RandomNet& net) {
  const Vector theta = net.params.flatten();
  net.eval(theta);
  const Vector g = net.tape.backward(net.params, net.loss);
  const Vector fd = oracle::central_diff([&](const Vector& v) { return net.eval(v); }, theta, 1e-6);
  return oracle::rel_err(g, fd);
}

// Worst per-row relative error of d(out)/d(x) against central differences.
inline double jacobian_fd_error(RandomNet& r) {
  r.eval(r.params.flatten());
  std::vector<Port> outs, ins;
  for (Eigen::Index c = 0; c < r.tape.width(r.out); ++c) outs.push_back({r.out, c});
  for (Eigen::Index c = 0; c < r.tape.width(r.x); ++c) ins.push_back({r.x, c});
  const auto jac = r.tape.jacobian(r.params, outs, ins);
  double worst = 0.0;
  for (Eigen::Index row = 0; row < r.xv.rows(); ++row) {
    Matrix fd(outs.size(), ins.size());
    for (std::size_t i = 0; i < ins.size(); ++i) {
      const double h = 1e-6;
      Matrix up = r.xv, down = r.xv;
      up(row, ins[i].column) += h;
      down(row, ins[i].column) -= h;
      r.tape.set_input(r.x, up);
      r.tape.forward(r.params);
      const Matrix yu = r.tape.value(r.out);
      r.tape.set_input(r.x, down);
      r.tape.forward(r.params);
      fd.col(i) = (yu.row(row) - r.tape.value(r.out).row(row)).transpose() / (2 * h);
    }
    worst = std::max(worst, oracle::rel_err(jac[row], fd));
  }
  return worst;
}

}  // namespace fixtures
