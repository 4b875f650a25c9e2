#include "cinn/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cinn/error.hpp"
#include "cinn/pcgrad.hpp"
#include "cinn/random.hpp"

namespace cinn::train {

using json = nlohmann::ordered_json;

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::kCinn: return "cinn";
    case ModelKind::kEarlyStop: return "early-stop";
    case ModelKind::kL1: return "l1";
    case ModelKind::kL2: return "l2";
    case ModelKind::kDropout: return "dropout";
    case ModelKind::kInputNoise: return "noise";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "cinn") return ModelKind::kCinn;
  if (s == "early-stop" || s == "earlystop" || s == "none") return ModelKind::kEarlyStop;
  if (s == "l1") return ModelKind::kL1;
  if (s == "l2") return ModelKind::kL2;
  if (s == "dropout") return ModelKind::kDropout;
  if (s == "noise" || s == "input-noise") return ModelKind::kInputNoise;
  throw Error(ErrorKind::kInput, "unknown model kind '" + s + "' (cinn, early-stop, l1, l2, dropout, noise)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::kInput, "training: learning_rate must be > 0");
  if (epochs < 1) throw Error(ErrorKind::kInput, "training: epochs must be >= 1");
  if (patience < 1) throw Error(ErrorKind::kInput, "training: patience must be >= 1");
  if (!(gamma >= 0.0)) throw Error(ErrorKind::kInput, "training: gamma must be >= 0");
  if (l1_alpha < 0.0 || l2_alpha < 0.0) throw Error(ErrorKind::kInput, "training: regularizer weights must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorKind::kInput, "training: dropout must be in [0, 1)");
  if (noise_sigma < 0.0) throw Error(ErrorKind::kInput, "training: noise_sigma must be >= 0");
}

void Adam::step(Vector& theta, const Vector& grad) {
  if (m_.size() != theta.size()) {
    m_ = Vector::Zero(theta.size());
    v_ = Vector::Zero(theta.size());
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  theta.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

namespace {

Matrix rows_of(const Matrix& m, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

double mse(const Vector& pred, const Matrix& data, graph::Vertex target) {
  return (pred - data.col(static_cast<Eigen::Index>(target))).squaredNorm() / static_cast<double>(std::max<Eigen::Index>(pred.size(), 1));
}

// Shared optimization loop. `step(rows, epoch)` returns (objective, gradient)
// on the given training rows; `val(params)` and `test(params)` return target MSE.
template <typename Step, typename Val, typename Test>
void fit(ParamStore& params, Eigen::Index n_train, const TrainConfig& cfg, std::size_t fold, Step&& step,
         Val&& val, Test&& test, TrainReport& report) {
  const auto t0 = std::chrono::steady_clock::now();
  Adam adam(cfg.learning_rate);
  Vector theta = params.flatten();
  auto shuffle = make_stream(cfg.seed, Stream::kShuffle, fold);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto batch = cfg.batch_size == 0 ? static_cast<std::size_t>(n_train)
                                         : std::min(cfg.batch_size, static_cast<std::size_t>(n_train));

  ParamStore best = params;
  report.best_val_mse = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (batch < order.size()) std::shuffle(order.begin(), order.end(), shuffle);
    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::vector<Eigen::Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch)));
      auto [loss, grad] = step(rows, epoch);
      if (!std::isfinite(loss) || !grad.allFinite()) {
        throw Error(ErrorKind::kNumeric, "training diverged at epoch " + std::to_string(epoch) + " (loss " +
                                             std::to_string(loss) + ")");
      }
      adam.step(theta, grad);
      params.assign(theta);
      loss_sum += loss;
      ++steps;
    }
    report.train_loss.push_back(loss_sum / steps);
    const double v = val(params);
    if (!std::isfinite(v)) throw Error(ErrorKind::kNumeric, "validation loss is non-finite at epoch " + std::to_string(epoch));
    report.val_mse.push_back(v);
    report.epochs_run = epoch;
    if (v < report.best_val_mse) {
      report.best_val_mse = v;
      report.best_epoch = epoch;
      best = params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  params = std::move(best);
  report.test_mse = test(params);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

TrainReport train_cinn(const model::CinnArchitecture& arch, const FoldData& data,
                       const std::vector<model::DomainPrior>& priors, const TrainConfig& cfg, std::size_t fold_index) {
  cfg.validate();
  if (data.train.rows() == 0 || data.val.rows() == 0) throw Error(ErrorKind::kData, "train_cinn: empty training or validation split");
  model::CinnNet net(arch, {priors, cfg.gamma, cfg.pcgrad_granular});
  const auto train = model::make_batch(arch, data.train);
  const auto val_roots = model::make_batch(arch, data.val).roots;
  const auto test_roots = model::make_batch(arch, data.test).roots;
  auto order_rng = make_stream(cfg.seed, Stream::kPcgradOrder, fold_index);

  TrainReport report;
  report.model = cfg.use_pcgrad ? "cinn" : "cinn-no-pcgrad";
  report.fold = fold_index;
  report.params = arch.init_params(cfg.seed);
  const bool full = cfg.batch_size == 0 || cfg.batch_size >= static_cast<std::size_t>(train.size());

  auto step = [&](const std::vector<Eigen::Index>& rows, int) -> std::pair<double, Vector> {
    model::Batch sub;
    const model::Batch& b = full ? train : (sub = {rows_of(train.roots, rows), rows_of(train.intermediates, rows),
                                                   rows_of(train.leaves, rows)});
    model::LossBreakdown losses;
    Vector grad;
    if (cfg.use_pcgrad) {
      pcgrad::TaskGradients tg{net.task_gradients(report.params, b, &losses), order_rng()};
      grad = pcgrad::combine(tg);
    } else {
      grad = net.total_gradient(report.params, b, &losses);
    }
    return {losses.total, grad};
  };
  auto val = [&](const ParamStore& p) { return mse(net.predict_target(p, val_roots), data.val, arch.target()); };
  auto test = [&](const ParamStore& p) {
    return data.test.rows() == 0 ? 0.0 : mse(net.predict_target(p, test_roots), data.test, arch.target());
  };
  fit(report.params, train.size(), cfg, fold_index, step, val, test, report);
  return report;
}

TrainReport train_baseline_mlp(const FoldData& data, graph::Vertex target, const TrainConfig& cfg, std::size_t fold_index) {
  cfg.validate();
  const auto d = data.train.cols();
  if (static_cast<Eigen::Index>(target) >= d) throw Error(ErrorKind::kShape, "train_baseline_mlp: target column out of range");
  if (d < 2) throw Error(ErrorKind::kShape, "train_baseline_mlp: need at least one feature");
  if (data.train.rows() == 0 || data.val.rows() == 0) throw Error(ErrorKind::kData, "train_baseline_mlp: empty training or validation split");
  const auto kind = cfg.baseline == ModelKind::kCinn ? ModelKind::kEarlyStop : cfg.baseline;

  std::vector<Eigen::Index> features;
  for (Eigen::Index c = 0; c < d; ++c)
    if (c != static_cast<Eigen::Index>(target)) features.push_back(c);
  auto split = [&](const Matrix& m) {
    Matrix x(m.rows(), static_cast<Eigen::Index>(features.size()));
    for (std::size_t k = 0; k < features.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = m.col(features[k]);
    return std::make_pair(x, Matrix(m.col(static_cast<Eigen::Index>(target))));
  };
  const auto [xtr, ytr] = split(data.train);
  const auto [xva, yva] = split(data.val);
  const auto [xte, yte] = split(data.test);

  const Eigen::Index widths[] = {cfg.widths.trunk, cfg.widths.branch_o, cfg.widths.fusion, 1};
  TrainReport report;
  report.model = to_string(kind);
  report.fold = fold_index;
  auto init = make_stream(cfg.seed, Stream::kInit);
  std::vector<ad::ParamId> weights;
  {
    Eigen::Index fan_in = static_cast<Eigen::Index>(features.size());
    const char* names[] = {"l1", "l2", "l3", "out"};
    for (int k = 0; k < 4; ++k) {
      weights.push_back(report.params.add(std::string(names[k]) + ".W", ad::glorot_uniform(widths[k], fan_in, init)));
      report.params.add(std::string(names[k]) + ".b", Matrix::Zero(widths[k], 1));
      fan_in = widths[k];
    }
  }

  const bool use_dropout = kind == ModelKind::kDropout;
  ad::Tape tape;
  const auto x = tape.input("x", static_cast<Eigen::Index>(features.size()));
  const auto y = tape.input("y", 1);
  std::vector<ad::Slot> masks;
  ad::Slot h = x;
  for (int k = 0; k < 3; ++k) {
    h = tape.relu(tape.affine(h, weights[static_cast<std::size_t>(k)], weights[static_cast<std::size_t>(k)] + 1));
    if (use_dropout) {
      masks.push_back(tape.input("dropout" + std::to_string(k), widths[k]));
      h = tape.hadamard(h, masks.back());
    }
  }
  const auto pred = tape.affine(h, weights[3], weights[3] + 1);
  const auto data_loss = tape.squared_error(pred, y);
  ad::Slot objective = data_loss;
  if (kind == ModelKind::kL1 || kind == ModelKind::kL2) {
    std::vector<ad::Slot> terms;
    for (auto w : weights) terms.push_back(kind == ModelKind::kL1 ? tape.weight_abs_sum(w) : tape.weight_square_sum(w));
    objective = tape.sum({data_loss, tape.scale(tape.sum(terms), kind == ModelKind::kL1 ? cfg.l1_alpha : cfg.l2_alpha)});
  }

  auto dropout_rng = make_stream(cfg.seed, Stream::kDropout, fold_index);
  auto noise_rng = make_stream(cfg.seed, Stream::kInputNoise, fold_index);
  std::bernoulli_distribution keep(1.0 - cfg.dropout);
  std::normal_distribution<double> noise(0.0, 1.0);
  const bool full = cfg.batch_size == 0 || cfg.batch_size >= static_cast<std::size_t>(xtr.rows());

  auto set_masks = [&](Eigen::Index rows, bool train) {
    for (std::size_t k = 0; k < masks.size(); ++k) {
      Matrix m = Matrix::Ones(rows, widths[k]);
      if (train && cfg.dropout > 0.0) {
        const double scale = 1.0 / (1.0 - cfg.dropout);
        for (Eigen::Index j = 0; j < m.cols(); ++j)
          for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = keep(dropout_rng) ? scale : 0.0;
      }
      tape.set_input(masks[k], m);
    }
  };
  auto step = [&](const std::vector<Eigen::Index>& rows, int) -> std::pair<double, Vector> {
    Matrix xb = full ? xtr : rows_of(xtr, rows);
    const Matrix yb = full ? ytr : rows_of(ytr, rows);
    if (kind == ModelKind::kInputNoise && cfg.noise_sigma > 0.0) {
      for (Eigen::Index j = 0; j < xb.cols(); ++j)
        for (Eigen::Index i = 0; i < xb.rows(); ++i) xb(i, j) += cfg.noise_sigma * noise(noise_rng);
    }
    tape.set_input(x, xb);
    tape.set_input(y, yb);
    set_masks(xb.rows(), true);
    tape.forward(report.params);
    return {tape.scalar(objective), tape.backward(report.params, objective)};
  };
  auto eval = [&](const Matrix& xs, const Matrix& ys) {
    return [&](const ParamStore& p) {
      if (xs.rows() == 0) return 0.0;
      tape.set_input(x, xs);
      tape.set_input(y, ys);
      set_masks(xs.rows(), false);
      tape.forward(p);
      return tape.scalar(data_loss);
    };
  };
  auto val = eval(xva, yva);
  auto test = eval(xte, yte);
  fit(report.params, xtr.rows(), cfg, fold_index, step, val, test, report);
  return report;
}

CvResult cross_validate(const std::string& label, std::size_t n_folds, const FoldTrainer& fold_trainer, int jobs) {
  if (n_folds == 0) throw Error(ErrorKind::kInput, "cross_validate: no folds");
  CvResult result;
  result.model = label;
  result.folds.resize(n_folds);
  std::vector<std::exception_ptr> errors(n_folds);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t f = next++; f < n_folds; f = next++) {
      try {
        result.folds[f] = fold_trainer(f);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::clamp<int>(jobs, 1, static_cast<int>(n_folds)));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t f = 0; f < n_folds; ++f) {
    if (!errors[f]) continue;
    try {
      std::rethrow_exception(errors[f]);
    } catch (const Error& e) {
      throw Error(e.kind(), label + " fold " + std::to_string(f) + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorKind::kNumeric, label + " fold " + std::to_string(f) + ": " + e.what());
    }
  }
  double sum = 0.0;
  for (const auto& r : result.folds) sum += r.test_mse;
  result.mean = sum / static_cast<double>(n_folds);
  double ss = 0.0;
  for (const auto& r : result.folds) ss += (r.test_mse - result.mean) * (r.test_mse - result.mean);
  result.stddev = n_folds > 1 ? std::sqrt(ss / static_cast<double>(n_folds - 1)) : 0.0;
  return result;
}

std::vector<AblationRow> run_ablation(const graph::CausalDag& base, graph::Vertex target,
                                      const std::vector<AblationStep>& steps, const std::vector<FoldData>& folds,
                                      const TrainConfig& cfg, int jobs) {
  if (steps.empty()) throw Error(ErrorKind::kInput, "ablation: no steps");
  std::vector<AblationRow> rows;
  graph::CausalDag dag = base;
  std::vector<model::DomainPrior> priors;
  for (std::size_t s = 0; s < steps.size(); ++s) {
    const auto& step = steps[s];
    const auto label = step.label.empty() ? "step " + std::to_string(s + 1) : step.label;
    try {
      dag = graph::apply_refinement(dag, step.edits);
      priors.insert(priors.end(), step.priors.begin(), step.priors.end());
      const auto arch = model::CinnArchitecture::compile(graph::partition_dag(dag), dag, target, cfg.widths,
                                                            cfg.promote_isolated);
      for (const auto& p : priors) arch.validate_prior(p);
      AblationRow row;
      row.label = label;
      row.n_edges = dag.n_edges();
      row.n_priors = priors.size();
      row.result = cross_validate(label, folds.size(),
                                  [&](std::size_t f) { return train_cinn(arch, folds[f], priors, cfg, f); }, jobs);
      rows.push_back(std::move(row));
    } catch (const Error& e) {
      throw Error(e.kind(), "ablation " + label + ": " + e.what());
    }
  }
  return rows;
}

namespace {
json fold_records(const CvResult& r) {
  json out = json::array();
  for (const auto& f : r.folds) {
    out.push_back({{"model", r.model},
                   {"fold", f.fold},
                   {"test_mse", f.test_mse},
                   {"best_val_mse", f.best_val_mse},
                   {"best_epoch", f.best_epoch},
                   {"epochs_run", f.epochs_run}});
  }
  return out;
}
}  // namespace

std::string results_json(const std::vector<CvResult>& results) {
  json records = json::array();
  json summary = json::array();
  for (const auto& r : results) {
    for (auto& rec : fold_records(r)) records.push_back(rec);
    summary.push_back({{"model", r.model}, {"folds", r.folds.size()}, {"mean_test_mse", r.mean}, {"std_test_mse", r.stddev}});
  }
  return json{{"records", records}, {"summary", summary}}.dump(2) + "\n";
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
  json out = json::array();
  for (const auto& row : rows) {
    out.push_back({{"step", row.label},
                   {"edges", row.n_edges},
                   {"priors", row.n_priors},
                   {"mean_test_mse", row.result.mean},
                   {"std_test_mse", row.result.stddev},
                   {"records", fold_records(row.result)}});
  }
  return out.dump(2) + "\n";
}

std::string timing_json(const std::vector<CvResult>& results) {
  json out = json::array();
  for (const auto& r : results)
    for (const auto& f : r.folds) out.push_back({{"model", r.model}, {"fold", f.fold}, {"seconds", f.seconds}});
  return out.dump(2) + "\n";
}

std::string format_table(const std::vector<CvResult>& results) {
  std::ostringstream out;
  out << std::left << std::setw(18) << "model" << std::right << std::setw(8) << "folds" << std::setw(14) << "test MSE"
      << std::setw(12) << "std" << '\n';
  out << std::fixed << std::setprecision(6);
  for (const auto& r : results) {
    out << std::left << std::setw(18) << r.model << std::right << std::setw(8) << r.folds.size() << std::setw(14) << r.mean
        << std::setw(12) << r.stddev << '\n';
  }
  return out.str();
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(28) << "step" << std::right << std::setw(7) << "edges" << std::setw(8) << "priors"
      << std::setw(14) << "test MSE" << std::setw(12) << "std" << '\n';
  out << std::fixed << std::setprecision(6);
  for (const auto& r : rows) {
    out << std::left << std::setw(28) << r.label << std::right << std::setw(7) << r.n_edges << std::setw(8) << r.n_priors
        << std::setw(14) << r.result.mean << std::setw(12) << r.result.stddev << '\n';
  }
  return out.str();
}

}  // namespace cinn::train
