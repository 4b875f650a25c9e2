#include <optional>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cinn/discovery.hpp"
#include "cinn/error.hpp"
#include "cinn/graph.hpp"
#include "cinn/model.hpp"
#include "cinn/pcgrad.hpp"
#include "cinn/pipeline.hpp"
#include "cinn/run_config.hpp"
#include "cinn/trainer.hpp"

namespace py = pybind11;
using namespace cinn;

namespace {

using EdgeList = std::vector<std::pair<graph::Vertex, graph::Vertex>>;

graph::CausalDag make_dag(std::size_t n, const EdgeList& edges, std::vector<std::string> names = {}) {
  return graph::CausalDag(n, std::set<graph::Edge>(edges.begin(), edges.end()), std::move(names));
}

EdgeList edge_list(const graph::CausalDag& d) { return {d.edges().begin(), d.edges().end()}; }

py::dict to_dict(const ad::ParamStore& p) {
  py::dict d;
  for (ad::ParamId i = 0; i < p.n_blocks(); ++i) d[py::str(p.name(i))] = p.value(i);
  return d;
}

ad::ParamStore from_dict(const model::CinnArchitecture& arch, const py::dict& d) {
  auto p = arch.init_params(0);
  for (ad::ParamId i = 0; i < p.n_blocks(); ++i) {
    if (!d.contains(p.name(i))) throw Error(ErrorKind::kShape, "missing parameter block '" + p.name(i) + "'");
    const auto m = d[py::str(p.name(i))].cast<Eigen::MatrixXd>();
    if (m.rows() != p.value(i).rows() || m.cols() != p.value(i).cols()) {
      throw Error(ErrorKind::kShape, "parameter block '" + p.name(i) + "' has the wrong shape");
    }
    p.value(i) = m;
  }
  return p;
}

std::vector<model::DomainPrior> parse_priors(const std::vector<std::string>& texts) {
  std::vector<model::DomainPrior> out;
  for (const auto& t : texts) out.push_back(model::parse_prior(t));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core of the causality-informed neural network pipeline";

  static py::exception<Error> cinn_error(m, "CinnError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = cinn_error;
      py::object inst = err(e.what());
      inst.attr("exit_code") = e.exit_code();
      PyErr_SetObject(cinn_error.ptr(), inst.ptr());
    }
  });

  m.def("matrix_exp", &discovery::matrix_exp, py::arg("m"));
  m.def("acyclicity_h", &discovery::acyclicity_h, py::arg("w"), "tr(exp(W o W)) - d");
  m.def(
      "acyclicity_value", [](const Eigen::MatrixXd& w) { return discovery::acyclicity_value(discovery::WeightedAdjacency(w)); },
      py::arg("w"), "h(W)^2; the diagonal is ignored");
  m.def(
      "acyclicity_gradient",
      [](const Eigen::MatrixXd& w) { return discovery::acyclicity_gradient(discovery::WeightedAdjacency(w)); }, py::arg("w"));

  m.def(
      "discover",
      [](const Eigen::MatrixXd& x, double lambda, double tau, int max_outer_iters) {
        discovery::DiscoveryConfig cfg;
        cfg.lambda = lambda;
        cfg.tau = tau;
        cfg.max_outer_iters = max_outer_iters;
        cfg.validate();
        py::gil_scoped_release release;
        const auto r = discovery::discover(x, cfg);
        const auto dag = discovery::threshold_to_dag(r.w, tau);
        py::gil_scoped_acquire acquire;
        py::dict out;
        out["w"] = r.w.values();
        out["h"] = r.h;
        out["objective"] = r.objective;
        out["edges"] = edge_list(dag);
        return out;
      },
      py::arg("x"), py::arg("lambda_") = 0.1, py::arg("tau") = 0.3, py::arg("max_outer_iters") = 20,
      "Learn a weighted adjacency from standardized data and threshold it");
  m.def(
      "threshold_to_dag",
      [](const Eigen::MatrixXd& w, double tau) {
        return edge_list(discovery::threshold_to_dag(discovery::WeightedAdjacency(w), tau));
      },
      py::arg("w"), py::arg("tau"));

  m.def(
      "partition",
      [](std::size_t n, const EdgeList& edges) {
        const auto p = graph::partition_dag(make_dag(n, edges));
        py::dict d;
        d["isolated"] = p.isolated;
        d["roots"] = p.roots;
        d["layers"] = p.layers;
        d["leaves"] = p.leaves;
        return d;
      },
      py::arg("n_vertices"), py::arg("edges"), "Node categories and intermediate layers");
  m.def(
      "apply_refinement",
      [](std::size_t n, const EdgeList& edges, const std::string& script) {
        return edge_list(graph::apply_refinement(make_dag(n, edges), graph::parse_refinement(script)));
      },
      py::arg("n_vertices"), py::arg("edges"), py::arg("script"), "Apply 'remove|add|reverse i j' lines");
  m.def(
      "structural_hamming_distance",
      [](std::size_t n, const EdgeList& a, const EdgeList& b) {
        return graph::structural_hamming_distance(make_dag(n, a), make_dag(n, b));
      },
      py::arg("n_vertices"), py::arg("a"), py::arg("b"));

  m.def("cosine_similarity", &pcgrad::cosine_similarity, py::arg("a"), py::arg("b"));
  m.def("project_out", &pcgrad::project_out, py::arg("g"), py::arg("onto"));
  m.def(
      "pcgrad_combine",
      [](const std::vector<Eigen::VectorXd>& grads, std::uint64_t seed) { return pcgrad::combine({grads, seed}); },
      py::arg("gradients"), py::arg("seed") = 0);

  py::class_<model::CinnArchitecture>(m, "Architecture")
      .def_static(
          "compile",
          [](std::size_t n, const EdgeList& edges, graph::Vertex target, std::vector<std::string> names,
             std::optional<std::vector<Eigen::Index>> widths, bool promote_isolated) {
            model::Widths w;
            if (widths) {
              if (widths->size() != 4) throw Error(ErrorKind::kInput, "widths must be [trunk, branch_b, branch_o, fusion]");
              w = {(*widths)[0], (*widths)[1], (*widths)[2], (*widths)[3]};
            }
            const auto dag = make_dag(n, edges, std::move(names));
            return model::CinnArchitecture::compile(graph::partition_dag(dag), dag, target, w, promote_isolated);
          },
          py::arg("n_vertices"), py::arg("edges"), py::arg("target"), py::arg("names") = std::vector<std::string>{},
          py::arg("widths") = py::none(), py::arg("promote_isolated") = false)
      .def_property_readonly("target", &model::CinnArchitecture::target)
      .def_property_readonly("roots", &model::CinnArchitecture::roots)
      .def_property_readonly("leaves", &model::CinnArchitecture::leaves)
      .def_property_readonly("layers", [](const model::CinnArchitecture& a) { return a.partition().layers; })
      .def_property_readonly("parameter_count", &model::CinnArchitecture::parameter_count)
      .def_property_readonly("param_names",
                             [](const model::CinnArchitecture& a) {
                               std::vector<std::string> names;
                               for (const auto& s : a.param_specs()) names.push_back(s.name);
                               return names;
                             })
      .def("summary", &model::CinnArchitecture::summary)
      .def(
          "init_params", [](const model::CinnArchitecture& a, std::uint64_t seed) { return to_dict(a.init_params(seed)); },
          py::arg("seed") = 0)
      .def(
          "forward",
          [](const model::CinnArchitecture& a, const py::dict& params, const Eigen::MatrixXd& roots) {
            const auto pred = model::forward_all(a, from_dict(a, params), roots);
            return py::make_tuple(pred.layers, pred.outputs);
          },
          py::arg("params"), py::arg("roots"), "Per-layer head outputs and leaf outputs")
      .def(
          "loss_mse",
          [](const model::CinnArchitecture& a, const py::dict& params, const Eigen::MatrixXd& data) {
            return model::loss_mse(a, from_dict(a, params), model::make_batch(a, data));
          },
          py::arg("params"), py::arg("data"), "(intermediate loss, output loss) on columns ordered by vertex")
      .def(
          "loss_domain",
          [](const model::CinnArchitecture& a, const py::dict& params, const Eigen::MatrixXd& data,
             const std::vector<std::string>& priors) {
            return model::loss_domain(a, from_dict(a, params), model::make_batch(a, data), parse_priors(priors));
          },
          py::arg("params"), py::arg("data"), py::arg("priors"));

  m.def(
      "run",
      [](const std::string& command, const std::filesystem::path& config, std::optional<std::uint64_t> seed,
         std::optional<int> jobs, std::optional<std::string> baseline) {
        auto cfg = config::load_run_config(config);
        if (seed) cfg.training.seed = *seed;
        if (jobs) cfg.jobs = *jobs;
        std::optional<train::ModelKind> only;
        if (baseline) only = train::parse_model_kind(*baseline);
        py::gil_scoped_release release;
        if (command == "discover") return pipeline::cmd_discover(cfg);
        if (command == "refine") return pipeline::cmd_refine(cfg);
        if (command == "train") return pipeline::cmd_train(cfg, only);
        if (command == "evaluate") return pipeline::cmd_evaluate(cfg);
        if (command == "ablate") return pipeline::cmd_ablate(cfg);
        throw Error(ErrorKind::kInput, "unknown command '" + command + "'");
      },
      py::arg("command"), py::arg("config"), py::arg("seed") = py::none(), py::arg("jobs") = py::none(),
      py::arg("baseline") = py::none(), "Run a pipeline command from a config file and return its summary");
}
