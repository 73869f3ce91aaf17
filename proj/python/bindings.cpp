#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "perm/errors.hpp"
#include "perm/harness.hpp"

namespace py = pybind11;

namespace {

std::vector<perm::Vector> rows_of(const std::vector<perm::MixWeights>& a) {
  std::vector<perm::Vector> out;
  for (const auto& w : a) out.push_back(w.values());
  return out;
}

perm::RunConfig config_from(const py::dict& d) {
  std::map<std::string, std::string> raw;
  for (auto item : d) raw[py::str(item.first)] = py::str(item.second);
  return perm::parse_run_config(raw);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Personalized federated learning simulation core";

  py::register_exception<perm::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<perm::NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<perm::IoError>(m, "IoError", PyExc_OSError);

  m.def("project_simplex", [](const perm::Vector& v) { return perm::project_simplex(v).values(); }, py::arg("v"));

  m.def(
      "solve_alpha",
      [](const std::vector<double>& z, std::optional<std::vector<double>> counts, double lam,
         std::size_t t_alpha, const std::string& solver) {
        const std::vector<double> n = counts ? *counts : std::vector<double>(z.size(), 1.0);
        if (solver == "kkt") return perm::solve_alpha_kkt(z, n, lam).values();
        if (solver != "gd") throw perm::ConfigError("solver", "expected gd or kkt");
        perm::AlphaSolverConfig cfg;
        cfg.lambda = lam;
        cfg.t_alpha = t_alpha;
        return perm::solve_alpha_gd(z, n, cfg).values();
      },
      py::arg("z"), py::arg("counts") = py::none(), py::arg("lam") = 1.0, py::arg("t_alpha") = 200,
      py::arg("solver") = "gd", "Mixing weights for one dissimilarity row.");

  py::class_<perm::Federation>(m, "Federation")
      .def_property_readonly("size", &perm::Federation::size)
      .def_property_readonly("dim", &perm::Federation::dim)
      .def_readonly("group_of", &perm::Federation::group_of)
      .def_readonly("true_w", &perm::Federation::true_w)
      .def("train_counts", &perm::Federation::train_counts)
      .def("train_features", [](const perm::Federation& f, std::size_t i) { return f.shards.at(i).train.features; })
      .def("train_labels", [](const perm::Federation& f, std::size_t i) { return f.shards.at(i).train.labels; })
      .def("export", [](const perm::Federation& f, const std::filesystem::path& dir) { perm::export_federation(f, dir); });

  m.def("load_federation", &perm::load_federation, py::arg("dir"));
  m.def(
      "build_federation", [](const py::dict& cfg) { return perm::build_federation(config_from(cfg)); },
      py::arg("config"), "Federation described by a config dict (same keys as the CLI).");

  m.def(
      "dissimilarity",
      [](const perm::Federation& fed, const perm::Vector& w, const std::string& loss, double reg) {
        perm::LossModel model{perm::loss_kind_from_string(loss), reg};
        return perm::pairwise_dissimilarity(fed, model, w).z;
      },
      py::arg("federation"), py::arg("w"), py::arg("loss") = "logistic", py::arg("reg") = 1e-2);

  m.def(
      "run",
      [](const py::dict& cfg_dict, std::optional<std::filesystem::path> out) {
        const perm::RunConfig cfg = config_from(cfg_dict);
        const perm::Federation fed = perm::build_federation(cfg);
        perm::RunOutcome res;
        {
          py::gil_scoped_release release;
          res = perm::run_method(cfg, fed);
        }
        if (out) perm::write_run_outputs(cfg, res, *out);
        py::dict d;
        d["method"] = std::string(perm::to_string(res.method));
        d["models"] = res.models;
        d["alphas"] = rows_of(res.alphas);
        d["global_model"] = res.global_model;
        d["eval_accuracy"] = res.final_metrics.eval_accuracy;
        d["eval_loss"] = res.final_metrics.eval_loss;
        d["train_loss"] = res.final_metrics.train_loss;
        d["mean_accuracy"] = res.final_metrics.mean_accuracy();
        d["rounds"] = res.budget.rounds;
        d["messages"] = res.budget.messages;
        d["gamma"] = res.steps.gamma;
        d["eta"] = res.steps.eta;
        d["metrics_csv"] = perm::format_metrics(res.rows);
        return d;
      },
      py::arg("config"), py::arg("out") = py::none(), "Runs one method; config keys match the CLI flags.");

  m.def(
      "summarize",
      [](const std::vector<std::filesystem::path>& files) { return perm::summarize(files).to_csv(); },
      py::arg("files"));

  m.def(
      "config_keys",
      [] {
        std::vector<std::pair<std::string, std::string>> keys;
        for (const auto& k : perm::config_keys()) keys.emplace_back(k.name, k.default_value);
        return keys;
      });
}
