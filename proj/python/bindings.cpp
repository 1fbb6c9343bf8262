#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fedpoison/attacks.hpp"
#include "fedpoison/byzantine.hpp"
#include "fedpoison/config.hpp"
#include "fedpoison/errors.hpp"
#include "fedpoison/harness.hpp"
#include "fedpoison/protocol.hpp"

namespace py = pybind11;
using namespace fedpoison;

namespace {

ExperimentConfig parse_config(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(e.what());
    }
    return config_from_json(doc);
}

py::dict records_to_columns(const std::vector<RoundRecord>& rs) {
    std::vector<std::vector<double>> cols(15);
    for (const auto& r : rs) {
        const double row[15] = {static_cast<double>(r.t), r.val_acc_global, r.mal_conf_mean,
                                r.mal_targets_hit_frac, r.val_acc_mal_local,
                                static_cast<double>(r.acc_flag), r.acc_gap,
                                static_cast<double>(r.dist_flag), r.dist_deviation,
                                r.l2_ben_min, r.l2_ben_max, r.l2_mal_min, r.l2_mal_max,
                                static_cast<double>(r.krum_chosen_agent),
                                static_cast<double>(r.mal_chosen)};
        for (int i = 0; i < 15; ++i) cols[i].push_back(row[i]);
    }
    py::dict out;
    for (int i = 0; i < 15; ++i) out[kMetricsColumns[i]] = cols[i];
    return out;
}

}  // namespace

PYBIND11_MODULE(_fedpoison, m) {
    m.doc() = "Federated learning model-poisoning simulator (C++ core)";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);

    py::list columns;
    for (const char* c : kMetricsColumns) columns.append(c);
    m.attr("METRICS_COLUMNS") = columns;

    m.def("default_config", [] { return config_to_json(ExperimentConfig{}).dump(); },
          "Resolved default config as JSON text.");

    m.def("resolve_config", [](const std::string& text) { return config_to_json(parse_config(text)).dump(); },
          py::arg("config_json"), "Parse, validate and re-serialize a config.");

    m.def(
        "validate",
        [](const std::string& text) {
            const auto c = parse_config(text);
            const auto data = prepare_data(c);
            for (const auto& s : data.shards) c.training.validate(s.size());
            py::dict out;
            out["train_rows"] = data.train.size();
            out["validation_rows"] = data.validation.size();
            out["parameters"] = data.spec.parameter_count();
            return out;
        },
        py::arg("config_json"));

    m.def(
        "run",
        [](const std::string& text, const std::string& out_dir) {
            const auto c = parse_config(text);
            RunResult r;
            {
                py::gil_scoped_release release;
                r = run_experiment(c);
                if (!out_dir.empty()) emit_metrics(r, c, out_dir);
            }
            py::dict out;
            out["metrics"] = records_to_columns(r.records);
            out["kappa"] = r.kappa;
            out["final_params"] = r.final_params;
            return out;
        },
        py::arg("config_json"), py::arg("out_dir") = "",
        "Run one experiment; optionally write its artifacts to out_dir.");

    m.def("read_metrics", [](const std::filesystem::path& p) { return records_to_columns(read_metrics_csv(p)); },
          py::arg("path"));
    m.def("read_weights", &read_weights, py::arg("path"));

    m.def("coomed", [](const std::vector<std::vector<double>>& u) { return coomed(u); }, py::arg("updates"));
    m.def(
        "krum_select",
        [](const std::vector<std::vector<double>>& u, std::size_t f, bool squared) {
            return krum_select(u, KrumConfig{f, squared});
        },
        py::arg("updates"), py::arg("f") = 1, py::arg("squared") = false);
    m.def(
        "weighted_average",
        [](const std::vector<std::vector<double>>& u, const std::vector<double>& alphas) {
            std::vector<Update> ups;
            for (std::size_t i = 0; i < u.size(); ++i) ups.push_back({i, u[i]});
            return weighted_average(ups, alphas);
        },
        py::arg("updates"), py::arg("alphas"));
    m.def("boost", [](const std::vector<double>& d, double lambda) { return boost(d, lambda); },
          py::arg("delta"), py::arg("lam"));
}
