#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "skillflow/cli.hpp"
#include "skillflow/config.hpp"
#include "skillflow/diagnostics.hpp"
#include "skillflow/flow_oracle.hpp"
#include "skillflow/io.hpp"

namespace py = pybind11;
using namespace skillflow;

namespace {

py::dict row_dict(const MetricsRow& r) {
    py::dict d;
    d["step"] = r.step;
    d["loss_ttb"] = r.loss_ttb;
    d["mean_reward"] = r.mean_reward;
    d["mean_abs_delta"] = r.mean_abs_delta;
    d["flow_entropy"] = r.flow_entropy;
    d["logZ_mean"] = r.logz_mean;
    d["library_size"] = r.library_size;
    d["plateau_flag"] = r.plateau_flag;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Tempered trajectory balance with flow-driven skill evolution";

    py::class_<RunConfig>(m, "RunConfig")
        .def_static("parse", &parse_config, py::arg("text"))
        .def_static("load", &load_config, py::arg("path"))
        .def("to_text", [](const RunConfig& c) { return to_text(c); })
        .def_readwrite("seed", &RunConfig::seed)
        .def_readwrite("max_steps", &RunConfig::max_steps)
        .def_property_readonly("task_ids", [](const RunConfig& c) {
            std::vector<std::string> ids;
            for (const auto& t : c.env.tasks) ids.push_back(t.id);
            return ids;
        });

    py::class_<Runner>(m, "Runner")
        .def(py::init<RunConfig, int>(), py::arg("config"), py::arg("workers") = 1)
        .def("step", &Runner::step, py::call_guard<py::gil_scoped_release>())
        .def("run", &Runner::run, py::call_guard<py::gil_scoped_release>())
        .def_property_readonly("steps_done", &Runner::steps_done)
        .def_property_readonly("last_row", [](const Runner& r) { return row_dict(r.last_row()); })
        .def_property_readonly("library",
                               [](const Runner& r) {
                                   std::vector<std::pair<std::string, std::string>> out;
                                   for (const auto& s : r.state().library.skills()) out.emplace_back(s.id, s.expansion);
                                   return out;
                               })
        .def_property_readonly("phase", [](const Runner& r) { return r.state().library.phase; })
        .def("log_partition", [](const Runner& r, const std::string& task) {
            return log_partition(r.state().params, task);
        })
        .def("checkpoint", [](const Runner& r) {
            std::ostringstream out;
            write_checkpoint(out, r.state().params, r.state().library);
            return out.str();
        })
        .def("trajectory_distribution", [](const Runner& r, const std::string& task) {
            const auto dag = enumerate(r.env(), task, r.state().library, r.config().node_budget);
            return sampler_trajectory_distribution(r.state().params, r.env(), r.state().library, dag);
        })
        .def("target_distribution", [](const Runner& r, const std::string& task) {
            const auto dag = enumerate(r.env(), task, r.state().library, r.config().node_budget);
            return target_distribution(dag, r.config().ttb.beta, r.config().ttb.eps_min);
        });

    m.def(
        "train",
        [](const RunConfig& c, const std::string& out_dir, int workers) {
            std::ostringstream log;
            const int status = cmd_train(c, out_dir, workers, log);
            return py::make_tuple(status, log.str());
        },
        py::arg("config"), py::arg("out_dir"), py::arg("workers") = 1);

    m.def(
        "verify",
        [](const RunConfig& c, std::uint64_t rollouts, bool inject_fault) {
            VerifyOptions opt;
            opt.rollouts = rollouts;
            opt.inject_flow_fault = inject_fault;
            std::ostringstream sink;
            std::vector<py::tuple> out;
            for (const auto& r : cmd_verify(c, opt, sink)) out.push_back(py::make_tuple(r.name, r.value, r.pass));
            return out;
        },
        py::arg("config"), py::arg("rollouts") = 100000, py::arg("inject_fault") = false);

    m.def("fixture_q4", []() {
        std::ostringstream out;
        const bool ok = cmd_fixture_q4(out);
        return py::make_tuple(ok, out.str());
    });

    m.def("step_importance", &step_importance, py::arg("fwd_lp"), py::arg("bwd_lp"));
    m.def("telescope_log_flow", [](const std::vector<double>& li, double log_z) { return telescope_log_flow(li, log_z); });
    m.def("cgf", [](const std::vector<double>& x, double lambda) { return cgf(x, lambda); }, py::arg("x"),
          py::arg("lam"));
    m.def("cgf_summaries", [](const std::vector<double>& x) {
        const auto s = cgf_summaries(x, 0.0);
        py::dict d;
        d["G"] = s.G;
        d["lambda1"] = s.lambda1;
        d["jensen_gap"] = s.jensen_gap;
        d["cumulants"] = std::vector<double>(s.cumulants.begin(), s.cumulants.end());
        return d;
    });
    m.def("smooth_reward", &smooth_reward, py::arg("r"), py::arg("eps"));
}
