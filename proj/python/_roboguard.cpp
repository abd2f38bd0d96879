// Python extension. Structured results cross the boundary as JSON text; the
// roboguard package decodes them.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "roboguard/envelope.hpp"
#include "roboguard/error.hpp"
#include "roboguard/run.hpp"
#include "roboguard/system.hpp"
#include "roboguard/trace.hpp"

namespace py = pybind11;
using namespace roboguard;

namespace {

RunOptions options(const std::string& scenario, const std::vector<std::string>& inject, std::optional<std::uint64_t> seed,
                   const std::string& detectors, const std::string& envelope, const std::string& grouping,
                   std::optional<bool> validity_filter) {
    RunOptions o;
    o.scenario_path = scenario;
    o.inject = inject;
    o.seed = seed;
    o.detectors_path = detectors;
    o.envelope_path = envelope;
    o.grouping_path = grouping;
    o.validity_filter = validity_filter;
    return o;
}

// Holds one in-memory system; the GIL is released while it steps.
class Session {
public:
    explicit Session(const RunOptions& opts) : sys_(std::make_unique<System>(make_system_config(opts))) {}

    bool step() {
        py::gil_scoped_release nogil;
        return sys_->step();
    }
    void run_until(std::int64_t t_ms) {
        py::gil_scoped_release nogil;
        while (sys_->now_ms() < t_ms && sys_->step()) {
        }
    }
    void run_to_end() {
        py::gil_scoped_release nogil;
        sys_->run_to_end();
    }

    std::int64_t now_ms() const { return sys_->now_ms(); }
    bool ended() const { return sys_->ended(); }
    std::string mode() const { return std::string(to_string(sys_->mode())); }

    std::string alarms(const std::optional<std::string>& state) const {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& a : sys_->alarms(state ? std::optional(alarm_state_from_string(*state)) : std::nullopt)) out.push_back(to_json(a));
        return out.dump();
    }
    std::string feedback(std::uint64_t id, const std::string& action) {
        return to_json(sys_->feedback(id, feedback_action_from_string(action))).dump();
    }
    std::uint64_t inject(const std::string& kind, double magnitude, std::int64_t duration_ms) {
        return sys_->inject(injection_kind_from_string(kind), magnitude, duration_ms);
    }
    std::string enter_safe_mode(const std::string& trigger) { return to_json(sys_->enter_safe_mode(trigger)).dump(); }
    std::string exit_safe_mode() { return to_json(sys_->exit_safe_mode()).dump(); }
    std::string snapshot(const std::string& node) { return to_json(sys_->snapshot(node)).dump(); }
    std::string frames(std::size_t limit) const {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& f : sys_->frames(std::nullopt, limit)) out.push_back(to_json(f));
        return out.dump();
    }
    std::string health() const { return sys_->health_json().dump(); }
    std::string metrics() const { return sys_->metrics_json().dump(); }
    std::string risk() const { return sys_->risk_json().dump(); }
    std::string trace(const std::string& format) const { return encode_trace(sys_->trace(), trace_format_from_string(format)); }

private:
    std::unique_ptr<System> sys_;
};

}  // namespace

PYBIND11_MODULE(_roboguard, m) {
    m.doc() = "roboguard core";

    static py::exception<Error> error(m, "Error");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            // args: (code, message)
            py::object exc = py::handle(error.ptr())(py::str(std::string(to_string(e.code()))), py::str(e.what()));
            PyErr_SetObject(error.ptr(), exc.ptr());
        }
    });

    m.def(
        "run",
        [](const std::string& scenario, const std::string& out_dir, const std::vector<std::string>& inject,
           std::optional<std::uint64_t> seed, const std::string& detectors, const std::string& envelope,
           const std::string& grouping, std::optional<bool> validity_filter) {
            auto o = options(scenario, inject, seed, detectors, envelope, grouping, validity_filter);
            o.out_dir = out_dir;
            RunSummary s;
            {
                py::gil_scoped_release nogil;
                s = run_to_directory(o);
            }
            nlohmann::json labels = nlohmann::json::array();
            for (const auto& l : s.report.labels) labels.push_back(to_json(l));
            return nlohmann::json{{"messages_published", s.report.messages_published},
                                  {"labels", labels},
                                  {"alarms", s.alarms},
                                  {"presented", s.presented},
                                  {"duration_ms", s.duration_ms},
                                  {"trace_sha256", s.trace_sha256}}
                .dump();
        },
        py::arg("scenario"), py::arg("out_dir"), py::arg("inject") = std::vector<std::string>{}, py::arg("seed") = py::none(),
        py::arg("detectors") = "", py::arg("envelope") = "", py::arg("grouping") = "", py::arg("validity_filter") = py::none());

    m.def(
        "evaluate",
        [](const std::vector<std::string>& dirs, const std::string& out_path, std::int64_t window_ms) {
            py::gil_scoped_release nogil;
            return to_json(evaluate_directories(dirs, out_path, {window_ms})).dump();
        },
        py::arg("dirs"), py::arg("out_path"), py::arg("window_ms") = 1000);

    m.def(
        "convert_trace",
        [](const std::string& text, const std::string& from, const std::string& to) {
            return encode_trace(decode_trace(text, trace_format_from_string(from)), trace_format_from_string(to));
        },
        py::arg("text"), py::arg("from_format"), py::arg("to_format"));

    m.def(
        "trace_sha256",
        [](const std::string& text, const std::string& format) { return sha256_hex(canonical_bytes(decode_trace(text, trace_format_from_string(format)))); },
        py::arg("text"), py::arg("format") = "jsonl");

    m.def(
        "instantaneous_risk",
        [](const std::vector<double>& phi, const std::string& envelope_yaml) {
            const auto cfg = parse_envelope_yaml(envelope_yaml);
            return instantaneous_risk(phi, cfg.envelope, cfg.model);
        },
        py::arg("phi"), py::arg("envelope_yaml"));

    py::class_<Session>(m, "Session")
        .def(py::init([](const std::string& scenario, const std::vector<std::string>& inject, std::optional<std::uint64_t> seed,
                         const std::string& detectors, const std::string& envelope, const std::string& grouping,
                         std::optional<bool> validity_filter) {
                 return std::make_unique<Session>(options(scenario, inject, seed, detectors, envelope, grouping, validity_filter));
             }),
             py::arg("scenario"), py::arg("inject") = std::vector<std::string>{}, py::arg("seed") = py::none(),
             py::arg("detectors") = "", py::arg("envelope") = "", py::arg("grouping") = "", py::arg("validity_filter") = py::none())
        .def("step", &Session::step)
        .def("run_until", &Session::run_until, py::arg("t_ms"))
        .def("run_to_end", &Session::run_to_end)
        .def_property_readonly("now_ms", &Session::now_ms)
        .def_property_readonly("ended", &Session::ended)
        .def_property_readonly("mode", &Session::mode)
        .def("alarms", &Session::alarms, py::arg("state") = py::none())
        .def("feedback", &Session::feedback, py::arg("alarm_id"), py::arg("action"))
        .def("inject", &Session::inject, py::arg("kind"), py::arg("magnitude"), py::arg("duration_ms"))
        .def("enter_safe_mode", &Session::enter_safe_mode, py::arg("trigger") = "operator")
        .def("exit_safe_mode", &Session::exit_safe_mode)
        .def("snapshot", &Session::snapshot, py::arg("node"))
        .def("frames", &Session::frames, py::arg("limit") = 0)
        .def("health", &Session::health)
        .def("metrics", &Session::metrics)
        .def("risk", &Session::risk)
        .def("trace", &Session::trace, py::arg("format") = "jsonl");
}
