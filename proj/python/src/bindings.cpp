#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gemlab/dist.hpp"
#include "gemlab/errors.hpp"
#include "gemlab/flow.hpp"
#include "gemlab/harness.hpp"
#include "gemlab/losses.hpp"
#include "gemlab/metrics.hpp"
#include "gemlab/models.hpp"

namespace py = pybind11;
using namespace gemlab;

namespace {

py::dict trajectory_dict(const Trajectory& t) {
    py::list steps;
    for (const auto& s : t.steps) {
        steps.append(py::dict(py::arg("step") = s.step, py::arg("source") = s.source, py::arg("amount") = s.amount,
                              py::arg("logits") = s.logits.vec()));
    }
    return py::dict(py::arg("initial") = t.initial.vec(), py::arg("target") = t.target,
                    py::arg("steps_taken") = t.steps_taken,
                    py::arg("terminated_by") = std::string(to_string(t.terminated_by)),
                    py::arg("final_logits") = t.final_logits().vec(), py::arg("steps") = steps);
}

IterationOptions iteration_options(double eta, std::size_t max_steps) {
    IterationOptions o;
    o.eta = eta;
    o.max_steps = max_steps;
    return o;
}

}  // namespace

PYBIND11_MODULE(_gemlab, m) {
    m.doc() = "Logit-flow, GEM loss and equilibrium tools over categorical distributions.";

    py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
    py::register_exception<InvalidParameter>(m, "InvalidParameter", PyExc_ValueError);
    py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    py::enum_<HFunction>(m, "HFunction").value("LINEAR", HFunction::LINEAR).value("LOG_SIGMOID", HFunction::LOG_SIGMOID);
    py::enum_<LossKind>(m, "LossKind")
        .value("CE", LossKind::CE)
        .value("CE_ENTROPY", LossKind::CE_ENTROPY)
        .value("GEM", LossKind::GEM);

    py::class_<LossSpec>(m, "LossSpec")
        .def_static("ce", &LossSpec::ce)
        .def_static("ce_entropy", &LossSpec::ce_entropy, py::arg("gamma"))
        .def_static("gem", &LossSpec::gem, py::arg("beta"), py::arg("h") = HFunction::LINEAR,
                    py::arg("h_scale") = 0.01)
        .def_readwrite("kind", &LossSpec::kind)
        .def_readwrite("beta", &LossSpec::beta)
        .def_readwrite("gamma", &LossSpec::gamma)
        .def_readwrite("h", &LossSpec::h)
        .def_readwrite("h_scale", &LossSpec::h_scale)
        .def("label", &LossSpec::label)
        .def("__repr__", &LossSpec::label);

    m.def("softmax", [](std::vector<double> l) { return softmax(LogitVector(std::move(l))).vec(); });
    m.def("log_softmax", [](std::vector<double> l) { return log_softmax(LogitVector(std::move(l))).vec(); });
    m.def("entropy", [](std::vector<double> p) { return entropy(ProbVector(std::move(p))); });
    m.def("forward_kl", [](std::vector<double> p, std::vector<double> f) {
        return forward_kl(ProbVector(std::move(p)), ProbVector(std::move(f)));
    });
    m.def("reverse_kl", [](std::vector<double> f, std::vector<double> p) {
        return reverse_kl(ProbVector(std::move(f)), ProbVector(std::move(p)));
    });
    m.def("sharpen", [](std::vector<double> l, double beta) { return sharpen(LogitVector(std::move(l)), beta).vec(); },
          py::arg("logits"), py::arg("beta"));

    m.def("ce_gradient", [](std::vector<double> f, std::size_t target) {
        return ce_gradient(ProbVector(std::move(f)), target);
    });
    m.def(
        "flow_decompose",
        [](std::vector<double> weights, std::size_t target) {
            const auto d = flow_decompose(ProbVector(std::move(weights)), target);
            std::vector<std::pair<std::size_t, double>> flows;
            for (const auto& f : d.flows()) flows.emplace_back(f.source, f.weight);
            return py::dict(py::arg("target") = target, py::arg("flows") = flows,
                            py::arg("residual") = conservation_residual(d), py::arg("reconstruct") = d.reconstruct());
        },
        py::arg("weights"), py::arg("target"));
    m.def(
        "run_ce_iteration",
        [](std::vector<double> l, std::size_t target, double eta, std::size_t max_steps) {
            return trajectory_dict(run_ce_iteration(LogitVector(std::move(l)), target, iteration_options(eta, max_steps)));
        },
        py::arg("logits"), py::arg("target"), py::arg("eta") = 1.0, py::arg("max_steps") = 100000);
    m.def(
        "run_gem_prototype",
        [](std::vector<double> l, std::size_t target, double eta, std::size_t max_steps) {
            return trajectory_dict(
                run_gem_prototype(LogitVector(std::move(l)), target, iteration_options(eta, max_steps)));
        },
        py::arg("logits"), py::arg("target"), py::arg("eta") = 1.0, py::arg("max_steps") = 100000);

    m.def("gem_q", [](std::vector<double> l, double beta) { return gem_q(LogitVector(std::move(l)), beta).vec(); });
    m.def("loss_value", [](std::vector<double> l, std::size_t t, const LossSpec& s) {
        return loss_value(LogitVector(std::move(l)), t, s);
    });
    m.def("loss_ascent", [](std::vector<double> l, std::size_t t, const LossSpec& s) {
        return loss_ascent(LogitVector(std::move(l)), t, s);
    });
    m.def(
        "analytic_vs_numeric",
        [](std::vector<double> l, std::size_t t, const LossSpec& s, double step) {
            return analytic_vs_numeric(LogitVector(std::move(l)), t, s, step);
        },
        py::arg("logits"), py::arg("target"), py::arg("spec"), py::arg("step") = 1e-3);
    m.def("tail_pull", [](std::vector<double> f, std::size_t token, double beta, double gamma) {
        const auto tp = tail_pull(ProbVector(std::move(f)), token, beta, gamma);
        return py::dict(py::arg("entropy_regularizer") = tp.entropy_regularizer, py::arg("gem_ratio") = tp.gem_ratio);
    });
    m.def("closed_form_equilibrium", [](std::vector<double> p, double beta) {
        return closed_form_equilibrium(ProbVector(std::move(p)), beta).vec();
    });
    m.def(
        "train_equilibrium",
        [](std::vector<double> p, double beta, double lr, std::size_t max_steps) {
            const ProbVector target(std::move(p));
            TabularModel model(target.size());
            OptimizerConfig oc;
            oc.lr = lr > 0 ? lr : beta;
            OptimizerState opt(oc);
            const std::vector<ExpectedTarget> t{{ContextKey{}, target, 1.0}};
            ConvergenceOptions conv;
            conv.max_steps = max_steps;
            const auto r = train_to_convergence(model, t, LossSpec::gem(beta), opt, conv);
            return py::dict(py::arg("logits") = model.logits(ContextKey{}).vec(), py::arg("steps") = r.steps,
                            py::arg("grad_norm") = r.grad_norm, py::arg("converged") = r.converged);
        },
        py::arg("p"), py::arg("beta"), py::arg("lr") = 0.0, py::arg("max_steps") = 1000000,
        "Exact-mode GEM training of one context toward p; lr defaults to beta.");

    m.def("pass_at_k", &pass_at_k, py::arg("n"), py::arg("c"), py::arg("k"));
    m.def("self_bleu_diversity", [](const std::vector<std::vector<TokenId>>& r, std::size_t max_n) {
        return self_bleu_diversity(r, max_n);
    }, py::arg("responses"), py::arg("max_n") = 4);
    m.def("ngram_diversity", [](const std::vector<std::vector<TokenId>>& r, std::size_t n) {
        return ngram_diversity(r, n);
    }, py::arg("responses"), py::arg("n") = 1);
    m.def("bt_win_prob", &bt_win_prob);

    m.def(
        "run_experiment_json",
        [](const std::string& config_json, std::size_t jobs, bool write_files) {
            const auto cfg = ExperimentConfig::from_json(nlohmann::json::parse(config_json));
            ExperimentResult res;
            {
                py::gil_scoped_release release;
                res = run_experiment(cfg, jobs, std::nullopt, write_files);
            }
            nlohmann::json out = nlohmann::json::array();
            for (const auto& r : res.records) out.push_back(r.to_json());
            return out.dump();
        },
        py::arg("config_json"), py::arg("jobs") = 1, py::arg("write_files") = false);
    m.def("version", &version_string);
}
