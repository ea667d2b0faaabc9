// gemlab command line: train / sweep / analyze-flow / equilibrium / eval / report.
// Exit codes: 0 ok, 1 config or usage error, 2 runtime failure, 3 check failure.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gemlab/dist.hpp"
#include "gemlab/errors.hpp"
#include "gemlab/flow.hpp"
#include "gemlab/harness.hpp"
#include "gemlab/losses.hpp"
#include "gemlab/models.hpp"
#include "gemlab/report.hpp"

using nlohmann::json;
using namespace gemlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitCheck = 3;

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::size_t jobs = 1;
    bool exact = false;
    std::string format = "csv";
};

void add_common(CLI::App* cmd, CommonOptions& o, bool config_required) {
    auto* c = cmd->add_option("--config", o.config, "experiment config (JSON)");
    if (config_required) {
        c->required();
    }
    cmd->add_option("--seed", o.seed, "override the config seed");
    cmd->add_option("--out", o.out, "override the output directory");
    cmd->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_flag("--exact", o.exact, "exact-expectation training");
    cmd->add_option("--format", o.format, "stdout format")->check(CLI::IsMember({"csv", "json"}));
}

ExperimentConfig load_config(const CommonOptions& o) {
    ExperimentConfig c = ExperimentConfig::load(o.config);
    if (o.seed) {
        c.seed = *o.seed;
    }
    if (o.out) {
        c.output_dir = *o.out;
    }
    if (o.exact) {
        c.exact = true;
    }
    c.validate();
    return c;
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_double(item));
    }
    return out;
}

void print_records(const std::vector<RunRecord>& records, const std::string& format) {
    if (format == "json") {
        json arr = json::array();
        for (const auto& r : records) {
            arr.push_back(r.to_json());
        }
        std::cout << arr.dump(2) << "\n";
        return;
    }
    std::cout << emit_csv(report_table(std::span<const RunRecord>(records), ReportKind::SUMMARY_CSV));
}

int report_failures(const std::vector<RunRecord>& records) {
    int rc = kExitOk;
    for (const auto& r : records) {
        if (r.status != "ok") {
            std::cerr << "cell '" << r.cell << "' failed: " << r.error << "\n";
            rc = kExitRuntime;
        }
    }
    return rc;
}

json trajectory_json(const Trajectory& t) {
    json steps = json::array();
    for (const auto& s : t.steps) {
        steps.push_back({{"step", s.step}, {"source", s.source}, {"amount", s.amount}, {"logits", s.logits.vec()}});
    }
    const ProbVector f = softmax(t.final_logits());
    return {{"steps_taken", t.steps_taken},
            {"terminated_by", std::string(to_string(t.terminated_by))},
            {"final_probs", f.vec()},
            {"final_entropy", entropy(f)},
            {"final_argmax", argmax_index(f.values())},
            {"steps", steps}};
}

struct FlowArgs {
    std::string logits;
    std::size_t target = 0;
    std::string kind = "GEM";
    double beta = 1.0;
    double gamma = 0.0;
    std::string h = "LINEAR";
    double h_scale = 0.01;
    double eta = 1.0;
    std::size_t max_steps = 100000;
    std::optional<std::string> out;
    std::optional<std::string> svg;
};

int analyze_flow(const FlowArgs& a) {
    const LogitVector logits(parse_list(a.logits));
    LossSpec spec;
    spec.kind = parse_loss_kind(a.kind);
    spec.beta = a.beta;
    spec.gamma = a.gamma;
    spec.h = parse_h_function(a.h);
    spec.h_scale = a.h_scale;
    spec.validate();

    const ProbVector f = softmax(logits);
    const auto grad = loss_ascent(logits, a.target, spec);
    json doc = {{"logits", logits.vec()},
                {"target", a.target},
                {"loss", spec.label()},
                {"probs", f.vec()},
                {"gradient", grad}};
    if (spec.kind == LossKind::GEM) {
        doc["q"] = gem_q(logits, spec.beta).vec();
    }

    std::optional<FlowDecomposition> d;
    try {
        d = decompose_gradient(grad, a.target);
    } catch (const std::invalid_argument& e) {
        // Entropy-regularized gradients can push some sources up; no pure flow reading.
        doc["flows"] = nullptr;
        doc["flow_error"] = e.what();
    }
    if (d) {
        json flows = json::array();
        for (const auto& fl : d->flows()) {
            flows.push_back({{"target", fl.target}, {"source", fl.source}, {"weight", fl.weight}});
        }
        doc["flows"] = flows;
        doc["target_component"] = d->target_component();
        doc["total_weight"] = d->total_weight();
        doc["conservation_residual"] = conservation_residual(*d);
    }
    IterationOptions opts;
    opts.eta = a.eta;
    opts.max_steps = a.max_steps;
    doc["ce_iteration"] = trajectory_json(run_ce_iteration(logits, a.target, opts));
    doc["gem_prototype"] = trajectory_json(run_gem_prototype(logits, a.target, opts));

    const std::string text = doc.dump(2) + "\n";
    if (a.out) {
        std::ofstream(*a.out, std::ios::binary) << text;
    } else {
        std::cout << text;
    }
    if (a.svg) {
        std::vector<std::string> labels;
        std::vector<double> values;
        if (d) {
            for (const auto& fl : d->flows()) {
                labels.push_back(std::to_string(fl.source) + "->" + std::to_string(fl.target));
                values.push_back(fl.weight);
            }
        }
        std::ofstream(*a.svg, std::ios::binary)
            << svg_bar_chart("logit flows into token " + std::to_string(a.target), labels, values);
    }
    return kExitOk;
}

struct EqArgs {
    std::string p;
    double beta = 0.7;
    bool check = false;
    double tol = 1e-4;
    double q_tol = 1e-3;
};

int equilibrium_single(const EqArgs& a, const std::string& format) {
    const ProbVector p(parse_list(a.p));
    const ProbVector closed = closed_form_equilibrium(p, a.beta);
    const LossSpec spec = LossSpec::gem(a.beta);
    TabularModel model(p.size());
    OptimizerConfig oc;
    oc.lr = a.beta;
    OptimizerState opt(oc);
    const std::vector<ExpectedTarget> targets{{ContextKey{}, p, 1.0}};
    const ConvergenceResult conv = train_to_convergence(model, targets, spec, opt, {});
    const LogitVector theta(model.logits(ContextKey{}).vec());
    const ProbVector f = softmax(theta);
    const ProbVector q = sharpen(theta, a.beta);
    double dev_f = 0.0;
    double dev_q = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        dev_f = std::max(dev_f, std::abs(f[i] - closed[i]));
        dev_q = std::max(dev_q, std::abs(q[i] - p[i]));
    }
    const bool pass = conv.converged && dev_f < a.tol && dev_q < a.q_tol;
    if (format == "json") {
        std::cout << json{{"p", p.vec()},          {"beta", a.beta},         {"closed_form", closed.vec()},
                          {"trained", f.vec()},    {"sharpened", q.vec()},   {"max_dev_f", dev_f},
                          {"max_dev_q", dev_q},    {"steps", conv.steps},    {"converged", conv.converged}}
                         .dump(2)
                  << "\n";
    } else {
        std::cout << "token,p,closed_form,trained,sharpened\n";
        for (std::size_t i = 0; i < p.size(); ++i) {
            std::cout << i << ',' << format_double(p[i]) << ',' << format_double(closed[i]) << ','
                      << format_double(f[i]) << ',' << format_double(q[i]) << "\n";
        }
        std::cerr << "steps=" << conv.steps << " max_dev_f=" << dev_f << " max_dev_q=" << dev_q << "\n";
    }
    return a.check && !pass ? kExitCheck : kExitOk;
}

int equilibrium_config(const CommonOptions& o, const EqArgs& a) {
    ExperimentConfig c = load_config(o);
    c.exact = true;
    const auto result = run_experiment(c, o.jobs);
    print_records(result.records, o.format);
    int rc = report_failures(result.records);
    if (rc != kExitOk) {
        return rc;
    }
    for (const auto& r : result.records) {
        const auto it = r.final_metrics.find("eq_dev_truth");
        if (it == r.final_metrics.end()) {
            continue;
        }
        const bool ok = it->second < a.q_tol;
        std::cerr << r.cell << ": eq_dev_truth=" << it->second << (ok ? "" : "  FAIL") << "\n";
        if (a.check && !ok) {
            rc = kExitCheck;
        }
    }
    return rc;
}

std::vector<RunRecord> read_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open records file " + path);
    }
    std::vector<RunRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            out.push_back(RunRecord::from_json(json::parse(line)));
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gemlab: CE vs GEM on tabular generative models"};
    app.set_version_flag("--version", version_string());
    app.require_subcommand(1);

    CommonOptions train_o;
    std::optional<std::string> cell;
    auto* train = app.add_subcommand("train", "train and evaluate one grid cell");
    add_common(train, train_o, true);
    train->add_option("--cell", cell, "loss name from the config (default: first)");

    CommonOptions sweep_o;
    auto* sweep = app.add_subcommand("sweep", "run the full loss grid");
    add_common(sweep, sweep_o, true);

    FlowArgs flow_a;
    auto* flow = app.add_subcommand("analyze-flow", "flow decomposition and CE / prototype trajectories");
    flow->add_option("--logits", flow_a.logits, "comma-separated logits")->required();
    flow->add_option("--target", flow_a.target, "target token (0-based)")->required();
    flow->add_option("--kind", flow_a.kind, "CE | CE_ENTROPY | GEM");
    flow->add_option("--beta", flow_a.beta);
    flow->add_option("--gamma", flow_a.gamma);
    flow->add_option("--h-function", flow_a.h, "LINEAR | LOG_SIGMOID");
    flow->add_option("--h-scale", flow_a.h_scale);
    flow->add_option("--eta", flow_a.eta, "step size of the trajectories");
    flow->add_option("--max-steps", flow_a.max_steps);
    flow->add_option("--out", flow_a.out, "write JSON here instead of stdout");
    flow->add_option("--svg", flow_a.svg, "bar-flow diagram");

    CommonOptions eq_o;
    EqArgs eq_a;
    auto* eq = app.add_subcommand("equilibrium", "closed-form vs trained GEM equilibrium");
    add_common(eq, eq_o, false);
    eq->add_option("--p", eq_a.p, "comma-separated target distribution");
    eq->add_option("--beta", eq_a.beta);
    eq->add_option("--tol", eq_a.tol, "tolerance on |f - closed form|");
    eq->add_flag("--check", eq_a.check, "exit 3 when the tolerance is missed");

    CommonOptions eval_o;
    std::string model_path;
    std::optional<std::string> eval_cell;
    auto* ev = app.add_subcommand("eval", "evaluate a saved model on the config's task");
    add_common(ev, eval_o, true);
    ev->add_option("--model", model_path, "model.json")->required();
    ev->add_option("--cell", eval_cell, "loss whose equilibrium to compare against");

    std::string records_path;
    std::string kind = "summary-csv";
    std::string report_out = ".";
    bool svg = false;
    auto* rep = app.add_subcommand("report", "tables and plots from records.jsonl");
    rep->add_option("--records", records_path, "records.jsonl")->required();
    rep->add_option("--kind", kind)->check(
        CLI::IsMember({"summary-csv", "pass-at-k-curve", "entropy-table", "distance-curve"}));
    rep->add_option("--out", report_out, "output directory");
    rep->add_flag("--svg", svg, "also write an SVG plot");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*train) {
            const auto c = load_config(train_o);
            const auto result = run_experiment(c, 1, cell ? cell : std::optional<std::string>(c.losses.front().name));
            print_records(result.records, train_o.format);
            std::cerr << "wrote " << result.directory.string() << "\n";
            return report_failures(result.records);
        }
        if (*sweep) {
            const auto c = load_config(sweep_o);
            const auto result = run_experiment(c, sweep_o.jobs);
            print_records(result.records, sweep_o.format);
            std::cerr << "wrote " << result.directory.string() << "\n";
            return report_failures(result.records);
        }
        if (*flow) {
            return analyze_flow(flow_a);
        }
        if (*eq) {
            if (!eq_o.config.empty()) {
                return equilibrium_config(eq_o, eq_a);
            }
            if (eq_a.p.empty()) {
                std::cerr << "equilibrium needs --p or --config\n";
                return kExitConfig;
            }
            return equilibrium_single(eq_a, eq_o.format);
        }
        if (*ev) {
            const auto c = load_config(eval_o);
            std::ifstream in(model_path);
            if (!in) {
                throw ConfigError("cannot open model " + model_path);
            }
            const TabularModel model = TabularModel::from_json(json::parse(in));
            const Task task = generate_task(c.task, c.seed);
            NamedLoss loss = c.losses.front();
            if (eval_cell) {
                const auto it = std::find_if(c.losses.begin(), c.losses.end(),
                                             [&](const NamedLoss& l) { return l.name == *eval_cell; });
                if (it == c.losses.end()) {
                    throw ConfigError("no loss named '" + *eval_cell + "'");
                }
                loss = *it;
            }
            RunRecord rec;
            rec.cell = loss.name;
            rec.loss = loss.spec.label();
            rec.config_hash = c.hash();
            rec.version = version_string();
            rec.seed = c.seed;
            evaluate_model(model, task, c, loss.spec, rec);
            print_records({rec}, eval_o.format);
            return kExitOk;
        }
        if (*rep) {
            const auto records = read_records(records_path);
            const auto files = report(records, parse_report_kind(kind), report_out, svg);
            std::cout << files.csv.string() << "\n";
            if (files.svg) {
                std::cout << files.svg->string() << "\n";
            }
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
