#include "gemlab/flow.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "gemlab/errors.hpp"

namespace gemlab {

namespace {

void require_target(std::size_t target, std::size_t k) {
    if (target >= k) {
        throw InvalidInput("target index " + std::to_string(target) + " out of range for vocabulary of " +
                           std::to_string(k));
    }
}

void require_eta(const IterationOptions& opts) {
    if (!(opts.eta > 0.0) || !std::isfinite(opts.eta)) {
        throw InvalidParameter("iteration step size eta must be > 0");
    }
    if (opts.thin_every == 0) {
        throw InvalidParameter("thin_every must be >= 1");
    }
}

// Moves `amount` of logit from source to target and records the step
// according to the snapshot policy.
class Stepper {
public:
    Stepper(const LogitVector& start, std::size_t target, const IterationOptions& opts)
        : logits_(start.vec()), probs_(start.size()), target_(target), opts_(opts),
          traj_{start, target, {}, 0, Termination::StepBudget} {
        refresh();
    }

    std::span<const double> probs() const { return probs_; }

    void transfer(std::size_t source, double amount) {
        logits_[source] -= amount;
        logits_[target_] += amount;
        ++traj_.steps_taken;
        const std::size_t n = traj_.steps_taken;
        last_source_ = source;
        last_amount_ = amount;
        if (n <= opts_.dense_snapshots || (n - opts_.dense_snapshots) % opts_.thin_every == 0) {
            traj_.steps.push_back({n, source, amount, LogitVector(logits_)});
            stored_last_ = true;
        } else {
            stored_last_ = false;
        }
        refresh();
    }

    Trajectory finish(Termination how) {
        if (traj_.steps_taken > 0 && !stored_last_) {
            traj_.steps.push_back({traj_.steps_taken, last_source_, last_amount_, LogitVector(logits_)});
        }
        traj_.terminated_by = how;
        return std::move(traj_);
    }

private:
    void refresh() { detail::softmax_into(logits_, probs_); }

    std::vector<double> logits_;
    std::vector<double> probs_;
    std::size_t target_;
    const IterationOptions& opts_;
    Trajectory traj_;
    std::size_t last_source_ = 0;
    double last_amount_ = 0.0;
    bool stored_last_ = true;
};

}  // namespace

FlowDecomposition::FlowDecomposition(std::size_t vocab_size, std::size_t target, std::vector<Flow> flows,
                                     double target_component)
    : vocab_size_(vocab_size), target_(target), flows_(std::move(flows)), target_component_(target_component) {
    require_target(target_, vocab_size_);
    std::vector<bool> seen(vocab_size_, false);
    for (const Flow& fl : flows_) {
        if (fl.target != target_ || fl.source >= vocab_size_ || fl.source == target_) {
            throw InvalidInput("flow must point from a non-target source to the decomposition target");
        }
        if (seen[fl.source]) {
            throw InvalidInput("flow sources must be distinct");
        }
        if (!(fl.weight >= 0.0)) {
            throw InvalidInput("flow weights must be non-negative");
        }
        seen[fl.source] = true;
    }
}

std::vector<double> FlowDecomposition::reconstruct() const {
    std::vector<double> g(vocab_size_, 0.0);
    for (const Flow& fl : flows_) {
        g[fl.target] += fl.weight;
        g[fl.source] -= fl.weight;
    }
    return g;
}

double FlowDecomposition::total_weight() const {
    return std::accumulate(flows_.begin(), flows_.end(), 0.0,
                           [](double acc, const Flow& fl) { return acc + fl.weight; });
}

std::vector<double> ce_gradient(const ProbVector& f, std::size_t target) {
    require_target(target, f.size());
    std::vector<double> g(f.size());
    for (std::size_t j = 0; j < f.size(); ++j) {
        g[j] = -f[j];
    }
    g[target] = 1.0 - f[target];
    return g;
}

FlowDecomposition flow_decompose(const ProbVector& weights, std::size_t target) {
    require_target(target, weights.size());
    std::vector<Flow> flows;
    for (std::size_t j = 0; j < weights.size(); ++j) {
        if (j != target && weights[j] > 0.0) {
            flows.push_back({target, j, weights[j]});
        }
    }
    return FlowDecomposition(weights.size(), target, std::move(flows), 1.0 - weights[target]);
}

FlowDecomposition decompose_gradient(std::span<const double> gradient, std::size_t target) {
    require_target(target, gradient.size());
    std::vector<Flow> flows;
    for (std::size_t j = 0; j < gradient.size(); ++j) {
        if (j == target) {
            continue;
        }
        if (gradient[j] > 0.0) {
            throw InvalidInput("gradient pushes a source logit up; it is not a flow into the target");
        }
        if (gradient[j] < 0.0) {
            flows.push_back({target, j, -gradient[j]});
        }
    }
    return FlowDecomposition(gradient.size(), target, std::move(flows), gradient[target]);
}

double conservation_residual(const FlowDecomposition& d) { return std::abs(d.total_weight() - d.target_component()); }

LogitVector apply_all_flows(const LogitVector& logits, const FlowDecomposition& d, double eta) {
    if (logits.size() != d.vocab_size()) {
        throw InvalidInput("apply_all_flows: size mismatch");
    }
    std::vector<double> out = logits.vec();
    for (const Flow& fl : d.flows()) {
        out[fl.target] += eta * fl.weight;
        out[fl.source] -= eta * fl.weight;
    }
    return LogitVector(std::move(out));
}

std::string_view to_string(Termination t) {
    return t == Termination::StoppingRule ? "stopping-rule" : "step-budget";
}

Trajectory run_ce_iteration(const LogitVector& logits, std::size_t target, const IterationOptions& opts) {
    require_target(target, logits.size());
    require_eta(opts);
    Stepper stepper(logits, target, opts);
    for (std::size_t n = 0; n < opts.max_steps; ++n) {
        const auto f = stepper.probs();
        std::size_t source = target;
        for (std::size_t j = 0; j < f.size(); ++j) {
            if (j != target && f[j] > opts.source_threshold && (source == target || f[j] > f[source])) {
                source = j;
            }
        }
        if (source == target) {
            return stepper.finish(Termination::StoppingRule);
        }
        stepper.transfer(source, opts.eta * f[source]);
    }
    const auto f = stepper.probs();
    for (std::size_t j = 0; j < f.size(); ++j) {
        if (j != target && f[j] > opts.source_threshold) {
            return stepper.finish(Termination::StepBudget);
        }
    }
    return stepper.finish(Termination::StoppingRule);
}

Trajectory run_gem_prototype(const LogitVector& logits, std::size_t target, const IterationOptions& opts) {
    require_target(target, logits.size());
    require_eta(opts);
    constexpr double kSourceWeight = 1.0;  // q = Dirac at the argmax
    Stepper stepper(logits, target, opts);
    for (std::size_t n = 0; n < opts.max_steps; ++n) {
        const std::size_t best = argmax_index(stepper.probs());
        if (best == target) {
            return stepper.finish(Termination::StoppingRule);
        }
        stepper.transfer(best, opts.eta * kSourceWeight);
    }
    if (argmax_index(stepper.probs()) == target) {
        return stepper.finish(Termination::StoppingRule);
    }
    return stepper.finish(Termination::StepBudget);
}

}  // namespace gemlab
