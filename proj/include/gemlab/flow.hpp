#pragma once

// Logit-flow view of softmax gradients.
//
// Sign convention: every "gradient" returned here is an ascent direction,
// i.e. -dL/dtheta. A flow e_{i<-j} adds one unit to the target logit i and
// removes one unit from the source logit j, so it always sums to zero.
// Token indices are zero-based.

#include <cstddef>
#include <string_view>
#include <vector>

#include "gemlab/dist.hpp"

namespace gemlab {

struct Flow {
    std::size_t target;
    std::size_t source;
    double weight;
};

class FlowDecomposition {
public:
    /// `target_component` is the entry of the decomposed gradient at the
    /// target; conservation says it equals the total outgoing weight.
    FlowDecomposition(std::size_t vocab_size, std::size_t target, std::vector<Flow> flows,
                      double target_component);

    std::size_t vocab_size() const noexcept { return vocab_size_; }
    std::size_t target() const noexcept { return target_; }
    const std::vector<Flow>& flows() const noexcept { return flows_; }
    double target_component() const noexcept { return target_component_; }

    /// Sum of w * e_{i<-j}.
    std::vector<double> reconstruct() const;
    double total_weight() const;

private:
    std::size_t vocab_size_;
    std::size_t target_;
    std::vector<Flow> flows_;
    double target_component_;
};

/// onehot(target) - f, the ascent direction of the cross-entropy loss.
std::vector<double> ce_gradient(const ProbVector& f, std::size_t target);

/// One flow per source j != target with weight weights[j]. With weights = f
/// this decomposes ce_gradient; with weights = q it decomposes GEM's.
/// Zero-weight sources are omitted.
FlowDecomposition flow_decompose(const ProbVector& weights, std::size_t target);

/// Reads an arbitrary ascent direction as flows into `target`: the weight of
/// source j is -gradient[j]. Throws if any source entry is positive.
FlowDecomposition decompose_gradient(std::span<const double> gradient, std::size_t target);

/// |total outgoing weight - target component|.
double conservation_residual(const FlowDecomposition& d);

/// logits + eta * reconstruct(d): all flows applied at once, i.e. one
/// gradient-ascent step.
LogitVector apply_all_flows(const LogitVector& logits, const FlowDecomposition& d, double eta);

enum class Termination { StoppingRule, StepBudget };

std::string_view to_string(Termination t);

struct TrajectoryStep {
    std::size_t step;    // 1-based index of the step that produced `logits`
    std::size_t source;  // token that gave up logit mass
    double amount;       // eta * w moved from source to target
    LogitVector logits;  // state after the step
};

struct Trajectory {
    LogitVector initial;
    std::size_t target;
    std::vector<TrajectoryStep> steps;  // possibly thinned, see IterationOptions
    std::size_t steps_taken = 0;
    Termination terminated_by = Termination::StepBudget;

    const LogitVector& final_logits() const { return steps.empty() ? initial : steps.back().logits; }
};

struct IterationOptions {
    double eta = 1.0;
    std::size_t max_steps = 100000;
    /// A source counts as "still holding mass" while f(j) > source_threshold.
    double source_threshold = 1e-8;
    /// Every step is stored up to this many steps, then every `thin_every`th.
    /// The final state is always stored.
    std::size_t dense_snapshots = 10000;
    std::size_t thin_every = 100;
};

/// The sequential CE procedure: while some source j has f(j) above the
/// threshold, move eta * f(j) of logit from the most probable such source
/// (lowest index on ties) to the target.
Trajectory run_ce_iteration(const LogitVector& logits, std::size_t target, const IterationOptions& opts);

/// The sparse, self-terminating GEM prototype: while the target is not the
/// argmax, move eta * w from j = argmax f to the target. The weight is the
/// beta = 0 meta-controller mass q(j) = 1.
Trajectory run_gem_prototype(const LogitVector& logits, std::size_t target, const IterationOptions& opts);

}  // namespace gemlab
