#pragma once

// Tabular conditional models: one logit row per context, trained with SGD or
// Adam on the losses in losses.hpp.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gemlab/context.hpp"
#include "gemlab/dist.hpp"
#include "gemlab/losses.hpp"

namespace gemlab {

using LogitTable = std::map<ContextKey, std::vector<double>>;

class TabularModel {
public:
    static constexpr int kFormatVersion = 1;

    explicit TabularModel(std::size_t vocab_size, std::size_t window = kUnlimitedWindow);
    /// Starts from `initial` rows; they become the frozen initialization snapshot.
    TabularModel(std::size_t vocab_size, std::size_t window, LogitTable initial);

    std::size_t vocab_size() const noexcept { return vocab_size_; }
    std::size_t window() const noexcept { return window_; }
    TokenId eos_token() const noexcept { return static_cast<TokenId>(vocab_size_ - 1); }

    /// Stored row; an unseen context gets a zero row, which is materialized.
    LogitVector logits(const ContextKey& ctx);
    /// Read-only lookup: unseen contexts read as the zero row, nothing is stored.
    std::span<const double> row(const ContextKey& ctx) const;
    std::span<double> mutable_row(const ContextKey& ctx);
    void set_row(const ContextKey& ctx, std::vector<double> values);
    bool has_row(const ContextKey& ctx) const { return table_.contains(ctx); }

    const LogitTable& table() const noexcept { return table_; }
    const LogitTable& init_snapshot() const noexcept { return init_; }

    /// l2 norm of (table - init) over materialized rows; rows absent from the
    /// snapshot compare against the zero initialization.
    double param_distance() const;

    nlohmann::json to_json() const;
    static TabularModel from_json(const nlohmann::json& doc);

private:
    std::size_t vocab_size_;
    std::size_t window_;
    LogitTable table_;
    LogitTable init_;
    std::vector<double> zeros_;
};

double param_distance(const TabularModel& model);

enum class OptimizerKind { SGD, ADAM };

struct LrSchedule {
    enum class Kind { CONSTANT, COSINE };
    Kind kind = Kind::CONSTANT;
    double warmup_ratio = 0.0;
    std::size_t total_steps = 0;

    /// Multiplier on the base learning rate for the 0-based step index.
    /// COSINE: linear warm-up over warmup_ratio * total_steps, then
    /// 0.5 * (1 + cos(pi * progress)).
    double multiplier(std::size_t step) const;
};

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::SGD;
    double lr = 0.1;
    double weight_decay = 0.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    LrSchedule schedule;

    void validate() const;
};

/// Optimizer hyperparameters plus per-parameter moments and the step counter.
/// Updates are dense: every row with Adam state moves every step, and weight
/// decay applies to every materialized row.
class OptimizerState {
public:
    explicit OptimizerState(OptimizerConfig config);

    const OptimizerConfig& config() const noexcept { return config_; }
    std::size_t step_count() const noexcept { return steps_; }
    double current_lr() const { return config_.lr * config_.schedule.multiplier(steps_); }

    /// Applies one update given descent gradients (dL/dtheta) per row.
    void apply(TabularModel& model, const LogitTable& gradients);

private:
    OptimizerConfig config_;
    std::size_t steps_ = 0;
    LogitTable m_;
    LogitTable v_;
};

struct TrainingExample {
    ContextKey context;
    TokenId target;
};

/// Target distribution for one context in exact-expectation mode.
struct ExpectedTarget {
    ContextKey context;
    ProbVector distribution;
    double weight = 1.0;
};

struct StepResult {
    double loss;
    double grad_norm;  // l2 norm of the mean loss gradient, before weight decay
};

/// One optimizer step on the mean loss over `batch`.
StepResult train_step(TabularModel& model, std::span<const TrainingExample> batch, const LossSpec& spec,
                      OptimizerState& opt);

/// One optimizer step on sum_c weight_c * E_{y ~ p_c}[loss] / sum_c weight_c.
StepResult train_step_expected(TabularModel& model, std::span<const ExpectedTarget> targets, const LossSpec& spec,
                               OptimizerState& opt);

/// p^beta / sum p^beta = softmax(beta log p): the model half of the GEM
/// equilibrium, also the minimizer of KL(f||p) - gamma H(f) for
/// beta = 1 / (gamma + 1). Requires p > 0 everywhere and beta in (0, 1].
ProbVector closed_form_equilibrium(const ProbVector& p, double beta);

struct ConvergenceOptions {
    double tol = 1e-8;            // stop once the gradient norm drops below this
    std::size_t max_steps = 1000000;
};

struct ConvergenceResult {
    std::size_t steps;
    double grad_norm;
    bool converged;
};

/// Repeats train_step_expected until the gradient norm falls below tol.
ConvergenceResult train_to_convergence(TabularModel& model, std::span<const ExpectedTarget> targets,
                                       const LossSpec& spec, OptimizerState& opt, const ConvergenceOptions& conv);

}  // namespace gemlab
