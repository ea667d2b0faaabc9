#pragma once

// Config-driven experiment runner: synthetic tasks, CE-vs-GEM grids,
// evaluation and per-cell persistence. The JSON schema is documented in
// README.md; unknown fields are rejected.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gemlab/context.hpp"
#include "gemlab/dist.hpp"
#include "gemlab/losses.hpp"
#include "gemlab/models.hpp"
#include "gemlab/record.hpp"
#include "gemlab/sequential.hpp"

namespace gemlab {

enum class TaskFamily { DIRICHLET, MULTI_ANSWER };
enum class RewardId { VERIFIER, TRUTH_LOGLIK };

struct TaskSpec {
    TaskFamily family = TaskFamily::DIRICHLET;
    std::size_t vocab_size = 32;
    std::size_t num_contexts = 64;
    std::size_t prompt_len = 0;  // 0: fewest base-(K-1) digits that index every context
    std::size_t response_len = 1;
    std::size_t samples_per_context = 8;
    double concentration = 0.1;  // Dirichlet alpha; small is skewed
    std::size_t num_correct = 3;  // correct tokens per context (verifier reward)
    double noise = 0.1;           // MULTI_ANSWER: truth mass outside the correct set
    std::size_t window = 4;       // kUnlimitedWindow when the config says null

    std::size_t effective_prompt_len() const;
    void validate() const;
};

struct NamedLoss {
    std::string name;
    LossSpec spec;
};

struct EvalSpec {
    std::size_t num_samples = 32;
    std::vector<std::size_t> pass_k = {1, 2, 4, 8, 16};
    DecodeConfig decode;
    RewardId reward = RewardId::VERIFIER;
    std::size_t self_bleu_max_n = 4;
    std::size_t ngram_n = 1;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    TaskSpec task;
    std::vector<NamedLoss> losses;
    OptimizerConfig optimizer;
    std::size_t epochs = 1;
    std::size_t batch_size = 1;
    bool exact = false;
    std::size_t max_steps = 1000000;
    double tol = 1e-8;
    std::size_t log_every = 0;
    EvalSpec eval;

    /// Throws ConfigError on unknown fields, bad types, or invalid values.
    static ExperimentConfig from_json(const nlohmann::json& doc);
    static ExperimentConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    /// Hex FNV-1a of the canonical JSON dump, output_dir excluded.
    std::string hash() const;
    void validate() const;
    TrainConfig train_config(const LossSpec& loss) const;
};

/// Ground truth of a synthetic task: conditional distribution and correct
/// token set per (windowed) context.
struct TaskTruth {
    std::map<ContextKey, ProbVector> rows;
    std::map<ContextKey, std::vector<TokenId>> correct;
};

struct Task {
    TaskSpec spec;
    std::uint64_t seed = 0;
    std::vector<std::vector<TokenId>> prompts;  // one per context, in order
    Corpus corpus;
    TaskTruth truth;
};

/// Samples samples_per_context responses per prompt from the truth rows.
/// Truth rows are drawn per context key from seeds derived from (seed, key),
/// so a row does not depend on which other contexts were visited.
Task generate_task(const TaskSpec& spec, std::uint64_t seed);

/// Truth row (and correct set) for one context, generated on demand.
ProbVector truth_row(const TaskSpec& spec, std::uint64_t seed, const ContextKey& key);
std::vector<TokenId> correct_set(const TaskSpec& spec, std::uint64_t seed, const ContextKey& key);

/// Synthetic rewards. Both are pure functions of the sequence given the task.
/// VERIFIER: 1 if every response token lies in the correct set of its
/// context, else 0. TRUTH_LOGLIK: sum of truth log-probabilities of the
/// response tokens.
double reward(RewardId id, const Task& task, const TokenSequence& seq);

/// Greedy decoding under the truth rows: the fixed reference policy.
TokenSequence truth_reference(const Task& task, std::span<const TokenId> prompt, std::size_t max_len);

/// p^beta renormalized, with 0^beta = 0 (so zero entries stay zero).
ProbVector power_normalize(const ProbVector& p, double beta);

/// The beta at which `spec`'s equilibrium is p^beta / Z: GEM beta, 1 for
/// CE. 0 for CE_ENTROPY, whose fixed point is not of that form.
double equilibrium_beta(const LossSpec& spec);

/// Metrics for a trained model on the task; fills record.final_metrics and
/// record.curves["pass_at_k"] (aligned with eval.pass_k).
void evaluate_model(const TabularModel& model, const Task& task, const ExperimentConfig& config,
                    const LossSpec& loss, RunRecord& record);

/// Trains and evaluates one grid cell. Errors are caught and recorded as
/// status "failed".
struct CellOutput {
    RunRecord record;
    std::optional<TabularModel> model;
};
CellOutput run_cell(const ExperimentConfig& config, const Task& task, const NamedLoss& loss);

struct ExperimentResult {
    std::string config_hash;
    std::filesystem::path directory;  // <output_dir>/<hash>
    std::vector<RunRecord> records;   // in grid order
};

/// Runs every grid cell on up to `jobs` threads and writes
/// <output_dir>/<hash>/<cell>/{run.jsonl, model.json, metrics.csv} plus
/// config.json, corpus files and records.jsonl. When `only_cell` is set,
/// just that cell runs.
ExperimentResult run_experiment(const ExperimentConfig& config, std::size_t jobs = 1,
                                const std::optional<std::string>& only_cell = std::nullopt,
                                bool write_files = true);

std::string version_string();

}  // namespace gemlab
