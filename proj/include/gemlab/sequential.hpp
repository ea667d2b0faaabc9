#pragma once

// Sequence-level training by data reset: every response position becomes an
// independent (data prefix, next token) example for the tabular model, so
// the model only ever conditions on teacher-forced prefixes.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gemlab/context.hpp"
#include "gemlab/losses.hpp"
#include "gemlab/models.hpp"
#include "gemlab/record.hpp"

namespace gemlab {

struct TokenSequence {
    std::vector<TokenId> prompt;
    std::vector<TokenId> response;

    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

void validate_sequence(const TokenSequence& seq, std::size_t vocab_size);

/// One example per response position t: (prompt + response[0..t), response[t]).
std::vector<TrainingExample> reset_expand(std::span<const TokenSequence> data, std::size_t vocab_size,
                                          std::size_t window);

/// Per-context label frequencies of the expanded data, weighted by count.
std::vector<ExpectedTarget> empirical_targets(std::span<const TrainingExample> examples, std::size_t vocab_size);

struct TrainConfig {
    LossSpec loss;
    OptimizerConfig optimizer;
    std::size_t epochs = 1;
    std::size_t batch_size = 1;
    std::uint64_t seed = 0;
    /// Exact-expectation mode: full-batch steps on per-context target
    /// distributions until the gradient norm falls below `tol`.
    bool exact = false;
    std::size_t max_steps = 1000000;
    double tol = 1e-8;
    /// Also log scalars every this many optimizer steps (0: epoch ends only;
    /// exact mode logs at the end regardless).
    std::size_t log_every = 0;
};

struct TrainResult {
    TabularModel model;
    RunRecord record;
};

/// In exact mode, `exact_targets` (when non-empty) replaces the empirical
/// label frequencies for the contexts it covers.
TrainResult train_sequential(std::span<const TokenSequence> data, std::size_t vocab_size, std::size_t window,
                             const TrainConfig& config,
                             const std::map<ContextKey, ProbVector>& exact_targets = {});

/// Continues training an existing model (and optimizer) for the same data.
RunRecord train_sequential_into(TabularModel& model, OptimizerState& opt, std::span<const TokenSequence> data,
                                const TrainConfig& config, const std::map<ContextKey, ProbVector>& exact_targets = {});

struct DecodeConfig {
    double temperature = 1.0;
    std::size_t top_k = 0;  // 0: off
    double top_p = 1.0;
    std::size_t max_len = 16;
    std::uint64_t seed = 0;

    void validate() const;
};

/// The sampling distribution for one step: logits / temperature, then top-k,
/// then nucleus truncation, then renormalization.
ProbVector decode_distribution(std::span<const double> logits, const DecodeConfig& cfg);

/// Autoregressive sampling until the end token (K - 1, kept in the output)
/// or max_len response tokens. Deterministic in cfg.seed.
TokenSequence sample(const TabularModel& model, std::span<const TokenId> prompt, const DecodeConfig& cfg);

/// n samples; sample i uses seed derive_seed(cfg.seed, i), so the output does
/// not depend on `threads`.
std::vector<TokenSequence> sample_many(const TabularModel& model, std::span<const TokenId> prompt,
                                       const DecodeConfig& cfg, std::size_t n, std::size_t threads = 1);

/// Argmax decoding with lowest-index tie-break.
TokenSequence greedy_decode(const TabularModel& model, std::span<const TokenId> prompt, std::size_t max_len);

/// Mean entropy of softmax(row) over the given contexts.
double mean_row_entropy(const TabularModel& model, std::span<const ContextKey> contexts);

// Corpus files: JSON Lines with integer arrays "prompt" and "response", and a
// sidecar header {"format_version", "vocab_size", "eos_token"}.
struct Corpus {
    std::size_t vocab_size = 0;
    std::vector<TokenSequence> sequences;
};

std::string default_header_path(const std::string& corpus_path);
void write_corpus(const Corpus& corpus, const std::string& path, const std::string& header_path);
Corpus read_corpus(const std::string& path, const std::string& header_path);

}  // namespace gemlab
