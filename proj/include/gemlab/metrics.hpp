#pragma once

// Diversity and quality metrics over trained tabular models and sampled
// response sets. All functions are pure.

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "gemlab/context.hpp"
#include "gemlab/models.hpp"
#include "gemlab/sequential.hpp"

namespace gemlab {

struct ResponseSet {
    std::vector<TokenSequence> responses;
    std::optional<std::vector<double>> rewards;
};

/// Mean over contexts of entropy(softmax(row)), in nats.
double mean_conditional_entropy(const TabularModel& model, std::span<const ContextKey> contexts);

/// exp of the mean per-token cross-entropy over the reset-expanded data.
double perplexity(const TabularModel& model, std::span<const TokenSequence> data);

/// Mean over responses of 100 * distinct n-grams / total n-grams. Responses
/// shorter than n score 100.
double ngram_diversity(std::span<const std::vector<TokenId>> responses, std::size_t n);

/// Epsilon used in place of a zero modified n-gram precision.
inline constexpr double kBleuSmoothingEpsilon = 1e-9;

/// Sentence BLEU in [0, 1]: brevity penalty (closest reference length,
/// shorter on ties) times the geometric mean of modified n-gram precisions
/// for n = 1..max_n with uniform weights. Zero precisions, including orders
/// longer than the hypothesis, are replaced by kBleuSmoothingEpsilon.
double sentence_bleu(std::span<const TokenId> hypothesis, std::span<const std::vector<TokenId>> references,
                     std::size_t max_n = 4);

/// 100 - mean_i 100 * BLEU(response_i, all other responses).
double self_bleu_diversity(std::span<const std::vector<TokenId>> responses, std::size_t max_n = 4);

/// Unbiased pass@k estimate 1 - C(n-c, k) / C(n, k), evaluated as a sum of
/// log factors so it is non-decreasing in k and c even in floating point.
double pass_at_k(std::size_t n, std::size_t c, std::size_t k);

/// (index, reward) of the highest reward, lowest index on ties.
std::pair<std::size_t, double> best_of_n(const ResponseSet& set);

/// Bradley-Terry probability that reward r_a beats r_b: sigmoid(r_a - r_b).
double bt_win_prob(double r_a, double r_b);

}  // namespace gemlab
