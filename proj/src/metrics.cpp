#include "gemlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "gemlab/errors.hpp"

namespace gemlab {

namespace {

using NGramCounts = std::map<std::vector<TokenId>, std::size_t>;

NGramCounts count_ngrams(std::span<const TokenId> tokens, std::size_t n) {
    NGramCounts counts;
    if (tokens.size() < n) {
        return counts;
    }
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        ++counts[std::vector<TokenId>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

}  // namespace

double mean_conditional_entropy(const TabularModel& model, std::span<const ContextKey> contexts) {
    return mean_row_entropy(model, contexts);
}

double perplexity(const TabularModel& model, std::span<const TokenSequence> data) {
    const auto examples = reset_expand(data, model.vocab_size(), model.window());
    if (examples.empty()) {
        throw InvalidInput("perplexity: no response tokens to score");
    }
    double nll = 0.0;
    for (const auto& ex : examples) {
        const auto row = model.row(ex.context);
        nll += logsumexp(row) - row[static_cast<std::size_t>(ex.target)];
    }
    return std::exp(std::max(0.0, nll / static_cast<double>(examples.size())));
}

double ngram_diversity(std::span<const std::vector<TokenId>> responses, std::size_t n) {
    if (n == 0) {
        throw InvalidParameter("ngram_diversity: n must be >= 1");
    }
    if (responses.empty()) {
        throw InvalidInput("ngram_diversity: no responses");
    }
    double total = 0.0;
    for (const auto& r : responses) {
        if (r.size() < n) {
            total += 100.0;
            continue;
        }
        const auto counts = count_ngrams(r, n);
        total += 100.0 * static_cast<double>(counts.size()) / static_cast<double>(r.size() - n + 1);
    }
    return total / static_cast<double>(responses.size());
}

double sentence_bleu(std::span<const TokenId> hypothesis, std::span<const std::vector<TokenId>> references,
                     std::size_t max_n) {
    if (max_n == 0) {
        throw InvalidParameter("sentence_bleu: max_n must be >= 1");
    }
    if (references.empty()) {
        throw InvalidInput("sentence_bleu: no references");
    }
    if (hypothesis.empty()) {
        return 0.0;
    }
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= max_n; ++n) {
        const auto hyp = count_ngrams(hypothesis, n);
        std::size_t total = 0;
        std::size_t clipped = 0;
        for (const auto& [gram, count] : hyp) {
            std::size_t max_ref = 0;
            for (const auto& ref : references) {
                const auto ref_counts = count_ngrams(ref, n);
                if (const auto it = ref_counts.find(gram); it != ref_counts.end()) {
                    max_ref = std::max(max_ref, it->second);
                }
            }
            total += count;
            clipped += std::min(count, max_ref);
        }
        const double precision =
            clipped == 0 ? kBleuSmoothingEpsilon : static_cast<double>(clipped) / static_cast<double>(total);
        log_sum += std::log(precision);
    }

    const auto c = static_cast<double>(hypothesis.size());
    double best_len = 0.0;
    double best_gap = std::numeric_limits<double>::infinity();
    for (const auto& ref : references) {
        const auto r = static_cast<double>(ref.size());
        const double gap = std::abs(r - c);
        if (gap < best_gap || (gap == best_gap && r < best_len)) {
            best_gap = gap;
            best_len = r;
        }
    }
    const double bp = c > best_len ? 1.0 : std::exp(1.0 - best_len / c);
    return bp * std::exp(log_sum / static_cast<double>(max_n));
}

double self_bleu_diversity(std::span<const std::vector<TokenId>> responses, std::size_t max_n) {
    if (responses.size() < 2) {
        throw InvalidInput("self_bleu_diversity needs at least 2 responses");
    }
    double total = 0.0;
    std::vector<std::vector<TokenId>> others;
    others.reserve(responses.size() - 1);
    for (std::size_t i = 0; i < responses.size(); ++i) {
        others.clear();
        for (std::size_t j = 0; j < responses.size(); ++j) {
            if (j != i) {
                others.push_back(responses[j]);
            }
        }
        total += sentence_bleu(responses[i], others, max_n);
    }
    return 100.0 - 100.0 * total / static_cast<double>(responses.size());
}

double pass_at_k(std::size_t n, std::size_t c, std::size_t k) {
    if (c > n || k < 1 || k > n) {
        throw InvalidInput("pass_at_k requires 0 <= c <= n and 1 <= k <= n");
    }
    if (n - c < k) {
        return 1.0;
    }
    // log C(n-c, k) / C(n, k) = sum_{i<k} log(1 - c / (n - i)); every term is <= 0.
    double log_miss = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        log_miss += std::log1p(-static_cast<double>(c) / static_cast<double>(n - i));
    }
    return -std::expm1(log_miss);
}

std::pair<std::size_t, double> best_of_n(const ResponseSet& set) {
    if (!set.rewards) {
        throw InvalidInput("best_of_n: response set has no rewards");
    }
    const auto& r = *set.rewards;
    if (r.empty() || r.size() != set.responses.size()) {
        throw InvalidInput("best_of_n: need one reward per response");
    }
    const auto best = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    return {best, r[best]};
}

double bt_win_prob(double r_a, double r_b) {
    if (!std::isfinite(r_a) || !std::isfinite(r_b)) {
        throw InvalidInput("bt_win_prob: rewards must be finite");
    }
    const double z = r_a - r_b;
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace gemlab
