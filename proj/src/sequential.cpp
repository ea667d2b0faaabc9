#include "gemlab/sequential.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <thread>

#include <json.hpp>

#include "gemlab/errors.hpp"
#include "gemlab/rng.hpp"

namespace gemlab {

namespace {

constexpr int kCorpusFormatVersion = 1;

std::vector<ContextKey> unique_contexts(std::span<const TrainingExample> examples) {
    std::set<ContextKey> seen;
    for (const auto& ex : examples) {
        seen.insert(ex.context);
    }
    return {seen.begin(), seen.end()};
}

StepScalars snapshot(const TabularModel& model, std::span<const ContextKey> contexts, std::size_t step,
                     std::size_t epoch, double loss, double grad_norm) {
    return {step, epoch, loss, grad_norm, mean_row_entropy(model, contexts), model.param_distance()};
}

std::string order_digest(const std::vector<std::size_t>& order) {
    std::string bytes;
    bytes.reserve(order.size() * 8);
    for (std::size_t i : order) {
        bytes += std::to_string(i);
        bytes.push_back(' ');
    }
    return to_hex(fnv1a64(bytes));
}

RunRecord train_exact(TabularModel& model, OptimizerState& opt, std::span<const TrainingExample> examples,
                      const TrainConfig& config, const std::map<ContextKey, ProbVector>& exact_targets) {
    RunRecord record;
    record.loss = config.loss.label();
    record.seed = config.seed;
    auto targets = empirical_targets(examples, model.vocab_size());
    for (auto& t : targets) {
        if (const auto it = exact_targets.find(t.context); it != exact_targets.end()) {
            t.distribution = it->second;
        }
    }
    const auto contexts = unique_contexts(examples);
    StepResult last{0.0, std::numeric_limits<double>::infinity()};
    std::size_t step = 0;
    while (step < config.max_steps) {
        last = train_step_expected(model, targets, config.loss, opt);
        ++step;
        const bool done = last.grad_norm < config.tol || step == config.max_steps;
        if (done || (config.log_every > 0 && step % config.log_every == 0)) {
            record.steps.push_back(snapshot(model, contexts, opt.step_count(), step, last.loss, last.grad_norm));
        }
        if (done) {
            break;
        }
    }
    record.final_metrics["converged"] = last.grad_norm < config.tol ? 1.0 : 0.0;
    return record;
}

}  // namespace

void validate_sequence(const TokenSequence& seq, std::size_t vocab_size) {
    auto check = [vocab_size](const std::vector<TokenId>& tokens) {
        for (TokenId t : tokens) {
            if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) {
                throw InvalidInput("token id " + std::to_string(t) + " out of range for vocabulary of " +
                                   std::to_string(vocab_size));
            }
        }
    };
    check(seq.prompt);
    check(seq.response);
}

std::vector<TrainingExample> reset_expand(std::span<const TokenSequence> data, std::size_t vocab_size,
                                          std::size_t window) {
    std::vector<TrainingExample> out;
    for (const TokenSequence& seq : data) {
        validate_sequence(seq, vocab_size);
        const std::span<const TokenId> response(seq.response);
        for (std::size_t t = 0; t < response.size(); ++t) {
            out.push_back({ContextKey::from_prefix(seq.prompt, response.first(t), window), response[t]});
        }
    }
    return out;
}

std::vector<ExpectedTarget> empirical_targets(std::span<const TrainingExample> examples, std::size_t vocab_size) {
    std::map<ContextKey, std::vector<double>> counts;
    for (const auto& ex : examples) {
        auto& c = counts.try_emplace(ex.context, std::vector<double>(vocab_size, 0.0)).first->second;
        c.at(static_cast<std::size_t>(ex.target)) += 1.0;
    }
    std::vector<ExpectedTarget> out;
    for (auto& [ctx, c] : counts) {
        const double n = std::accumulate(c.begin(), c.end(), 0.0);
        out.push_back({ctx, ProbVector::normalized(std::move(c)), n});
    }
    return out;
}

RunRecord train_sequential_into(TabularModel& model, OptimizerState& opt, std::span<const TokenSequence> data,
                                const TrainConfig& config, const std::map<ContextKey, ProbVector>& exact_targets) {
    if (data.empty()) {
        throw InvalidInput("train_sequential: empty corpus");
    }
    config.loss.validate();
    const auto examples = reset_expand(data, model.vocab_size(), model.window());
    if (examples.empty()) {
        throw InvalidInput("train_sequential: corpus has no response tokens");
    }
    if (config.exact) {
        return train_exact(model, opt, examples, config, exact_targets);
    }
    if (config.batch_size == 0) {
        throw InvalidParameter("batch_size must be >= 1");
    }

    RunRecord record;
    record.loss = config.loss.label();
    record.seed = config.seed;
    const auto contexts = unique_contexts(examples);
    Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
    std::vector<std::size_t> order(examples.size());
    std::vector<TrainingExample> batch;
    batch.reserve(config.batch_size);

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        record.batch_order_digests.push_back(order_digest(order));

        double epoch_loss = 0.0;
        StepResult last{0.0, 0.0};
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(examples[order[i]]);
            }
            last = train_step(model, batch, config.loss, opt);
            epoch_loss += last.loss * static_cast<double>(batch.size());
            if (config.log_every > 0 && opt.step_count() % config.log_every == 0 && end != order.size()) {
                record.steps.push_back(snapshot(model, contexts, opt.step_count(), epoch, last.loss, last.grad_norm));
            }
        }
        epoch_loss /= static_cast<double>(order.size());
        record.steps.push_back(snapshot(model, contexts, opt.step_count(), epoch, epoch_loss, last.grad_norm));
    }
    return record;
}

TrainResult train_sequential(std::span<const TokenSequence> data, std::size_t vocab_size, std::size_t window,
                             const TrainConfig& config, const std::map<ContextKey, ProbVector>& exact_targets) {
    TabularModel model(vocab_size, window);
    OptimizerConfig opt_config = config.optimizer;
    if (opt_config.schedule.total_steps == 0) {
        std::size_t examples = 0;
        for (const auto& seq : data) {
            examples += seq.response.size();
        }
        const std::size_t per_epoch = config.batch_size == 0 ? 0 : (examples + config.batch_size - 1) / config.batch_size;
        opt_config.schedule.total_steps = config.exact ? config.max_steps : per_epoch * config.epochs;
    }
    OptimizerState opt(opt_config);
    RunRecord record = train_sequential_into(model, opt, data, config, exact_targets);
    return {std::move(model), std::move(record)};
}

void DecodeConfig::validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw InvalidParameter("temperature must be > 0");
    }
    if (!(top_p > 0.0 && top_p <= 1.0)) {
        throw InvalidParameter("top_p must lie in (0, 1]");
    }
}

ProbVector decode_distribution(std::span<const double> logits, const DecodeConfig& cfg) {
    cfg.validate();
    const std::size_t k = logits.size();
    std::vector<double> p(k);
    detail::softmax_into(logits, p, 1.0 / cfg.temperature);

    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&p](std::size_t a, std::size_t b) { return p[a] > p[b]; });

    std::size_t keep = k;
    if (cfg.top_k > 0) {
        keep = std::min(keep, cfg.top_k);
    }
    if (cfg.top_p < 1.0) {
        double kept_mass = 0.0;
        for (std::size_t i = 0; i < keep; ++i) {
            kept_mass += p[order[i]];
        }
        double cum = 0.0;
        for (std::size_t i = 0; i < keep; ++i) {
            cum += p[order[i]];
            if (cum >= cfg.top_p * kept_mass) {
                keep = i + 1;
                break;
            }
        }
    }
    std::vector<double> w(k, 0.0);
    for (std::size_t i = 0; i < keep; ++i) {
        w[order[i]] = p[order[i]];
    }
    return ProbVector::normalized(std::move(w));
}

TokenSequence sample(const TabularModel& model, std::span<const TokenId> prompt, const DecodeConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    TokenSequence out{{prompt.begin(), prompt.end()}, {}};
    while (out.response.size() < cfg.max_len) {
        const auto ctx = ContextKey::from_prefix(prompt, out.response, model.window());
        const ProbVector dist = decode_distribution(model.row(ctx), cfg);
        const auto token = static_cast<TokenId>(sample_index(rng, dist.vec()));
        out.response.push_back(token);
        if (token == model.eos_token()) {
            break;
        }
    }
    return out;
}

std::vector<TokenSequence> sample_many(const TabularModel& model, std::span<const TokenId> prompt,
                                       const DecodeConfig& cfg, std::size_t n, std::size_t threads) {
    cfg.validate();
    std::vector<TokenSequence> out(n);
    auto draw = [&](std::size_t i) {
        DecodeConfig c = cfg;
        c.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(i));
        out[i] = sample(model, prompt, c);
    };
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            draw(i);
        }
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                draw(i);
            }
        });
    }
    pool.clear();
    return out;
}

TokenSequence greedy_decode(const TabularModel& model, std::span<const TokenId> prompt, std::size_t max_len) {
    TokenSequence out{{prompt.begin(), prompt.end()}, {}};
    while (out.response.size() < max_len) {
        const auto ctx = ContextKey::from_prefix(prompt, out.response, model.window());
        const auto token = static_cast<TokenId>(argmax_index(model.row(ctx)));
        out.response.push_back(token);
        if (token == model.eos_token()) {
            break;
        }
    }
    return out;
}

double mean_row_entropy(const TabularModel& model, std::span<const ContextKey> contexts) {
    if (contexts.empty()) {
        throw InvalidInput("mean_row_entropy: no contexts");
    }
    std::vector<double> p(model.vocab_size());
    double total = 0.0;
    for (const ContextKey& ctx : contexts) {
        detail::softmax_into(model.row(ctx), p);
        total += detail::entropy_of(p);
    }
    return total / static_cast<double>(contexts.size());
}

std::string default_header_path(const std::string& corpus_path) { return corpus_path + ".header.json"; }

void write_corpus(const Corpus& corpus, const std::string& path, const std::string& header_path) {
    for (const auto& seq : corpus.sequences) {
        validate_sequence(seq, corpus.vocab_size);
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write corpus file " + path);
    }
    for (const auto& seq : corpus.sequences) {
        out << nlohmann::json{{"prompt", seq.prompt}, {"response", seq.response}}.dump() << '\n';
    }
    std::ofstream header(header_path);
    if (!header) {
        throw std::runtime_error("cannot write corpus header " + header_path);
    }
    header << nlohmann::json{{"format_version", kCorpusFormatVersion},
                             {"vocab_size", corpus.vocab_size},
                             {"eos_token", corpus.vocab_size - 1}}
                  .dump(2)
           << '\n';
}

Corpus read_corpus(const std::string& path, const std::string& header_path) {
    Corpus corpus;
    std::ifstream header(header_path);
    if (!header) {
        throw InvalidInput("cannot open corpus header " + header_path);
    }
    try {
        const auto h = nlohmann::json::parse(header);
        if (h.at("format_version").get<int>() != kCorpusFormatVersion) {
            throw InvalidInput("unsupported corpus format_version");
        }
        corpus.vocab_size = h.at("vocab_size").get<std::size_t>();
        if (corpus.vocab_size < 2) {
            throw InvalidInput("corpus vocab_size must be >= 2");
        }
        if (h.contains("eos_token") && h.at("eos_token").get<std::size_t>() != corpus.vocab_size - 1) {
            throw InvalidInput("eos_token must be vocab_size - 1");
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed corpus header: ") + e.what());
    }

    std::ifstream in(path);
    if (!in) {
        throw InvalidInput("cannot open corpus " + path);
    }
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            TokenSequence seq{j.at("prompt").get<std::vector<TokenId>>(), j.at("response").get<std::vector<TokenId>>()};
            validate_sequence(seq, corpus.vocab_size);
            corpus.sequences.push_back(std::move(seq));
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInput(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return corpus;
}

}  // namespace gemlab
