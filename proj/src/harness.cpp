#include "gemlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cctype>
#include <concepts>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "gemlab/errors.hpp"
#include "gemlab/metrics.hpp"
#include "gemlab/report.hpp"
#include "gemlab/rng.hpp"

#ifndef GEMLAB_VERSION
#define GEMLAB_VERSION "0.1.0"
#endif

namespace gemlab {

using nlohmann::json;

namespace {

// Strict reader over one JSON object: every key must be consumed.
// Built documents store small literals as signed integers; parsed text
// stores them unsigned. Accept either when non-negative.
bool is_nonnegative_integer(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

class ObjectReader {
public:
    ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) {
            throw ConfigError(path_ + " must be a JSON object");
        }
    }

    const json* find(const std::string& key) {
        used_.insert(key);
        const auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    template <std::unsigned_integral T>
    void read(const std::string& key, T& out) {
        read_uint(key, out);
    }
    void read(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            if (!v->is_number()) {
                throw ConfigError(where(key) + " must be a number");
            }
            out = v->get<double>();
        }
    }
    void read(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) {
                throw ConfigError(where(key) + " must be true or false");
            }
            out = v->get<bool>();
        }
    }
    void read(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) {
                throw ConfigError(where(key) + " must be a string");
            }
            out = v->get<std::string>();
        }
    }

    std::string where(const std::string& key) const { return path_ + "." + key; }

    void finish() const {
        for (const auto& [key, value] : obj_.items()) {
            if (!used_.contains(key)) {
                throw ConfigError("unknown field " + where(key));
            }
        }
    }

private:
    template <class T>
    void read_uint(const std::string& key, T& out) {
        if (const json* v = find(key)) {
            if (!is_nonnegative_integer(*v)) {
                throw ConfigError(where(key) + " must be a non-negative integer");
            }
            out = v->get<T>();
        }
    }

    const json& obj_;
    std::string path_;
    std::set<std::string> used_;
};

template <class F>
auto rethrow_as_config(const std::string& what, F&& f) {
    try {
        return f();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(what + ": " + e.what());
    }
}

std::string_view family_name(TaskFamily f) { return f == TaskFamily::DIRICHLET ? "dirichlet" : "multi_answer"; }
std::string_view reward_name(RewardId r) { return r == RewardId::VERIFIER ? "verifier" : "truth_loglik"; }

bool valid_cell_name(const std::string& name) {
    return !name.empty() && name != "." && name != ".." &&
           std::all_of(name.begin(), name.end(), [](char c) {
               return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
           });
}

std::uint64_t key_seed(std::uint64_t seed, std::string_view stream, const ContextKey& key) {
    return derive_seed(derive_seed(seed, stream), key.encode());
}

const std::vector<TokenId>& lookup_correct(const Task& task, const ContextKey& key,
                                           std::map<ContextKey, std::vector<TokenId>>& extra) {
    if (const auto it = task.truth.correct.find(key); it != task.truth.correct.end()) {
        return it->second;
    }
    auto [it, inserted] = extra.try_emplace(key);
    if (inserted) {
        it->second = correct_set(task.spec, task.seed, key);
    }
    return it->second;
}

ProbVector lookup_truth(const Task& task, const ContextKey& key) {
    if (const auto it = task.truth.rows.find(key); it != task.truth.rows.end()) {
        return it->second;
    }
    return truth_row(task.spec, task.seed, key);
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
}

}  // namespace

std::size_t TaskSpec::effective_prompt_len() const {
    if (prompt_len > 0) {
        return prompt_len;
    }
    const std::size_t base = vocab_size - 1;
    std::size_t len = 1;
    std::size_t reach = base;
    while (reach < num_contexts) {
        reach *= base;
        ++len;
    }
    return len;
}

void TaskSpec::validate() const {
    if (vocab_size < 3) {
        throw ConfigError("task.vocab_size must be >= 3 (one id is the end token)");
    }
    if (num_contexts == 0) {
        throw ConfigError("task.num_contexts must be >= 1");
    }
    if (response_len == 0) {
        throw ConfigError("task.response_len must be >= 1");
    }
    if (!(concentration > 0.0) || !std::isfinite(concentration)) {
        throw ConfigError("task.concentration must be > 0");
    }
    if (num_correct == 0 || num_correct >= vocab_size - 1) {
        throw ConfigError("task.num_correct must lie in [1, vocab_size - 2]");
    }
    if (family == TaskFamily::MULTI_ANSWER && !(noise > 0.0 && noise < 1.0)) {
        throw ConfigError("task.noise must lie in (0, 1) so truth rows stay strictly positive");
    }
    if (window == 0) {
        throw ConfigError("task.window must be >= 1 or null");
    }
    if (prompt_len > 0) {
        double reach = 1.0;
        for (std::size_t i = 0; i < prompt_len; ++i) {
            reach *= static_cast<double>(vocab_size - 1);
        }
        if (reach < static_cast<double>(num_contexts)) {
            throw ConfigError("task.prompt_len too short to give every context a distinct prompt");
        }
    }
}

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
    ExperimentConfig c;
    ObjectReader top(doc, "config");
    top.read("name", c.name);
    top.read("seed", c.seed);
    top.read("output_dir", c.output_dir);

    if (const json* t = top.find("task")) {
        ObjectReader r(*t, "task");
        std::string family = std::string(family_name(c.task.family));
        r.read("family", family);
        if (family == "dirichlet") {
            c.task.family = TaskFamily::DIRICHLET;
        } else if (family == "multi_answer") {
            c.task.family = TaskFamily::MULTI_ANSWER;
        } else {
            throw ConfigError("task.family must be 'dirichlet' or 'multi_answer'");
        }
        r.read("vocab_size", c.task.vocab_size);
        r.read("num_contexts", c.task.num_contexts);
        r.read("prompt_len", c.task.prompt_len);
        r.read("response_len", c.task.response_len);
        r.read("samples_per_context", c.task.samples_per_context);
        r.read("concentration", c.task.concentration);
        r.read("num_correct", c.task.num_correct);
        r.read("noise", c.task.noise);
        if (const json* w = r.find("window")) {
            if (w->is_null()) {
                c.task.window = kUnlimitedWindow;
            } else if (is_nonnegative_integer(*w)) {
                c.task.window = w->get<std::size_t>();
            } else {
                throw ConfigError("task.window must be a positive integer or null");
            }
        }
        r.finish();
    }

    const json* losses = top.find("losses");
    if (losses == nullptr || !losses->is_array() || losses->empty()) {
        throw ConfigError("config.losses must be a non-empty array");
    }
    for (std::size_t i = 0; i < losses->size(); ++i) {
        ObjectReader r((*losses)[i], "losses[" + std::to_string(i) + "]");
        NamedLoss nl;
        std::string kind = "CE";
        std::string h = "LINEAR";
        r.read("name", nl.name);
        r.read("kind", kind);
        r.read("beta", nl.spec.beta);
        r.read("gamma", nl.spec.gamma);
        r.read("h", h);
        r.read("h_scale", nl.spec.h_scale);
        r.finish();
        rethrow_as_config(r.where("kind"), [&] { nl.spec.kind = parse_loss_kind(kind); });
        rethrow_as_config(r.where("h"), [&] { nl.spec.h = parse_h_function(h); });
        c.losses.push_back(std::move(nl));
    }

    if (const json* o = top.find("optimizer")) {
        ObjectReader r(*o, "optimizer");
        std::string kind = "sgd";
        std::string schedule = "constant";
        r.read("kind", kind);
        r.read("lr", c.optimizer.lr);
        r.read("weight_decay", c.optimizer.weight_decay);
        r.read("beta1", c.optimizer.adam_beta1);
        r.read("beta2", c.optimizer.adam_beta2);
        r.read("eps", c.optimizer.adam_eps);
        r.read("schedule", schedule);
        r.read("warmup_ratio", c.optimizer.schedule.warmup_ratio);
        r.finish();
        if (kind == "sgd") {
            c.optimizer.kind = OptimizerKind::SGD;
        } else if (kind == "adam") {
            c.optimizer.kind = OptimizerKind::ADAM;
        } else {
            throw ConfigError("optimizer.kind must be 'sgd' or 'adam'");
        }
        if (schedule == "constant") {
            c.optimizer.schedule.kind = LrSchedule::Kind::CONSTANT;
        } else if (schedule == "cosine") {
            c.optimizer.schedule.kind = LrSchedule::Kind::COSINE;
        } else {
            throw ConfigError("optimizer.schedule must be 'constant' or 'cosine'");
        }
    }

    if (const json* t = top.find("train")) {
        ObjectReader r(*t, "train");
        r.read("epochs", c.epochs);
        r.read("batch_size", c.batch_size);
        r.read("exact", c.exact);
        r.read("max_steps", c.max_steps);
        r.read("tol", c.tol);
        r.read("log_every", c.log_every);
        r.finish();
    }

    if (const json* e = top.find("eval")) {
        ObjectReader r(*e, "eval");
        r.read("num_samples", c.eval.num_samples);
        if (const json* ks = r.find("pass_k")) {
            if (!ks->is_array()) {
                throw ConfigError("eval.pass_k must be an array of integers");
            }
            c.eval.pass_k.clear();
            for (const auto& k : *ks) {
                if (!is_nonnegative_integer(k)) {
                    throw ConfigError("eval.pass_k must be an array of integers");
                }
                c.eval.pass_k.push_back(k.get<std::size_t>());
            }
        }
        if (const json* d = r.find("decode")) {
            ObjectReader dr(*d, "eval.decode");
            dr.read("temperature", c.eval.decode.temperature);
            dr.read("top_k", c.eval.decode.top_k);
            dr.read("top_p", c.eval.decode.top_p);
            dr.read("max_len", c.eval.decode.max_len);
            dr.finish();
        }
        std::string reward_id = std::string(reward_name(c.eval.reward));
        r.read("reward", reward_id);
        if (reward_id == "verifier") {
            c.eval.reward = RewardId::VERIFIER;
        } else if (reward_id == "truth_loglik") {
            c.eval.reward = RewardId::TRUTH_LOGLIK;
        } else {
            throw ConfigError("eval.reward must be 'verifier' or 'truth_loglik'");
        }
        r.read("self_bleu_max_n", c.eval.self_bleu_max_n);
        r.read("ngram_n", c.eval.ngram_n);
        r.finish();
    }
    top.finish();
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(doc);
}

json ExperimentConfig::to_json() const {
    json losses_doc = json::array();
    for (const auto& l : losses) {
        losses_doc.push_back({{"name", l.name},
                              {"kind", std::string(gemlab::to_string(l.spec.kind))},
                              {"beta", l.spec.beta},
                              {"gamma", l.spec.gamma},
                              {"h", std::string(gemlab::to_string(l.spec.h))},
                              {"h_scale", l.spec.h_scale}});
    }
    return {
        {"name", name},
        {"seed", seed},
        {"output_dir", output_dir},
        {"task",
         {{"family", std::string(family_name(task.family))},
          {"vocab_size", task.vocab_size},
          {"num_contexts", task.num_contexts},
          {"prompt_len", task.prompt_len},
          {"response_len", task.response_len},
          {"samples_per_context", task.samples_per_context},
          {"concentration", task.concentration},
          {"num_correct", task.num_correct},
          {"noise", task.noise},
          {"window", task.window == kUnlimitedWindow ? json(nullptr) : json(task.window)}}},
        {"losses", losses_doc},
        {"optimizer",
         {{"kind", optimizer.kind == OptimizerKind::SGD ? "sgd" : "adam"},
          {"lr", optimizer.lr},
          {"weight_decay", optimizer.weight_decay},
          {"beta1", optimizer.adam_beta1},
          {"beta2", optimizer.adam_beta2},
          {"eps", optimizer.adam_eps},
          {"schedule", optimizer.schedule.kind == LrSchedule::Kind::CONSTANT ? "constant" : "cosine"},
          {"warmup_ratio", optimizer.schedule.warmup_ratio}}},
        {"train",
         {{"epochs", epochs},
          {"batch_size", batch_size},
          {"exact", exact},
          {"max_steps", max_steps},
          {"tol", tol},
          {"log_every", log_every}}},
        {"eval",
         {{"num_samples", eval.num_samples},
          {"pass_k", eval.pass_k},
          {"decode",
           {{"temperature", eval.decode.temperature},
            {"top_k", eval.decode.top_k},
            {"top_p", eval.decode.top_p},
            {"max_len", eval.decode.max_len}}},
          {"reward", std::string(reward_name(eval.reward))},
          {"self_bleu_max_n", eval.self_bleu_max_n},
          {"ngram_n", eval.ngram_n}}},
    };
}

std::string ExperimentConfig::hash() const {
    // where results go does not change what they are
    json doc = to_json();
    doc.erase("output_dir");
    return to_hex(fnv1a64(doc.dump()));
}

void ExperimentConfig::validate() const {
    task.validate();
    if (losses.empty()) {
        throw ConfigError("config.losses must be non-empty");
    }
    std::set<std::string> names;
    for (const auto& l : losses) {
        if (!valid_cell_name(l.name)) {
            throw ConfigError("loss name '" + l.name + "' must be non-empty and use only [A-Za-z0-9_.-]");
        }
        if (!names.insert(l.name).second) {
            throw ConfigError("duplicate loss name '" + l.name + "'");
        }
        rethrow_as_config("loss '" + l.name + "'", [&] { l.spec.validate(); });
    }
    rethrow_as_config("optimizer", [&] { optimizer.validate(); });
    if (epochs == 0 || batch_size == 0 || max_steps == 0) {
        throw ConfigError("train.epochs, train.batch_size and train.max_steps must be >= 1");
    }
    if (!(tol > 0.0)) {
        throw ConfigError("train.tol must be > 0");
    }
    if (eval.num_samples == 0) {
        throw ConfigError("eval.num_samples must be >= 1");
    }
    for (std::size_t i = 0; i < eval.pass_k.size(); ++i) {
        const std::size_t k = eval.pass_k[i];
        if (k < 1 || k > eval.num_samples || (i > 0 && k <= eval.pass_k[i - 1])) {
            throw ConfigError("eval.pass_k must be strictly increasing values in [1, num_samples]");
        }
    }
    if (eval.self_bleu_max_n == 0 || eval.ngram_n == 0) {
        throw ConfigError("eval.self_bleu_max_n and eval.ngram_n must be >= 1");
    }
    if (eval.decode.max_len == 0) {
        throw ConfigError("eval.decode.max_len must be >= 1");
    }
    rethrow_as_config("eval.decode", [&] { eval.decode.validate(); });
}

TrainConfig ExperimentConfig::train_config(const LossSpec& loss) const {
    TrainConfig t;
    t.loss = loss;
    t.optimizer = optimizer;
    t.epochs = epochs;
    t.batch_size = batch_size;
    // Same shuffle stream for every cell, so cells differ only in the loss.
    t.seed = derive_seed(seed, "train");
    t.exact = exact;
    t.max_steps = max_steps;
    t.tol = tol;
    t.log_every = log_every;
    return t;
}

ProbVector truth_row(const TaskSpec& spec, std::uint64_t seed, const ContextKey& key) {
    const std::size_t k = spec.vocab_size;
    Rng rng(key_seed(seed, "truth", key));
    if (spec.family == TaskFamily::DIRICHLET) {
        return ProbVector::normalized(sample_dirichlet(rng, k, spec.concentration));
    }
    const auto correct = correct_set(spec, seed, key);
    const auto in_set = sample_dirichlet(rng, correct.size(), spec.concentration);
    const auto out_set = sample_dirichlet(rng, k - correct.size(), spec.concentration);
    std::vector<double> w(k);
    std::size_t ci = 0;
    std::size_t oi = 0;
    for (std::size_t t = 0; t < k; ++t) {
        if (ci < correct.size() && static_cast<std::size_t>(correct[ci]) == t) {
            w[t] = (1.0 - spec.noise) * in_set[ci++];
        } else {
            w[t] = spec.noise * out_set[oi++];
        }
    }
    return ProbVector::normalized(std::move(w));
}

std::vector<TokenId> correct_set(const TaskSpec& spec, std::uint64_t seed, const ContextKey& key) {
    const std::size_t k = spec.vocab_size;
    std::vector<TokenId> ids;
    if (spec.family == TaskFamily::DIRICHLET) {
        const ProbVector p = truth_row(spec, seed, key);
        std::vector<TokenId> order(k);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](TokenId a, TokenId b) { return p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(b)]; });
        ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.num_correct));
    } else {
        // The end token is never a correct answer.
        std::vector<TokenId> pool(k - 1);
        std::iota(pool.begin(), pool.end(), 0);
        Rng rng(key_seed(seed, "correct", key));
        std::shuffle(pool.begin(), pool.end(), rng);
        ids.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.num_correct));
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

Task generate_task(const TaskSpec& spec, std::uint64_t seed) {
    spec.validate();
    Task task;
    task.spec = spec;
    task.seed = seed;
    task.corpus.vocab_size = spec.vocab_size;
    const std::size_t len = spec.effective_prompt_len();
    const auto base = static_cast<std::size_t>(spec.vocab_size - 1);
    const auto eos = static_cast<TokenId>(spec.vocab_size - 1);

    auto truth_for = [&](const ContextKey& key) -> const ProbVector& {
        auto it = task.truth.rows.find(key);
        if (it == task.truth.rows.end()) {
            it = task.truth.rows.emplace(key, truth_row(spec, seed, key)).first;
            task.truth.correct.emplace(key, correct_set(spec, seed, key));
        }
        return it->second;
    };

    Rng rng(derive_seed(seed, "corpus"));
    for (std::size_t c = 0; c < spec.num_contexts; ++c) {
        std::vector<TokenId> prompt(len);
        std::size_t v = c;
        for (std::size_t d = 0; d < len; ++d) {
            prompt[len - 1 - d] = static_cast<TokenId>(v % base);
            v /= base;
        }
        truth_for(ContextKey::from_prefix(prompt, {}, spec.window));
        for (std::size_t s = 0; s < spec.samples_per_context; ++s) {
            TokenSequence seq{prompt, {}};
            while (seq.response.size() < spec.response_len) {
                const ProbVector& row = truth_for(ContextKey::from_prefix(prompt, seq.response, spec.window));
                const auto tok = static_cast<TokenId>(sample_index(rng, row.vec()));
                seq.response.push_back(tok);
                if (tok == eos) {
                    break;
                }
            }
            task.corpus.sequences.push_back(std::move(seq));
        }
        task.prompts.push_back(std::move(prompt));
    }
    return task;
}

double reward(RewardId id, const Task& task, const TokenSequence& seq) {
    const auto eos = static_cast<TokenId>(task.spec.vocab_size - 1);
    const std::span<const TokenId> response(seq.response);
    if (id == RewardId::TRUTH_LOGLIK) {
        double total = 0.0;
        for (std::size_t t = 0; t < response.size(); ++t) {
            const ProbVector p = lookup_truth(task, ContextKey::from_prefix(seq.prompt, response.first(t), task.spec.window));
            total += std::log(p[static_cast<std::size_t>(response[t])]);
        }
        return total;
    }
    // A trailing end token only terminates; it is neither right nor wrong.
    std::size_t n = response.size();
    if (n > 0 && response[n - 1] == eos) {
        --n;
    }
    if (n == 0) {
        return 0.0;
    }
    std::map<ContextKey, std::vector<TokenId>> extra;
    for (std::size_t t = 0; t < n; ++t) {
        const auto& ok = lookup_correct(task, ContextKey::from_prefix(seq.prompt, response.first(t), task.spec.window), extra);
        if (!std::binary_search(ok.begin(), ok.end(), response[t])) {
            return 0.0;
        }
    }
    return 1.0;
}

TokenSequence truth_reference(const Task& task, std::span<const TokenId> prompt, std::size_t max_len) {
    const auto eos = static_cast<TokenId>(task.spec.vocab_size - 1);
    TokenSequence seq{{prompt.begin(), prompt.end()}, {}};
    while (seq.response.size() < max_len) {
        const ProbVector p = lookup_truth(task, ContextKey::from_prefix(prompt, seq.response, task.spec.window));
        const auto tok = static_cast<TokenId>(argmax_index(p.values()));
        seq.response.push_back(tok);
        if (tok == eos) {
            break;
        }
    }
    return seq;
}

ProbVector power_normalize(const ProbVector& p, double beta) {
    if (!(beta > 0.0 && beta <= 1.0)) {
        throw InvalidParameter("power_normalize requires beta in (0, 1]");
    }
    // Work in log space relative to the largest entry so tiny p do not underflow early.
    const double top = std::log(p[argmax_index(p.values())]);
    std::vector<double> w(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) {
            w[i] = std::exp(beta * (std::log(p[i]) - top));
        }
    }
    return ProbVector::normalized(std::move(w));
}

double equilibrium_beta(const LossSpec& spec) {
    switch (spec.kind) {
        case LossKind::CE: return 1.0;
        // Forward CE minus entropy has no power-law fixed point.
        case LossKind::CE_ENTROPY: return 0.0;
        case LossKind::GEM: return spec.beta;
    }
    return 1.0;
}

void evaluate_model(const TabularModel& model, const Task& task, const ExperimentConfig& config, const LossSpec& loss,
                    RunRecord& record) {
    auto& m = record.final_metrics;
    const auto& data = task.corpus.sequences;
    const std::size_t k = task.spec.vocab_size;

    if (!data.empty()) {
        const auto examples = reset_expand(data, k, model.window());
        const auto targets = empirical_targets(examples, k);
        std::vector<ContextKey> contexts;
        for (const auto& t : targets) {
            contexts.push_back(t.context);
        }
        m["entropy"] = mean_conditional_entropy(model, contexts);
        m["perplexity"] = perplexity(model, data);

        const double beta = equilibrium_beta(loss);
        if (beta > 0.0) {
            double dev_truth = 0.0;
            double dev_emp = 0.0;
            double dev_q = 0.0;
            std::vector<double> f(k);
            for (const auto& t : targets) {
                const auto row = model.row(t.context);
                detail::softmax_into(row, f);
                const ProbVector truth = lookup_truth(task, t.context);
                dev_truth = std::max(dev_truth, max_abs_diff(f, power_normalize(truth, beta).values()));
                dev_emp = std::max(dev_emp, max_abs_diff(f, power_normalize(t.distribution, beta).values()));
                if (loss.kind == LossKind::GEM) {
                    const ProbVector q = sharpen(LogitVector(std::vector<double>(row.begin(), row.end())), beta);
                    dev_q = std::max(dev_q, max_abs_diff(q.values(), truth.values()));
                }
            }
            m["eq_dev_truth"] = dev_truth;
            m["eq_dev_empirical"] = dev_emp;
            if (loss.kind == LossKind::GEM) {
                m["q_dev_truth"] = dev_q;
            }
        }
    }
    m["param_distance"] = model.param_distance();

    const auto& ev = config.eval;
    const std::uint64_t eval_root = derive_seed(config.seed, "eval");
    std::vector<double> pass(ev.pass_k.size(), 0.0);
    double bon = 0.0;
    double bt = 0.0;
    double bleu_div = 0.0;
    double ngram_div = 0.0;
    double mean_len = 0.0;
    double mean_correct = 0.0;
    for (std::size_t i = 0; i < task.prompts.size(); ++i) {
        const auto& prompt = task.prompts[i];
        DecodeConfig dc = ev.decode;
        dc.seed = derive_seed(eval_root, static_cast<std::uint64_t>(i));
        ResponseSet set{sample_many(model, prompt, dc, ev.num_samples, 1), std::vector<double>{}};
        std::size_t correct = 0;
        std::vector<std::vector<TokenId>> bodies;
        for (const auto& seq : set.responses) {
            set.rewards->push_back(reward(ev.reward, task, seq));
            if (reward(RewardId::VERIFIER, task, seq) > 0.5) {
                ++correct;
            }
            bodies.push_back(seq.response);
            mean_len += static_cast<double>(seq.response.size());
        }
        for (std::size_t j = 0; j < ev.pass_k.size(); ++j) {
            pass[j] += pass_at_k(ev.num_samples, correct, ev.pass_k[j]);
        }
        mean_correct += static_cast<double>(correct) / static_cast<double>(ev.num_samples);
        const auto [best, best_reward] = best_of_n(set);
        bon += best_reward;
        const TokenSequence ref = truth_reference(task, prompt, dc.max_len);
        bt += bt_win_prob(best_reward, reward(ev.reward, task, ref));
        if (bodies.size() >= 2) {
            bleu_div += self_bleu_diversity(bodies, ev.self_bleu_max_n);
        }
        ngram_div += ngram_diversity(bodies, ev.ngram_n);
    }
    const auto n_prompts = static_cast<double>(task.prompts.size());
    std::vector<double> ks;
    for (std::size_t j = 0; j < ev.pass_k.size(); ++j) {
        pass[j] /= n_prompts;
        m["pass@" + std::to_string(ev.pass_k[j])] = pass[j];
        ks.push_back(static_cast<double>(ev.pass_k[j]));
    }
    record.curves["pass_at_k"] = pass;
    record.curves["pass_at_k_k"] = ks;
    m["accuracy"] = mean_correct / n_prompts;
    m["bon_reward"] = bon / n_prompts;
    m["bt_win_prob"] = bt / n_prompts;
    if (ev.num_samples >= 2) {
        m["self_bleu_diversity"] = bleu_div / n_prompts;
        // add-epsilon on zero precisions; kept with the number it shaped
        m["self_bleu_smoothing_epsilon"] = kBleuSmoothingEpsilon;
    }
    m["ngram_diversity"] = ngram_div / n_prompts;
    m["mean_response_len"] = mean_len / (n_prompts * static_cast<double>(ev.num_samples));
}

CellOutput run_cell(const ExperimentConfig& config, const Task& task, const NamedLoss& loss) {
    CellOutput out;
    auto& rec = out.record;
    const auto start = std::chrono::steady_clock::now();
    try {
        const TrainConfig tc = config.train_config(loss.spec);
        TrainResult tr = train_sequential(task.corpus.sequences, task.spec.vocab_size, task.spec.window, tc,
                                          config.exact ? task.truth.rows : std::map<ContextKey, ProbVector>{});
        rec = std::move(tr.record);
        if (!rec.steps.empty()) {
            rec.final_metrics["final_loss"] = rec.steps.back().loss;
            rec.final_metrics["steps"] = static_cast<double>(rec.steps.back().step);
        }
        evaluate_model(tr.model, task, config, loss.spec, rec);
        out.model = std::move(tr.model);
    } catch (const std::exception& e) {
        rec.status = "failed";
        rec.error = e.what();
    }
    rec.cell = loss.name;
    rec.loss = loss.spec.label();
    rec.config_hash = config.hash();
    rec.version = version_string();
    rec.seed = config.seed;
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, std::size_t jobs,
                                const std::optional<std::string>& only_cell, bool write_files) {
    config.validate();
    std::vector<NamedLoss> cells;
    for (const auto& l : config.losses) {
        if (!only_cell || l.name == *only_cell) {
            cells.push_back(l);
        }
    }
    if (cells.empty()) {
        throw ConfigError("no loss named '" + only_cell.value_or("") + "' in config");
    }

    ExperimentResult result;
    result.config_hash = config.hash();
    result.directory = std::filesystem::path(config.output_dir) / result.config_hash;
    const Task task = generate_task(config.task, config.seed);
    if (write_files) {
        std::filesystem::create_directories(result.directory);
    }

    result.records.resize(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            CellOutput out = run_cell(config, task, cells[i]);
            RunRecord& rec = out.record;
            if (write_files) {
                try {
                    const auto dir = result.directory / cells[i].name;
                    std::filesystem::create_directories(dir);
                    rec.artifacts = {cells[i].name + "/run.jsonl", cells[i].name + "/metrics.csv"};
                    if (out.model) {
                        rec.artifacts.push_back(cells[i].name + "/model.json");
                        write_text(dir / "model.json", out.model->to_json().dump() + "\n");
                    }
                    write_text(dir / "metrics.csv", emit_csv(metrics_table(rec)));
                    write_text(dir / "run.jsonl", rec.to_json().dump() + "\n");
                } catch (const std::exception& e) {
                    rec.status = "failed";
                    rec.error = std::string("writing outputs: ") + e.what();
                }
            }
            result.records[i] = std::move(rec);
        }
    };
    {
        const std::size_t n_threads = std::clamp<std::size_t>(jobs, 1, cells.size());
        std::vector<std::jthread> pool;
        for (std::size_t t = 1; t < n_threads; ++t) {
            pool.emplace_back(worker);
        }
        worker();
    }

    if (write_files) {
        write_text(result.directory / "config.json", config.to_json().dump(2) + "\n");
        const auto corpus_path = (result.directory / "corpus.jsonl").string();
        write_corpus(task.corpus, corpus_path, default_header_path(corpus_path));
        std::string lines;
        for (const auto& r : result.records) {
            lines += r.to_json().dump() + "\n";
        }
        write_text(result.directory / "records.jsonl", lines);
        write_text(result.directory / "summary.csv",
                   emit_csv(report_table(std::span<const RunRecord>(result.records), ReportKind::SUMMARY_CSV)));
    }
    return result;
}

std::string version_string() { return GEMLAB_VERSION; }

}  // namespace gemlab
