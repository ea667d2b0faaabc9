#include "gemlab/models.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <set>

#include "gemlab/errors.hpp"

namespace gemlab {

namespace {

void require_finite_row(std::span<const double> row, std::size_t k) {
    if (row.size() != k) {
        throw InvalidInput("logit row has length " + std::to_string(row.size()) + ", expected " + std::to_string(k));
    }
    for (double v : row) {
        if (!std::isfinite(v)) {
            throw InvalidInput("logit row has a non-finite entry");
        }
    }
}

double squared_norm(const LogitTable& table) {
    double s = 0.0;
    for (const auto& [ctx, g] : table) {
        for (double v : g) {
            s += v * v;
        }
    }
    return s;
}

StepResult finish_step(TabularModel& model, LogitTable& grads, double loss, OptimizerState& opt) {
    const double norm = std::sqrt(squared_norm(grads));
    opt.apply(model, grads);
    return {loss, norm};
}

}  // namespace

TabularModel::TabularModel(std::size_t vocab_size, std::size_t window)
    : TabularModel(vocab_size, window, LogitTable{}) {}

TabularModel::TabularModel(std::size_t vocab_size, std::size_t window, LogitTable initial)
    : vocab_size_(vocab_size), window_(window), table_(std::move(initial)), zeros_(vocab_size, 0.0) {
    if (vocab_size_ < 2) {
        throw InvalidInput("TabularModel: vocabulary size must be >= 2");
    }
    for (const auto& [ctx, row] : table_) {
        require_finite_row(row, vocab_size_);
    }
    init_ = table_;
}

LogitVector TabularModel::logits(const ContextKey& ctx) {
    const auto r = mutable_row(ctx);
    return LogitVector(std::vector<double>(r.begin(), r.end()));
}

std::span<const double> TabularModel::row(const ContextKey& ctx) const {
    const auto it = table_.find(ctx);
    return it == table_.end() ? std::span<const double>(zeros_) : std::span<const double>(it->second);
}

std::span<double> TabularModel::mutable_row(const ContextKey& ctx) {
    auto it = table_.find(ctx);
    if (it == table_.end()) {
        it = table_.emplace(ctx, zeros_).first;
    }
    return it->second;
}

void TabularModel::set_row(const ContextKey& ctx, std::vector<double> values) {
    require_finite_row(values, vocab_size_);
    table_[ctx] = std::move(values);
}

double TabularModel::param_distance() const {
    double s = 0.0;
    for (const auto& [ctx, row] : table_) {
        const auto it = init_.find(ctx);
        const std::vector<double>& base = it == init_.end() ? zeros_ : it->second;
        for (std::size_t j = 0; j < row.size(); ++j) {
            const double d = row[j] - base[j];
            s += d * d;
        }
    }
    return std::sqrt(s);
}

double param_distance(const TabularModel& model) { return model.param_distance(); }

nlohmann::json TabularModel::to_json() const {
    auto dump = [](const LogitTable& t) {
        nlohmann::json rows = nlohmann::json::object();
        for (const auto& [ctx, row] : t) {
            rows[ctx.encode()] = row;
        }
        return rows;
    };
    nlohmann::json doc;
    doc["format_version"] = kFormatVersion;
    doc["vocab_size"] = vocab_size_;
    doc["window"] = window_ == kUnlimitedWindow ? nlohmann::json(nullptr) : nlohmann::json(window_);
    doc["rows"] = dump(table_);
    // kept so param_distance survives a save/load
    doc["init"] = dump(init_);
    return doc;
}

TabularModel TabularModel::from_json(const nlohmann::json& doc) {
    try {
        if (doc.at("format_version").get<int>() != kFormatVersion) {
            throw InvalidInput("unsupported model format_version");
        }
        const auto k = doc.at("vocab_size").get<std::size_t>();
        const auto& w = doc.at("window");
        const std::size_t window = w.is_null() ? kUnlimitedWindow : w.get<std::size_t>();
        LogitTable init;
        if (doc.contains("init")) {
            for (const auto& [key, row] : doc.at("init").items()) {
                init.emplace(ContextKey::parse(key), row.get<std::vector<double>>());
            }
        }
        TabularModel model(k, window, std::move(init));
        for (const auto& [key, row] : doc.at("rows").items()) {
            model.set_row(ContextKey::parse(key), row.get<std::vector<double>>());
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed model document: ") + e.what());
    }
}

double LrSchedule::multiplier(std::size_t step) const {
    if (kind == Kind::CONSTANT) {
        return 1.0;
    }
    const auto total = static_cast<double>(std::max<std::size_t>(total_steps, 1));
    const double warmup = std::floor(warmup_ratio * total);
    const auto s = static_cast<double>(step);
    if (s < warmup) {
        return s / std::max(1.0, warmup);
    }
    const double progress = std::min(1.0, (s - warmup) / std::max(1.0, total - warmup));
    return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void OptimizerConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) {
        throw InvalidParameter("learning rate must be > 0");
    }
    if (!(weight_decay >= 0.0)) {
        throw InvalidParameter("weight_decay must be >= 0");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0)) {
        throw InvalidParameter("Adam hyperparameters out of range");
    }
    if (!(schedule.warmup_ratio >= 0.0 && schedule.warmup_ratio <= 1.0)) {
        throw InvalidParameter("warmup_ratio must lie in [0, 1]");
    }
}

OptimizerState::OptimizerState(OptimizerConfig config) : config_(config) { config_.validate(); }

void OptimizerState::apply(TabularModel& model, const LogitTable& gradients) {
    const double lr = current_lr();
    const double wd = config_.weight_decay;
    ++steps_;

    std::set<ContextKey> keys;
    for (const auto& [ctx, g] : gradients) {
        keys.insert(ctx);
    }
    if (config_.kind == OptimizerKind::ADAM) {
        for (const auto& [ctx, m] : m_) {
            keys.insert(ctx);
        }
    }
    if (wd > 0.0) {
        for (const auto& [ctx, row] : model.table()) {
            keys.insert(ctx);
        }
    }

    const std::size_t k = model.vocab_size();
    const std::vector<double> zero(k, 0.0);
    const double bc1 = 1.0 - std::pow(config_.adam_beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.adam_beta2, static_cast<double>(steps_));
    for (const ContextKey& ctx : keys) {
        const auto git = gradients.find(ctx);
        const std::vector<double>& g = git == gradients.end() ? zero : git->second;
        auto theta = model.mutable_row(ctx);
        if (config_.kind == OptimizerKind::SGD) {
            for (std::size_t j = 0; j < k; ++j) {
                theta[j] -= lr * (g[j] + wd * theta[j]);
            }
        } else {
            auto& m = m_.try_emplace(ctx, zero).first->second;
            auto& v = v_.try_emplace(ctx, zero).first->second;
            for (std::size_t j = 0; j < k; ++j) {
                const double gj = g[j] + wd * theta[j];
                m[j] = config_.adam_beta1 * m[j] + (1.0 - config_.adam_beta1) * gj;
                v[j] = config_.adam_beta2 * v[j] + (1.0 - config_.adam_beta2) * gj * gj;
                theta[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.adam_eps);
            }
        }
        for (double t : theta) {
            if (!std::isfinite(t)) {
                throw std::runtime_error("optimizer produced a non-finite parameter (diverged)");
            }
        }
    }
}

StepResult train_step(TabularModel& model, std::span<const TrainingExample> batch, const LossSpec& spec,
                      OptimizerState& opt) {
    if (batch.empty()) {
        throw InvalidInput("train_step: empty batch");
    }
    spec.validate();
    const auto k = model.vocab_size();
    const double scale = 1.0 / static_cast<double>(batch.size());
    LogitTable grads;
    double loss = 0.0;
    for (const TrainingExample& ex : batch) {
        if (ex.target < 0 || static_cast<std::size_t>(ex.target) >= k) {
            throw InvalidInput("train_step: target token out of range");
        }
        const auto row = model.row(ex.context);
        const LogitVector logits(std::vector<double>(row.begin(), row.end()));
        const auto t = static_cast<std::size_t>(ex.target);
        loss += scale * loss_value(logits, t, spec);
        const auto ascent = loss_ascent(logits, t, spec);
        auto& g = grads.try_emplace(ex.context, std::vector<double>(k, 0.0)).first->second;
        for (std::size_t j = 0; j < k; ++j) {
            g[j] -= scale * ascent[j];
        }
    }
    return finish_step(model, grads, loss, opt);
}

StepResult train_step_expected(TabularModel& model, std::span<const ExpectedTarget> targets, const LossSpec& spec,
                               OptimizerState& opt) {
    if (targets.empty()) {
        throw InvalidInput("train_step_expected: no targets");
    }
    spec.validate();
    const auto k = model.vocab_size();
    double total_weight = 0.0;
    for (const ExpectedTarget& t : targets) {
        if (t.distribution.size() != k || !(t.weight >= 0.0)) {
            throw InvalidInput("train_step_expected: bad target distribution or weight");
        }
        total_weight += t.weight;
    }
    if (!(total_weight > 0.0)) {
        throw InvalidInput("train_step_expected: weights sum to zero");
    }
    LogitTable grads;
    double loss = 0.0;
    for (const ExpectedTarget& t : targets) {
        const double scale = t.weight / total_weight;
        const auto row = model.row(t.context);
        const LogitVector logits(std::vector<double>(row.begin(), row.end()));
        loss += scale * expected_loss(logits, t.distribution, spec);
        const auto ascent = expected_ascent(logits, t.distribution, spec);
        auto& g = grads.try_emplace(t.context, std::vector<double>(k, 0.0)).first->second;
        for (std::size_t j = 0; j < k; ++j) {
            g[j] -= scale * ascent[j];
        }
    }
    return finish_step(model, grads, loss, opt);
}

ProbVector closed_form_equilibrium(const ProbVector& p, double beta) {
    if (!(beta > 0.0 && beta <= 1.0)) {
        throw InvalidParameter("closed_form_equilibrium: beta must lie in (0, 1]");
    }
    std::vector<double> scaled(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) {
        if (!(p[j] > 0.0)) {
            throw PreconditionError(
                "closed_form_equilibrium: the equilibrium is unique only for a strictly positive data "
                "distribution, but p[" + std::to_string(j) + "] = 0");
        }
        scaled[j] = beta * std::log(p[j]);
    }
    return softmax(LogitVector(std::move(scaled)));
}

ConvergenceResult train_to_convergence(TabularModel& model, std::span<const ExpectedTarget> targets,
                                       const LossSpec& spec, OptimizerState& opt, const ConvergenceOptions& conv) {
    double norm = std::numeric_limits<double>::infinity();
    for (std::size_t step = 0; step < conv.max_steps; ++step) {
        norm = train_step_expected(model, targets, spec, opt).grad_norm;
        if (norm < conv.tol) {
            return {step + 1, norm, true};
        }
    }
    return {conv.max_steps, norm, false};
}

}  // namespace gemlab
