#include "gemlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gemlab/errors.hpp"
#include "gemlab/flow.hpp"

namespace gemlab {

namespace {

void require_target(std::size_t target, std::size_t k) {
    if (target >= k) {
        throw InvalidInput("target index " + std::to_string(target) + " out of range for vocabulary of " +
                           std::to_string(k));
    }
}

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

std::vector<double> log_probs(std::span<const double> logits) {
    const double lse = logsumexp(logits);
    std::vector<double> out(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) {
        out[j] = logits[j] - lse;
    }
    return out;
}

// q(j) * w(j), the frozen per-source flow weights.
std::vector<double> gem_flow_weights(const LogitVector& logits, std::size_t target, const LossSpec& spec) {
    const ProbVector q = gem_q(logits, spec.beta);
    std::vector<double> w = gem_h_weights(logits, target, spec);
    for (std::size_t j = 0; j < w.size(); ++j) {
        w[j] *= q[j];
    }
    return w;
}

// Loss with q and w held at caller-supplied values, as a function of logits.
double frozen_gem_loss(std::span<const double> logits, std::size_t target, std::span<const double> qw) {
    const auto lp = log_probs(logits);
    double total = 0.0;
    for (std::size_t j = 0; j < lp.size(); ++j) {
        total += qw[j] * (lp[j] - lp[target]);
    }
    return total;
}

double ce_entropy_raw(std::span<const double> logits, std::size_t target, double gamma) {
    const auto lp = log_probs(logits);
    double h = 0.0;
    for (double v : lp) {
        h -= std::exp(v) * v;
    }
    return -lp[target] - gamma * h;
}

}  // namespace

std::string_view to_string(LossKind k) {
    switch (k) {
        case LossKind::CE: return "CE";
        case LossKind::CE_ENTROPY: return "CE_ENTROPY";
        case LossKind::GEM: return "GEM";
    }
    return "?";
}

std::string_view to_string(HFunction h) { return h == HFunction::LINEAR ? "LINEAR" : "LOG_SIGMOID"; }

LossKind parse_loss_kind(std::string_view s) {
    if (s == "CE") return LossKind::CE;
    if (s == "CE_ENTROPY") return LossKind::CE_ENTROPY;
    if (s == "GEM") return LossKind::GEM;
    throw InvalidParameter("unknown loss kind '" + std::string(s) + "'");
}

HFunction parse_h_function(std::string_view s) {
    if (s == "LINEAR") return HFunction::LINEAR;
    if (s == "LOG_SIGMOID") return HFunction::LOG_SIGMOID;
    throw InvalidParameter("unknown h function '" + std::string(s) + "'");
}

void LossSpec::validate() const {
    switch (kind) {
        case LossKind::CE:
            break;
        case LossKind::CE_ENTROPY:
            if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
                throw InvalidParameter("CE_ENTROPY requires gamma >= 0");
            }
            break;
        case LossKind::GEM:
            // beta > 1 spreads transfer onto minority tokens; not supported.
            if (!(beta >= 0.0 && beta <= 1.0)) {
                throw InvalidParameter("GEM requires beta in [0, 1]");
            }
            if (!(h_scale > 0.0) || !std::isfinite(h_scale)) {
                throw InvalidParameter("GEM requires h_scale > 0");
            }
            break;
    }
}

std::string LossSpec::label() const {
    std::ostringstream os;
    os << to_string(kind);
    if (kind == LossKind::CE_ENTROPY) {
        os << "(gamma=" << gamma << ")";
    } else if (kind == LossKind::GEM) {
        os << "(beta=" << beta << "," << to_string(h);
        if (h == HFunction::LOG_SIGMOID) {
            os << ",scale=" << h_scale;
        }
        os << ")";
    }
    return os.str();
}

double ce_loss(const LogitVector& logits, std::size_t target) {
    require_target(target, logits.size());
    return std::max(0.0, logsumexp(logits.values()) - logits[target]);
}

double ce_entropy_loss(const LogitVector& logits, std::size_t target, double gamma) {
    if (!(gamma >= 0.0)) {
        throw InvalidParameter("ce_entropy_loss: gamma must be >= 0");
    }
    if (gamma == 0.0) {
        return ce_loss(logits, target);
    }
    return ce_loss(logits, target) - gamma * entropy(softmax(logits));
}

ProbVector gem_q(const LogitVector& logits, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) {
        throw InvalidParameter("gem_q: beta must lie in [0, 1]");
    }
    // log f and the logits differ by a constant, which the softmax absorbs.
    return sharpen(logits, beta);
}

std::vector<double> gem_h_weights(const LogitVector& logits, std::size_t target, const LossSpec& spec) {
    require_target(target, logits.size());
    std::vector<double> w(logits.size(), 1.0);
    if (spec.h == HFunction::LOG_SIGMOID) {
        for (std::size_t j = 0; j < w.size(); ++j) {
            w[j] = sigmoid(spec.h_scale * (logits[j] - logits[target]));
        }
    }
    return w;
}

double gem_loss(const LogitVector& logits, std::size_t target, const LossSpec& spec) {
    if (spec.kind != LossKind::GEM) {
        throw InvalidParameter("gem_loss called with a non-GEM spec");
    }
    spec.validate();
    require_target(target, logits.size());
    return frozen_gem_loss(logits.values(), target, gem_flow_weights(logits, target, spec));
}

std::vector<double> gem_gradient(const LogitVector& logits, std::size_t target, const LossSpec& spec) {
    if (spec.kind != LossKind::GEM) {
        throw InvalidParameter("gem_gradient called with a non-GEM spec");
    }
    spec.validate();
    require_target(target, logits.size());
    const auto qw = gem_flow_weights(logits, target, spec);
    std::vector<double> g(logits.size(), 0.0);
    for (std::size_t j = 0; j < g.size(); ++j) {
        if (j != target) {
            g[target] += qw[j];
            g[j] = -qw[j];
        }
    }
    return g;
}

double loss_value(const LogitVector& logits, std::size_t target, const LossSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case LossKind::CE: return ce_loss(logits, target);
        case LossKind::CE_ENTROPY: return ce_entropy_loss(logits, target, spec.gamma);
        case LossKind::GEM: return gem_loss(logits, target, spec);
    }
    return 0.0;
}

std::vector<double> loss_ascent(const LogitVector& logits, std::size_t target, const LossSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case LossKind::CE:
            return ce_gradient(softmax(logits), target);
        case LossKind::CE_ENTROPY: {
            const ProbVector f = softmax(logits);
            auto g = ce_gradient(f, target);
            if (spec.gamma == 0.0) {
                return g;
            }
            const double h = entropy(f);
            // d(-gamma H)/dtheta_k = gamma f_k (log f_k + H)
            for (std::size_t k = 0; k < g.size(); ++k) {
                if (f[k] > 0.0) {
                    g[k] -= spec.gamma * f[k] * (std::log(f[k]) + h);
                }
            }
            return g;
        }
        case LossKind::GEM:
            return gem_gradient(logits, target, spec);
    }
    return {};
}

double expected_loss(const LogitVector& logits, const ProbVector& p, const LossSpec& spec) {
    if (p.size() != logits.size()) {
        throw InvalidInput("expected_loss: size mismatch");
    }
    spec.validate();
    if (spec.kind == LossKind::GEM && spec.h == HFunction::LINEAR) {
        // sum_j q_j log f_j - sum_i p_i log f_i
        const auto lp = log_probs(logits.values());
        const ProbVector q = gem_q(logits, spec.beta);
        double total = 0.0;
        for (std::size_t j = 0; j < lp.size(); ++j) {
            total += (q[j] - p[j]) * lp[j];
        }
        return total;
    }
    if (spec.kind != LossKind::GEM) {
        // -sum_i p_i log f_i - gamma H(f)
        const auto lp = log_probs(logits.values());
        double ce = 0.0;
        double h = 0.0;
        for (std::size_t j = 0; j < lp.size(); ++j) {
            if (p[j] > 0.0) {
                ce -= p[j] * lp[j];
            }
            h -= std::exp(lp[j]) * lp[j];
        }
        return spec.kind == LossKind::CE ? ce : ce - spec.gamma * h;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) {
            total += p[i] * loss_value(logits, i, spec);
        }
    }
    return total;
}

std::vector<double> expected_ascent(const LogitVector& logits, const ProbVector& p, const LossSpec& spec) {
    if (p.size() != logits.size()) {
        throw InvalidInput("expected_ascent: size mismatch");
    }
    spec.validate();
    const std::size_t k = logits.size();
    std::vector<double> g(k, 0.0);
    if (spec.kind == LossKind::CE || (spec.kind == LossKind::GEM && spec.h == HFunction::LINEAR)) {
        const ProbVector w = spec.kind == LossKind::CE ? softmax(logits) : gem_q(logits, spec.beta);
        for (std::size_t j = 0; j < k; ++j) {
            g[j] = p[j] - w[j];
        }
        return g;
    }
    if (spec.kind == LossKind::CE_ENTROPY) {
        // The entropy term does not depend on the target: p - f - gamma f (log f + H).
        const ProbVector f = softmax(logits);
        const double h = entropy(f);
        for (std::size_t j = 0; j < k; ++j) {
            g[j] = p[j] - f[j];
            if (f[j] > 0.0) {
                g[j] -= spec.gamma * f[j] * (std::log(f[j]) + h);
            }
        }
        return g;
    }
    for (std::size_t i = 0; i < k; ++i) {
        if (p[i] == 0.0) {
            continue;
        }
        const auto gi = loss_ascent(logits, i, spec);
        for (std::size_t j = 0; j < k; ++j) {
            g[j] += p[i] * gi[j];
        }
    }
    return g;
}

double analytic_vs_numeric(const LogitVector& logits, std::size_t target, const LossSpec& spec, double step) {
    if (!(step >= 1e-7 && step <= 1e-3)) {
        throw InvalidParameter("finite-difference step must lie in [1e-7, 1e-3]");
    }
    spec.validate();
    require_target(target, logits.size());

    std::vector<double> frozen;
    if (spec.kind == LossKind::GEM) {
        frozen = gem_flow_weights(logits, target, spec);
    }
    auto scalar = [&](std::span<const double> x) {
        switch (spec.kind) {
            case LossKind::CE: return ce_entropy_raw(x, target, 0.0);
            case LossKind::CE_ENTROPY: return ce_entropy_raw(x, target, spec.gamma);
            case LossKind::GEM: return frozen_gem_loss(x, target, frozen);
        }
        return 0.0;
    };

    const auto ascent = loss_ascent(logits, target, spec);
    std::vector<double> x = logits.vec();
    double worst = 0.0;
    auto at = [&](std::size_t k, double offset) {
        const double saved = x[k];
        x[k] = saved + offset;
        const double v = scalar(x);
        x[k] = saved;
        return v;
    };
    for (std::size_t k = 0; k < x.size(); ++k) {
        // fourth-order central stencil; the two-point one is roundoff-bound near 1e-6
        const double numeric =
            (8.0 * (at(k, step) - at(k, -step)) - (at(k, 2.0 * step) - at(k, -2.0 * step))) / (12.0 * step);
        const double analytic = -ascent[k];
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-4});
        worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
    return worst;
}

TailPull tail_pull(const ProbVector& f, std::size_t token, double beta, double gamma) {
    require_target(token, f.size());
    if (!(beta > 0.0 && beta <= 1.0)) {
        throw InvalidParameter("tail_pull: beta must lie in (0, 1]");
    }
    if (f[token] <= 0.0) {
        throw InvalidInput("tail_pull: token must have positive probability");
    }
    double z = 0.0;
    for (double v : f.values()) {
        if (v > 0.0) {
            z += std::pow(v, 1.0 / beta);
        }
    }
    return {gamma * std::abs(1.0 + std::log(f[token])), std::pow(f[token], 1.0 / beta - 1.0) / z};
}

}  // namespace gemlab
