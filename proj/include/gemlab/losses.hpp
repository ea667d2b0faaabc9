#pragma once

// Per-example losses over a single logit row and their analytic gradients.
//
// Gradients follow the flow module's convention: they are ascent
// directions (-dL/dtheta). For GEM the meta-controller q and the h' weights
// are computed from the current logits and then held fixed, so the gradient
// is taken through the log f terms only.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "gemlab/dist.hpp"

namespace gemlab {

enum class LossKind { CE, CE_ENTROPY, GEM };
enum class HFunction { LINEAR, LOG_SIGMOID };

std::string_view to_string(LossKind k);
std::string_view to_string(HFunction h);
LossKind parse_loss_kind(std::string_view s);
HFunction parse_h_function(std::string_view s);

struct LossSpec {
    LossKind kind = LossKind::CE;
    double beta = 1.0;      // GEM sharpening, in [0, 1]
    double gamma = 0.0;     // CE_ENTROPY entropy weight, >= 0
    HFunction h = HFunction::LINEAR;
    double h_scale = 0.01;  // LOG_SIGMOID input scale

    static LossSpec ce() { return {}; }
    static LossSpec ce_entropy(double gamma) { return {LossKind::CE_ENTROPY, 1.0, gamma, HFunction::LINEAR, 0.01}; }
    static LossSpec gem(double beta, HFunction h = HFunction::LINEAR, double h_scale = 0.01) {
        return {LossKind::GEM, beta, 0.0, h, h_scale};
    }

    /// Throws InvalidParameter when a field is out of range for `kind`.
    void validate() const;
    /// Short human-readable label, e.g. "GEM(beta=0.7,LOG_SIGMOID)".
    std::string label() const;

    friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

double ce_loss(const LogitVector& logits, std::size_t target);

/// ce_loss - gamma * H(softmax(logits)).
double ce_entropy_loss(const LogitVector& logits, std::size_t target, double gamma);

/// The meta-controller softmax(log f / beta); Dirac at argmax for beta == 0.
ProbVector gem_q(const LogitVector& logits, double beta);

/// h'(z) weights per token, z_j = h_scale * (logit_j - logit_target).
std::vector<double> gem_h_weights(const LogitVector& logits, std::size_t target, const LossSpec& spec);

/// sum_j q(j) w(j) (log f(j) - log f(target)).
double gem_loss(const LogitVector& logits, std::size_t target, const LossSpec& spec);

/// sum_{j != target} q(j) w(j) e_{target<-j}.
std::vector<double> gem_gradient(const LogitVector& logits, std::size_t target, const LossSpec& spec);

double loss_value(const LogitVector& logits, std::size_t target, const LossSpec& spec);
std::vector<double> loss_ascent(const LogitVector& logits, std::size_t target, const LossSpec& spec);

/// Expectation of the loss / ascent direction over targets drawn from `p`.
/// Closed forms are used where they exist (CE: p - f, GEM linear: p - q).
double expected_loss(const LogitVector& logits, const ProbVector& p, const LossSpec& spec);
std::vector<double> expected_ascent(const LogitVector& logits, const ProbVector& p, const LossSpec& spec);

/// Fourth-order central finite differences of the loss (q and h' weights frozen at
/// `logits`) against the analytic gradient. Returns the largest
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-4) over components.
double analytic_vs_numeric(const LogitVector& logits, std::size_t target, const LossSpec& spec, double step);

/// Per-token pull on a low-probability token j, in probability space.
struct TailPull {
    double entropy_regularizer;  // gamma * |d H / d f(j)| = gamma * |1 + log f(j)|
    double gem_ratio;            // q(j) / f(j) with q = sharpen(log f, beta)
};

TailPull tail_pull(const ProbVector& f, std::size_t token, double beta, double gamma);

}  // namespace gemlab
