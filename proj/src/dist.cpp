#include "gemlab/dist.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gemlab/errors.hpp"

namespace gemlab {

namespace {

void require_size(std::size_t k, const char* what) {
    if (k < 2) {
        std::ostringstream os;
        os << what << ": vocabulary size must be >= 2, got " << k;
        throw InvalidInput(os.str());
    }
}

void require_same_size(const ProbVector& a, const ProbVector& b) {
    if (a.size() != b.size()) {
        throw InvalidInput("distributions have different vocabulary sizes");
    }
}

// sum a log(a / b) with the 0 log 0 convention.
double kl_terms(std::span<const double> a, std::span<const double> b) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == 0.0) {
            continue;
        }
        if (b[i] == 0.0) {
            return kInfiniteDivergence;
        }
        total += a[i] * (std::log(a[i]) - std::log(b[i]));
    }
    // Rounding can leave tiny negatives when a == b.
    return std::max(total, 0.0);
}

}  // namespace

LogitVector::LogitVector(std::vector<double> values) : values_(std::move(values)) {
    require_size(values_.size(), "LogitVector");
    for (double v : values_) {
        if (!std::isfinite(v)) {
            throw InvalidInput("LogitVector: non-finite entry");
        }
    }
}

ProbVector::ProbVector(std::vector<double> values) : values_(std::move(values)) {
    require_size(values_.size(), "ProbVector");
    double sum = 0.0;
    for (double v : values_) {
        if (!std::isfinite(v) || v < 0.0) {
            throw InvalidInput("ProbVector: entries must be finite and non-negative");
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
        std::ostringstream os;
        os.precision(17);
        os << "ProbVector: entries sum to " << sum << ", expected 1";
        throw InvalidInput(os.str());
    }
}

ProbVector ProbVector::uniform(std::size_t k) {
    require_size(k, "ProbVector::uniform");
    return ProbVector(Trusted{}, std::vector<double>(k, 1.0 / static_cast<double>(k)));
}

ProbVector ProbVector::dirac(std::size_t k, std::size_t index) {
    require_size(k, "ProbVector::dirac");
    if (index >= k) {
        throw InvalidInput("ProbVector::dirac: index out of range");
    }
    std::vector<double> v(k, 0.0);
    v[index] = 1.0;
    return ProbVector(Trusted{}, std::move(v));
}

ProbVector ProbVector::normalized(std::vector<double> weights) {
    require_size(weights.size(), "ProbVector::normalized");
    double sum = 0.0;
    for (double w : weights) {
        if (!std::isfinite(w) || w < 0.0) {
            throw InvalidInput("ProbVector::normalized: weights must be finite and non-negative");
        }
        sum += w;
    }
    if (!(sum > 0.0)) {
        throw InvalidInput("ProbVector::normalized: weights sum to zero");
    }
    for (double& w : weights) {
        w /= sum;
    }
    return ProbVector(Trusted{}, std::move(weights));
}

namespace detail {

void softmax_into(std::span<const double> logits, std::span<double> out, double inv_temperature) {
    const double top = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - top) * inv_temperature);
        z += out[i];
    }
    for (double& v : out) {
        v /= z;
    }
}

double entropy_of(std::span<const double> p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) {
            h -= v * std::log(v);
        }
    }
    return std::max(h, 0.0);
}

}  // namespace detail

double logsumexp(std::span<const double> values) {
    if (values.empty()) {
        throw InvalidInput("logsumexp of an empty vector");
    }
    const double top = *std::max_element(values.begin(), values.end());
    double s = 0.0;
    for (double v : values) {
        s += std::exp(v - top);
    }
    return top + std::log(s);
}

std::size_t argmax_index(std::span<const double> values) {
    if (values.empty()) {
        throw InvalidInput("argmax of an empty vector");
    }
    // max_element returns the first maximum.
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

ProbVector softmax(const LogitVector& logits) {
    std::vector<double> out(logits.size());
    detail::softmax_into(logits.values(), out);
    return ProbVector(ProbVector::Trusted{}, std::move(out));
}

LogitVector log_softmax(const LogitVector& logits) {
    const double lse = logsumexp(logits.values());
    std::vector<double> out(logits.size());
    std::transform(logits.vec().begin(), logits.vec().end(), out.begin(), [lse](double v) { return v - lse; });
    return LogitVector(std::move(out));
}

double entropy(const ProbVector& p) { return detail::entropy_of(p.values()); }

double forward_kl(const ProbVector& p, const ProbVector& f) {
    require_same_size(p, f);
    return kl_terms(p.values(), f.values());
}

double reverse_kl(const ProbVector& f, const ProbVector& p) {
    require_same_size(f, p);
    return kl_terms(f.values(), p.values());
}

ProbVector sharpen(const LogitVector& logits, double beta) {
    if (!(beta >= 0.0) || !std::isfinite(beta)) {
        throw InvalidParameter("sharpen: beta must be a finite value >= 0");
    }
    if (beta == 0.0) {
        return ProbVector::dirac(logits.size(), argmax_index(logits.values()));
    }
    std::vector<double> out(logits.size());
    // beta == 1 multiplies by exactly 1.0, so this agrees bitwise with softmax().
    detail::softmax_into(logits.values(), out, 1.0 / beta);
    return ProbVector(ProbVector::Trusted{}, std::move(out));
}

}  // namespace gemlab
