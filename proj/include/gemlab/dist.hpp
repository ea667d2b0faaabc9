#pragma once

// Categorical-distribution primitives. Everything is double precision and
// pure; vectors are immutable once constructed.

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace gemlab {

/// Unnormalized log-scores over a vocabulary of K >= 2 tokens. All entries finite.
class LogitVector {
public:
    explicit LogitVector(std::vector<double> values);

    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    std::span<const double> values() const noexcept { return values_; }
    const std::vector<double>& vec() const noexcept { return values_; }

    friend bool operator==(const LogitVector&, const LogitVector&) = default;

private:
    std::vector<double> values_;
};

/// Probabilities over K >= 2 tokens: non-negative, summing to one within 1e-12.
class ProbVector {
public:
    static constexpr double kSumTolerance = 1e-12;

    explicit ProbVector(std::vector<double> values);

    static ProbVector uniform(std::size_t k);
    static ProbVector dirac(std::size_t k, std::size_t index);
    /// Divides non-negative weights by their sum.
    static ProbVector normalized(std::vector<double> weights);

    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    std::span<const double> values() const noexcept { return values_; }
    const std::vector<double>& vec() const noexcept { return values_; }

    friend bool operator==(const ProbVector&, const ProbVector&) = default;

private:
    struct Trusted {};
    ProbVector(Trusted, std::vector<double> values) : values_(std::move(values)) {}
    friend ProbVector softmax(const LogitVector&);
    friend ProbVector sharpen(const LogitVector&, double);

    std::vector<double> values_;
};

/// Returned by the KL routines when the support condition fails.
inline constexpr double kInfiniteDivergence = std::numeric_limits<double>::infinity();

inline bool is_infinite_divergence(double d) noexcept { return d == kInfiniteDivergence; }

ProbVector softmax(const LogitVector& logits);
LogitVector log_softmax(const LogitVector& logits);

/// Shannon entropy in nats, with 0 log 0 = 0.
double entropy(const ProbVector& p);

/// KL(p || f) = sum p log(p / f). Infinite if f vanishes somewhere p does not.
double forward_kl(const ProbVector& p, const ProbVector& f);

/// KL(f || p), the divergence GEM's equilibrium minimizes.
double reverse_kl(const ProbVector& f, const ProbVector& p);

/// softmax(logits / beta) for beta > 0; a Dirac at argmax (lowest index on
/// ties) for beta == 0.
ProbVector sharpen(const LogitVector& logits, double beta);

/// Lowest index attaining the maximum.
std::size_t argmax_index(std::span<const double> values);

double logsumexp(std::span<const double> values);

namespace detail {

// Allocation-free kernels used by the training loops. No validation.
void softmax_into(std::span<const double> logits, std::span<double> out, double inv_temperature = 1.0);
double entropy_of(std::span<const double> p);

}  // namespace detail

}  // namespace gemlab
