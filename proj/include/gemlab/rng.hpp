#pragma once

// Seed derivation and hashing. Every random stream in the project is an
// std::mt19937_64 seeded through derive_seed, so results depend only on the
// root seed and a stream label, never on scheduling.

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace gemlab {

std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t fnv1a64(std::string_view bytes) noexcept;
std::string to_hex(std::uint64_t v);

std::uint64_t derive_seed(std::uint64_t root, std::string_view label) noexcept;
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) noexcept;

using Rng = std::mt19937_64;

/// Draws from Dirichlet(alpha * 1_k). Entries are floored at the smallest
/// normal double before renormalizing, so the result is strictly positive.
std::vector<double> sample_dirichlet(Rng& rng, std::size_t k, double alpha);

/// Index drawn from the (normalized) weights via inverse CDF.
std::size_t sample_index(Rng& rng, const std::vector<double>& weights);

}  // namespace gemlab
