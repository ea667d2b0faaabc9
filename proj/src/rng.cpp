#include "gemlab/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>

#include "gemlab/errors.hpp"

namespace gemlab {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view label) noexcept {
    return splitmix64(root ^ splitmix64(fnv1a64(label)));
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) noexcept {
    return splitmix64(root ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

std::vector<double> sample_dirichlet(Rng& rng, std::size_t k, double alpha) {
    if (!(alpha > 0.0)) {
        throw InvalidParameter("Dirichlet concentration must be > 0");
    }
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<double> x(k);
    double sum = 0.0;
    for (double& v : x) {
        v = std::max(gamma(rng), std::numeric_limits<double>::min());
        sum += v;
    }
    for (double& v : x) {
        v /= sum;
    }
    return x;
}

std::size_t sample_index(Rng& rng, const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) {
        total += w;
    }
    const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0.0) {
            continue;
        }
        acc += weights[i];
        last_positive = i;
        if (u < acc) {
            return i;
        }
    }
    return last_positive;
}

}  // namespace gemlab
