#include "gemlab/context.hpp"

#include <charconv>

#include "gemlab/errors.hpp"

namespace gemlab {

ContextKey ContextKey::from_prefix(std::span<const TokenId> prompt, std::span<const TokenId> response_prefix,
                                   std::size_t window) {
    const std::size_t total = prompt.size() + response_prefix.size();
    const std::size_t keep = std::min(window, total);
    std::vector<TokenId> tokens;
    tokens.reserve(keep);
    for (std::size_t pos = total - keep; pos < total; ++pos) {
        tokens.push_back(pos < prompt.size() ? prompt[pos] : response_prefix[pos - prompt.size()]);
    }
    return ContextKey(std::move(tokens));
}

ContextKey ContextKey::parse(std::string_view encoded) {
    std::vector<TokenId> tokens;
    if (encoded.empty()) {
        return ContextKey();
    }
    std::size_t start = 0;
    while (start <= encoded.size()) {
        const std::size_t comma = encoded.find(',', start);
        const std::string_view part = encoded.substr(start, comma == std::string_view::npos ? encoded.npos : comma - start);
        TokenId value = 0;
        const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), value);
        if (ec != std::errc() || ptr != part.data() + part.size() || part.empty()) {
            throw InvalidInput("malformed context key '" + std::string(encoded) + "'");
        }
        tokens.push_back(value);
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return ContextKey(std::move(tokens));
}

std::string ContextKey::encode() const {
    std::string out;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (i > 0) {
            out.push_back(',');
        }
        out += std::to_string(tokens_[i]);
    }
    return out;
}

}  // namespace gemlab
