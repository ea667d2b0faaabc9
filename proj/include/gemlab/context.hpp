#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gemlab {

using TokenId = std::int32_t;

/// Keep the whole prefix.
inline constexpr std::size_t kUnlimitedWindow = std::numeric_limits<std::size_t>::max();

/// Conditioning prefix of a tabular model: prompt followed by the response
/// tokens seen so far, truncated to the last `window` tokens. Equal prefixes
/// give equal keys. The text form is the comma-joined token list.
class ContextKey {
public:
    ContextKey() = default;
    explicit ContextKey(std::vector<TokenId> tokens) : tokens_(std::move(tokens)) {}

    static ContextKey from_prefix(std::span<const TokenId> prompt, std::span<const TokenId> response_prefix,
                                  std::size_t window);
    static ContextKey parse(std::string_view encoded);

    const std::vector<TokenId>& tokens() const noexcept { return tokens_; }
    std::string encode() const;

    auto operator<=>(const ContextKey&) const = default;

private:
    std::vector<TokenId> tokens_;
};

}  // namespace gemlab
