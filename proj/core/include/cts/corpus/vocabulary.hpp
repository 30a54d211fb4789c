#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cts/corpus/conversation.hpp"

namespace cts::corpus {

/// Token <-> id table. Layout: five special ids, then one reserved id per
/// strategy, then natural-language tokens. Text tokenization never yields a
/// special or strategy id.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kMask = 4;
    static constexpr int kFirstStrategy = 5;

    Vocabulary() = default;

    /// Natural tokens with count >= min_freq over all turns and targets,
    /// ordered by descending count then lexicographically.
    static Vocabulary build(const std::vector<Conversation>& train, const StrategyList& strategies, std::size_t min_freq);

    /// Rebuilds from a full token list as written by tokens() (checkpoint load).
    static Vocabulary from_tokens(std::vector<std::string> tokens, std::size_t n_strategies);

    std::size_t size() const { return tokens_.size(); }
    std::size_t n_strategies() const { return n_strategies_; }
    std::size_t n_reserved() const { return kFirstStrategy + n_strategies_; }

    int strategy_token(int strategy) const;
    bool is_strategy_token(int id) const;
    bool is_reserved(int id) const { return id >= 0 && static_cast<std::size_t>(id) < n_reserved(); }

    /// Id of a natural token, kUnk when absent.
    int id(std::string_view token) const;
    const std::string& token(int id) const;

    std::vector<int> encode(std::string_view text) const;
    /// Joins natural tokens with single spaces; reserved ids are dropped.
    std::string decode(std::span<const int> ids) const;

    const std::vector<std::string>& tokens() const { return tokens_; }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
        return a.tokens_ == b.tokens_ && a.n_strategies_ == b.n_strategies_;
    }

    static std::string strategy_token_text(const std::string& name) { return "<ts:" + name + ">"; }

private:
    void index_natural();

    std::vector<std::string> tokens_;
    std::size_t n_strategies_ = 0;
    std::unordered_map<std::string, int> natural_;
};

}  // namespace cts::corpus
