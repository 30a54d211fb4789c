#include "cts/corpus/vocabulary.hpp"

#include <algorithm>
#include <map>

namespace cts::corpus {

namespace {

const std::vector<std::string> kSpecials = {"<pad>", "<unk>", "<s>", "</s>", "<mask>"};

}  // namespace

Vocabulary Vocabulary::build(const std::vector<Conversation>& train, const StrategyList& strategies, std::size_t min_freq) {
    if (min_freq < 1) throw ValidationError("min_freq must be >= 1");
    if (train.empty()) throw ValidationError("cannot build a vocabulary from an empty corpus");
    std::map<std::string, std::size_t> counts;
    for (const auto& c : train) {
        for (const auto& t : c.turns)
            for (auto& tok : tokenize(t.text)) ++counts[tok];
        for (auto& tok : tokenize(c.target)) ++counts[tok];
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [tok, n] : counts) {
        if (n >= min_freq) kept.emplace_back(tok, n);
    }
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocabulary v;
    v.n_strategies_ = strategies.size();
    v.tokens_ = kSpecials;
    for (const auto& name : strategies.names()) v.tokens_.push_back(strategy_token_text(name));
    for (auto& [tok, n] : kept) v.tokens_.push_back(tok);
    v.index_natural();
    return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens, std::size_t n_strategies) {
    if (tokens.size() < kFirstStrategy + n_strategies) throw ValidationError("vocabulary token list too short");
    for (std::size_t i = 0; i < kSpecials.size(); ++i) {
        if (tokens[i] != kSpecials[i]) throw ValidationError("vocabulary special token mismatch at id " + std::to_string(i));
    }
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    v.n_strategies_ = n_strategies;
    v.index_natural();
    return v;
}

void Vocabulary::index_natural() {
    natural_.clear();
    for (std::size_t i = n_reserved(); i < tokens_.size(); ++i) {
        if (!natural_.emplace(tokens_[i], static_cast<int>(i)).second) {
            throw ValidationError("duplicate vocabulary token '" + tokens_[i] + "'");
        }
    }
}

int Vocabulary::strategy_token(int strategy) const {
    if (strategy < 0 || static_cast<std::size_t>(strategy) >= n_strategies_) {
        throw ValidationError("strategy index " + std::to_string(strategy) + " out of range");
    }
    return kFirstStrategy + strategy;
}

bool Vocabulary::is_strategy_token(int id) const {
    return id >= kFirstStrategy && static_cast<std::size_t>(id) < n_reserved();
}

int Vocabulary::id(std::string_view token) const {
    auto it = natural_.find(std::string(token));
    return it == natural_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw ValidationError("token id " + std::to_string(id) + " >= vocabulary size " + std::to_string(tokens_.size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& tok : tokenize(text)) ids.push_back(id(tok));
    return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
    std::vector<std::string> toks;
    for (int i : ids) {
        if (i == kUnk) toks.push_back(tokens_[kUnk]);
        else if (!is_reserved(i)) toks.push_back(token(i));
    }
    return detokenize(toks);
}

}  // namespace cts::corpus
