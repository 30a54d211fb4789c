#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cts/error.hpp"

namespace cts::corpus {

enum class Speaker { Tutor, Student };

std::string_view to_string(Speaker s);
std::optional<Speaker> parse_speaker(std::string_view s);

struct Turn {
    Speaker speaker = Speaker::Student;
    std::string text;
};

/// One training/evaluation instance: the dialog context, the gold strategy
/// label(s) of the next tutor response, and that response.
struct Conversation {
    std::string id;
    std::vector<Turn> turns;
    std::vector<int> gold_strategies;
    std::string target;

    /// First gold label; the one used for prompting and single-label metrics.
    int primary_strategy() const { return gold_strategies.front(); }
};

/// Ordered teaching-strategy names. Position is the label id.
class StrategyList {
public:
    StrategyList() = default;
    explicit StrategyList(std::vector<std::string> names);

    static StrategyList load(const std::string& path);
    void save(const std::string& path) const;

    std::size_t size() const { return names_.size(); }
    const std::string& name(int index) const;
    std::optional<int> index_of(std::string_view name) const;
    const std::vector<std::string>& names() const { return names_; }

    friend bool operator==(const StrategyList&, const StrategyList&) = default;

private:
    std::vector<std::string> names_;
};

// Raised for malformed corpus content; carries the 1-based line when known.
class CorpusError : public ValidationError {
public:
    CorpusError(const std::string& what, std::size_t line = 0);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

/// Checks the data-model invariants (turns present, texts non-empty, labels in range).
void validate(const Conversation& c, std::size_t n_strategies);

// Whitespace tokenization. detokenize(tokenize(s)) == normalize_whitespace(s).
std::vector<std::string> tokenize(std::string_view text);
std::string detokenize(const std::vector<std::string>& tokens);
std::string normalize_whitespace(std::string_view text);

}  // namespace cts::corpus
