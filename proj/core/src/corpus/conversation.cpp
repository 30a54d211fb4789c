#include "cts/corpus/conversation.hpp"

#include <cctype>
#include <fstream>
#include <set>

namespace cts::corpus {

std::string_view to_string(Speaker s) { return s == Speaker::Tutor ? "tutor" : "student"; }

std::optional<Speaker> parse_speaker(std::string_view s) {
    if (s == "tutor" || s == "teacher") return Speaker::Tutor;
    if (s == "student") return Speaker::Student;
    return std::nullopt;
}

StrategyList::StrategyList(std::vector<std::string> names) : names_(std::move(names)) {
    std::set<std::string> seen;
    for (const auto& n : names_) {
        if (n.empty()) throw ValidationError("strategy names must be non-empty");
        if (n.find_first_of(" \t\r\n") != std::string::npos) {
            throw ValidationError("strategy name '" + n + "' contains whitespace");
        }
        if (!seen.insert(n).second) throw ValidationError("duplicate strategy name '" + n + "'");
    }
}

StrategyList StrategyList::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open strategy list '" + path + "'");
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        const std::string name = normalize_whitespace(line);
        if (!name.empty()) names.push_back(name);
    }
    if (names.size() < 2) throw ValidationError("strategy list '" + path + "' needs at least two names");
    return StrategyList(std::move(names));
}

void StrategyList::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeError("cannot write strategy list '" + path + "'");
    for (const auto& n : names_) out << n << '\n';
}

const std::string& StrategyList::name(int index) const {
    if (index < 0 || static_cast<std::size_t>(index) >= names_.size()) {
        throw ValidationError("strategy index " + std::to_string(index) + " out of range");
    }
    return names_[static_cast<std::size_t>(index)];
}

std::optional<int> StrategyList::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (names_[i] == name) return static_cast<int>(i);
    }
    return std::nullopt;
}

CorpusError::CorpusError(const std::string& what, std::size_t line)
    : ValidationError(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

void validate(const Conversation& c, std::size_t n_strategies) {
    if (c.turns.empty()) throw ValidationError("conversation '" + c.id + "' has no turns");
    for (const auto& t : c.turns) {
        if (normalize_whitespace(t.text).empty()) throw ValidationError("conversation '" + c.id + "' has an empty turn");
    }
    if (normalize_whitespace(c.target).empty()) throw ValidationError("conversation '" + c.id + "' has an empty target");
    if (c.gold_strategies.empty()) throw ValidationError("conversation '" + c.id + "' has no gold strategy");
    for (int s : c.gold_strategies) {
        if (s < 0 || static_cast<std::size_t>(s) >= n_strategies) {
            throw ValidationError("conversation '" + c.id + "' has strategy index " + std::to_string(s) + " >= " +
                                  std::to_string(n_strategies));
        }
    }
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

std::string normalize_whitespace(std::string_view text) { return detokenize(tokenize(text)); }

}  // namespace cts::corpus
