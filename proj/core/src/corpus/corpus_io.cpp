#include "cts/corpus/corpus_io.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <set>

namespace cts::corpus {

using nlohmann::json;

std::string to_record(const Conversation& c, const StrategyList& strategies) {
    json turns = json::array();
    for (const auto& t : c.turns) turns.push_back({{"speaker", std::string(to_string(t.speaker))}, {"text", t.text}});
    json names = json::array();
    for (int s : c.gold_strategies) names.push_back(strategies.name(s));
    json rec = {{"id", c.id}, {"turns", std::move(turns)}, {"strategies", std::move(names)}, {"target", c.target}};
    return rec.dump();
}

Conversation parse_record(const std::string& line, const StrategyList& strategies, std::size_t line_no) {
    json rec;
    try {
        rec = json::parse(line);
    } catch (const json::parse_error& e) {
        throw CorpusError(std::string("malformed record: ") + e.what(), line_no);
    }
    auto require = [&](const char* key) -> const json& {
        if (!rec.is_object() || !rec.contains(key)) throw CorpusError(std::string("missing field '") + key + "'", line_no);
        return rec.at(key);
    };
    Conversation c;
    try {
        c.id = require("id").get<std::string>();
        for (const auto& t : require("turns")) {
            const auto speaker = parse_speaker(t.at("speaker").get<std::string>());
            if (!speaker) throw CorpusError("unknown speaker '" + t.at("speaker").get<std::string>() + "'", line_no);
            c.turns.push_back({*speaker, normalize_whitespace(t.at("text").get<std::string>())});
        }
        for (const auto& n : require("strategies")) {
            const auto name = n.get<std::string>();
            const auto idx = strategies.index_of(name);
            if (!idx) throw CorpusError("unknown strategy '" + name + "'", line_no);
            c.gold_strategies.push_back(*idx);
        }
        c.target = normalize_whitespace(require("target").get<std::string>());
    } catch (const json::exception& e) {
        throw CorpusError(std::string("bad field type: ") + e.what(), line_no);
    }
    try {
        validate(c, strategies.size());
    } catch (const ValidationError& e) {
        throw CorpusError(e.what(), line_no);
    }
    return c;
}

std::vector<Conversation> load_corpus(const std::string& path, const StrategyList& strategies) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot open corpus '" + path + "'");
    std::vector<Conversation> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (normalize_whitespace(line).empty()) continue;
        out.push_back(parse_record(line, strategies, line_no));
    }
    if (out.empty()) throw CorpusError("corpus '" + path + "' is empty");
    return out;
}

void save_corpus(const std::string& path, const std::vector<Conversation>& conversations, const StrategyList& strategies) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeError("cannot write corpus '" + path + "'");
    for (const auto& c : conversations) out << to_record(c, strategies) << '\n';
}

Split split_corpus(std::vector<Conversation> conversations, std::uint64_t seed) {
    const std::size_t n = conversations.size();
    if (n < 10) throw ValidationError("split_corpus needs at least 10 conversations, got " + std::to_string(n));
    std::sort(conversations.begin(), conversations.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    std::mt19937_64 rng(seed);
    // Fisher-Yates with an explicit draw so the permutation is library-independent.
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
        std::swap(conversations[i], conversations[j]);
    }
    const std::size_t n_valid = n / 10;
    const std::size_t n_test = n / 10;
    const std::size_t n_train = n - n_valid - n_test;
    Split s;
    auto first = std::make_move_iterator(conversations.begin());
    s.train.assign(first, first + static_cast<std::ptrdiff_t>(n_train));
    s.valid.assign(first + static_cast<std::ptrdiff_t>(n_train), first + static_cast<std::ptrdiff_t>(n_train + n_valid));
    s.test.assign(first + static_cast<std::ptrdiff_t>(n_train + n_valid), std::make_move_iterator(conversations.end()));
    return s;
}

}  // namespace cts::corpus
