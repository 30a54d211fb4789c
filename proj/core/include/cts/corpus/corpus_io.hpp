#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cts/corpus/conversation.hpp"

namespace cts::corpus {

/// Reads a line-delimited corpus. Each non-blank line is a record
///   {"id": str, "turns": [{"speaker": "tutor"|"student", "text": str}, ...],
///    "strategies": [name, ...], "target": str}
/// Strategy names resolve against `strategies`; any problem raises CorpusError
/// carrying the offending line number.
std::vector<Conversation> load_corpus(const std::string& path, const StrategyList& strategies);

void save_corpus(const std::string& path, const std::vector<Conversation>& conversations, const StrategyList& strategies);

/// Serializes one record as a single line (no trailing newline).
std::string to_record(const Conversation& c, const StrategyList& strategies);
Conversation parse_record(const std::string& line, const StrategyList& strategies, std::size_t line_no = 0);

struct Split {
    std::vector<Conversation> train;
    std::vector<Conversation> valid;
    std::vector<Conversation> test;
};

/// 8:1:1 partition. Conversations are ordered by id and shuffled with `seed`,
/// so the result does not depend on input order.
Split split_corpus(std::vector<Conversation> conversations, std::uint64_t seed);

}  // namespace cts::corpus
