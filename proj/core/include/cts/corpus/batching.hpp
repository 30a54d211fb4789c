#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cts::corpus {

/// Row-major id matrix; each row is right-padded with `pad` beyond lengths[row].
struct TokenMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<int> ids;
    std::vector<std::size_t> lengths;

    int at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
    std::span<const int> row(std::size_t r) const { return {ids.data() + r * cols, lengths[r]}; }

    static TokenMatrix pack(const std::vector<std::vector<int>>& sequences, int pad);
};

/// A conversation after source assembly and target encoding.
struct EncodedExample {
    std::string id;
    std::vector<int> src;  // assembled context ending in <mask>
    std::vector<int> tgt;  // gold response ids followed by </s>
    std::vector<int> golds;
};

struct Batch {
    std::vector<std::string> ids;
    TokenMatrix src;
    TokenMatrix tgt;
    std::vector<std::vector<int>> golds;

    std::size_t size() const { return ids.size(); }
    std::vector<int> primary_golds() const;
};

Batch collate(std::span<const EncodedExample> examples, int pad);

/// Length-bucketed batches whose padded source token count (rows x longest
/// source) stays within max_tokens. Batch order is shuffled with `seed`.
std::vector<Batch> make_batches(const std::vector<EncodedExample>& examples, std::size_t max_tokens, std::uint64_t seed,
                                int pad = 0);

}  // namespace cts::corpus
