#include "cts/corpus/batching.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "cts/error.hpp"

namespace cts::corpus {

TokenMatrix TokenMatrix::pack(const std::vector<std::vector<int>>& sequences, int pad) {
    TokenMatrix m;
    m.rows = sequences.size();
    for (const auto& s : sequences) m.cols = std::max(m.cols, s.size());
    m.ids.assign(m.rows * m.cols, pad);
    for (std::size_t r = 0; r < m.rows; ++r) {
        std::copy(sequences[r].begin(), sequences[r].end(), m.ids.begin() + static_cast<std::ptrdiff_t>(r * m.cols));
        m.lengths.push_back(sequences[r].size());
    }
    return m;
}

std::vector<int> Batch::primary_golds() const {
    std::vector<int> out;
    out.reserve(golds.size());
    for (const auto& g : golds) out.push_back(g.front());
    return out;
}

Batch collate(std::span<const EncodedExample> examples, int pad) {
    Batch b;
    std::vector<std::vector<int>> src, tgt;
    for (const auto& e : examples) {
        if (e.golds.empty()) throw ValidationError("example '" + e.id + "' has no gold strategy");
        b.ids.push_back(e.id);
        src.push_back(e.src);
        tgt.push_back(e.tgt);
        b.golds.push_back(e.golds);
    }
    b.src = TokenMatrix::pack(src, pad);
    b.tgt = TokenMatrix::pack(tgt, pad);
    return b;
}

std::vector<Batch> make_batches(const std::vector<EncodedExample>& examples, std::size_t max_tokens, std::uint64_t seed,
                                int pad) {
    for (const auto& e : examples) {
        if (e.src.size() > max_tokens) {
            throw ValidationError("example '" + e.id + "' has " + std::to_string(e.src.size()) +
                                  " source tokens, more than max_tokens=" + std::to_string(max_tokens));
        }
    }
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return examples[a].src.size() < examples[b].src.size(); });

    std::vector<Batch> batches;
    std::vector<EncodedExample> current;
    std::size_t longest = 0;
    for (std::size_t idx : order) {
        const auto& e = examples[idx];
        const std::size_t next_longest = std::max(longest, e.src.size());
        if (!current.empty() && (current.size() + 1) * next_longest > max_tokens) {
            batches.push_back(collate(current, pad));
            current.clear();
            longest = 0;
        }
        current.push_back(e);
        longest = std::max(longest, e.src.size());
    }
    if (!current.empty()) batches.push_back(collate(current, pad));
    for (std::size_t i = batches.size(); i > 1; --i) std::swap(batches[i - 1], batches[static_cast<std::size_t>(rng() % i)]);
    return batches;
}

}  // namespace cts::corpus
