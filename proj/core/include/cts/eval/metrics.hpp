#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cts::eval {

struct ClassScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;    // gold count
    std::size_t predicted = 0;  // prediction count
};

struct StrategyMetrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;  // unweighted mean over every class, absent ones scoring 0
    std::vector<ClassScores> per_class;
};

StrategyMetrics strategy_metrics(std::span<const int> golds, std::span<const int> predictions, std::size_t n_classes);

/// Most frequent label (smallest id on ties).
int majority_class(std::span<const int> labels, std::size_t n_classes);

std::size_t argmax(std::span<const double> values);

struct BleuStats {
    std::array<std::size_t, 4> matches{};
    std::array<std::size_t, 4> totals{};
    std::size_t hyp_len = 0;
    std::size_t ref_len = 0;

    BleuStats& operator+=(const BleuStats& other);
};

/// Clipped n-gram counts for one whitespace-tokenized sentence pair.
BleuStats sentence_stats(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference);

/// BLEU-4 in [0, 100] from aggregated counts. Zero match counts are smoothed
/// exponentially: the k-th order with no match uses 1 / (2^k * total).
double bleu_from_stats(const BleuStats& stats);

/// Corpus BLEU-4 over whitespace tokens, one reference per hypothesis.
double corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references);

struct BootstrapResult {
    double bleu_a = 0.0;
    double bleu_b = 0.0;
    double win_rate_a = 0.0;  // fraction of resamples where system A scores higher
};

/// Paired bootstrap resampling of corpus BLEU between two systems.
BootstrapResult paired_bootstrap(const std::vector<std::string>& system_a, const std::vector<std::string>& system_b,
                                 const std::vector<std::string>& references, std::size_t samples = 1000,
                                 std::uint64_t seed = 12345);

}  // namespace cts::eval
