#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cts/corpus/conversation.hpp"

namespace cts::corpus {

enum class Imbalance { Uniform, Mild, Severe };

std::string_view to_string(Imbalance i);
std::optional<Imbalance> parse_imbalance(std::string_view s);

/// Class prior for each profile. Severe puts 0.6 on the first strategy and
/// spreads the rest as 1/k, mimicking the skew of real tutoring corpora.
std::vector<double> imbalance_profile(Imbalance profile, std::size_t n_strategies);

struct SyntheticOptions {
    std::size_t n = 2000;
    std::size_t n_strategies = 5;
    std::uint64_t seed = 7;
    // Probability that the student's cue phrase is drawn uniformly from all
    // strategies instead of matching the gold one. 1.0 makes cue and label independent.
    double cue_noise = 0.3;
    Imbalance imbalance = Imbalance::Severe;
};

struct SyntheticCorpus {
    StrategyList strategies;
    std::vector<Conversation> conversations;
};

/// Templated translation-tutoring dialogs. The last student turn opens with a
/// strategy-specific cue phrase; the tutor response is a fixed template of
/// (strategy, object word), so GoldenTS generation is exactly learnable.
SyntheticCorpus generate_synthetic(const SyntheticOptions& options);

/// Names used for the first strategies; later ones are "Move<k>".
std::string synthetic_strategy_name(std::size_t index);

}  // namespace cts::corpus
