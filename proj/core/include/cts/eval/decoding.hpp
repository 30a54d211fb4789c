#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cts/model/cts_model.hpp"

namespace cts::eval {

struct DecodeOptions {
    std::size_t beam = 5;
    std::size_t max_len = 48;  // generated tokens, including </s>
};

struct Hypothesis {
    std::vector<int> tokens;  // generated ids, </s> included when finished
    double logp = 0.0;
    bool finished = false;

    /// Length-normalized log-probability (per generated token).
    double score() const { return tokens.empty() ? logp : logp / static_cast<double>(tokens.size()); }
    /// Tokens without the trailing </s>.
    std::vector<int> content() const;
};

/// Ids never produced by decoding: padding, <s>, <mask> and strategy tokens.
std::vector<bool> generation_blocklist(const corpus::Vocabulary& vocab);

/// Beam search for one source sequence. Expansion keeps the `beam` best
/// (hypothesis, token) pairs per step; pairs ending in </s> retire as finished.
/// Search ends when every slot has retired, `beam` hypotheses have finished,
/// or max_len is reached. The result is the best length-normalized finished
/// hypothesis; hypotheses still open at max_len compete with the finished
/// ones, so with no finished hypothesis the best unfinished one wins. Ties break
/// towards the earlier beam slot and then the smaller token id, so beam=1 is
/// exactly greedy decoding.
Hypothesis beam_search(const model::CtsModel& model, std::span<const int> src, const model::Prompt& prompt,
                       const DecodeOptions& options);

/// Argmax decoding, stopping at </s> or max_len.
Hypothesis greedy_decode(const model::CtsModel& model, std::span<const int> src, const model::Prompt& prompt,
                         std::size_t max_len);

enum class Setting { WithoutTS, GoldenTS, NeedTSPredict };

std::string_view to_string(Setting s);
std::optional<Setting> parse_setting(std::string_view s);

struct PipelineOutput {
    std::vector<model::StrategyWeight> strategies;  // what conditioned generation (empty for WithoutTS)
    std::vector<double> source_probs;               // p_s; filled for NeedTSPredict
    Hypothesis hypothesis;
};

/// Predict-then-generate for one context. Only the assembled source and,
/// for GoldenTS, the gold strategy are consulted.
PipelineOutput pipeline_generate(const model::CtsModel& model, std::span<const int> src, Setting setting, double theta,
                                 const DecodeOptions& options, std::optional<int> gold_strategy = std::nullopt);

/// Generation under an explicit strategy choice (single strategy -> weight 1).
Hypothesis generate_with_strategies(const model::CtsModel& model, std::span<const int> src,
                                    const std::vector<model::StrategyWeight>& strategies, const DecodeOptions& options);

/// p_s for each source row, computed without any target information.
std::vector<std::vector<double>> source_distribution(const model::CtsModel& model, const corpus::TokenMatrix& src);

/// p_t for each row from the gold response under the masked prompt.
std::vector<std::vector<double>> target_distribution(const model::CtsModel& model, const corpus::TokenMatrix& src,
                                                     const corpus::TokenMatrix& tgt);

}  // namespace cts::eval
