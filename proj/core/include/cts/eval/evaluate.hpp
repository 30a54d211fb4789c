#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "cts/corpus/conversation.hpp"
#include "cts/eval/decoding.hpp"
#include "cts/eval/metrics.hpp"
#include "cts/model/cts_model.hpp"

namespace cts::eval {

enum class PredictFrom { Source, Target };

std::string_view to_string(PredictFrom p);
std::optional<PredictFrom> parse_predict_from(std::string_view s);

struct EvalOptions {
    Setting setting = Setting::NeedTSPredict;
    PredictFrom predict_from = PredictFrom::Source;  // which distribution the strategy metrics use
    double theta = 0.3;
    DecodeOptions decode;
    std::size_t batch_size = 32;  // rows per strategy-distribution forward pass
};

struct ExampleOutput {
    std::string id;
    std::vector<std::string> strategies;  // names that conditioned generation
    std::string hypothesis;
    std::string reference;
    int gold = 0;
    int predicted = 0;  // argmax of the distribution selected by predict_from
};

struct EvalReport {
    Setting setting = Setting::NeedTSPredict;
    PredictFrom predict_from = PredictFrom::Source;
    double theta = 0.3;
    std::size_t beam = 5;
    std::size_t n_examples = 0;
    std::vector<std::string> strategy_names;
    StrategyMetrics strategy;
    double bleu = 0.0;
    std::vector<ExampleOutput> examples;
};

/// Generates a response per conversation under the configured setting, scores
/// corpus BLEU against the gold responses, and computes strategy accuracy and
/// macro-F1 from the source (or, diagnostically, target) distribution.
EvalReport evaluate(const model::CtsModel& model, const std::vector<corpus::Conversation>& conversations,
                    const EvalOptions& options);

/// Strategy metrics only; no decoding.
StrategyMetrics evaluate_prediction(const model::CtsModel& model, const std::vector<corpus::Conversation>& conversations,
                                    PredictFrom from, std::size_t batch_size = 32);

nlohmann::json to_json(const EvalReport& report);
std::string format_table(const EvalReport& report);
/// One JSON object per line: {id, setting, strategies, hypothesis, reference}.
std::string per_example_jsonl(const EvalReport& report);

}  // namespace cts::eval
