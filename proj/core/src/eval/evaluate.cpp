#include "cts/eval/evaluate.hpp"

#include <cstdio>
#include <sstream>

#include "cts/corpus/batching.hpp"
#include "cts/corpus/vocabulary.hpp"

namespace cts::eval {

using nlohmann::json;

std::string_view to_string(PredictFrom p) { return p == PredictFrom::Source ? "source" : "target"; }

std::optional<PredictFrom> parse_predict_from(std::string_view s) {
    if (s == "source") return PredictFrom::Source;
    if (s == "target") return PredictFrom::Target;
    return std::nullopt;
}

namespace {

/// Argmax predictions in input order, computed batch_size rows at a time.
std::vector<int> predict_all(const model::CtsModel& model, const std::vector<corpus::EncodedExample>& encoded, PredictFrom from,
                             std::size_t batch_size) {
    if (batch_size == 0) throw ValidationError("batch_size must be positive");
    std::vector<int> out;
    out.reserve(encoded.size());
    for (std::size_t begin = 0; begin < encoded.size(); begin += batch_size) {
        const std::size_t end = std::min(begin + batch_size, encoded.size());
        const auto batch = corpus::collate(std::span(encoded).subspan(begin, end - begin), corpus::Vocabulary::kPad);
        const auto dists = from == PredictFrom::Source ? source_distribution(model, batch.src)
                                                       : target_distribution(model, batch.src, batch.tgt);
        for (const auto& p : dists) out.push_back(static_cast<int>(argmax(p)));
    }
    return out;
}

}  // namespace

StrategyMetrics evaluate_prediction(const model::CtsModel& model, const std::vector<corpus::Conversation>& conversations,
                                    PredictFrom from, std::size_t batch_size) {
    const auto encoded = model.encode(conversations);
    const auto predictions = predict_all(model, encoded, from, batch_size);
    std::vector<int> golds;
    for (const auto& c : conversations) golds.push_back(c.primary_strategy());
    return strategy_metrics(golds, predictions, model.n_strategies());
}

EvalReport evaluate(const model::CtsModel& model, const std::vector<corpus::Conversation>& conversations,
                    const EvalOptions& options) {
    if (conversations.empty()) throw ValidationError("nothing to evaluate");
    EvalReport report;
    report.setting = options.setting;
    report.predict_from = options.predict_from;
    report.theta = options.theta;
    report.beam = options.decode.beam;
    report.n_examples = conversations.size();
    report.strategy_names = model.strategies().names();

    const auto encoded = model.encode(conversations);
    const auto predictions = predict_all(model, encoded, options.predict_from, options.batch_size);

    std::vector<int> golds;
    std::vector<std::string> hyps, refs;
    for (std::size_t i = 0; i < conversations.size(); ++i) {
        const auto& c = conversations[i];
        const auto out = pipeline_generate(model, encoded[i].src, options.setting, options.theta, options.decode,
                                           c.primary_strategy());
        ExampleOutput ex;
        ex.id = c.id;
        for (const auto& s : out.strategies) ex.strategies.push_back(model.strategies().name(s.strategy));
        ex.hypothesis = model.vocab().decode(out.hypothesis.content());
        ex.reference = corpus::normalize_whitespace(c.target);
        ex.gold = c.primary_strategy();
        ex.predicted = predictions[i];
        golds.push_back(ex.gold);
        hyps.push_back(ex.hypothesis);
        refs.push_back(ex.reference);
        report.examples.push_back(std::move(ex));
    }
    report.bleu = corpus_bleu(hyps, refs);
    report.strategy = strategy_metrics(golds, predictions, model.n_strategies());
    return report;
}

json to_json(const EvalReport& r) {
    json classes = json::array();
    for (std::size_t c = 0; c < r.strategy.per_class.size(); ++c) {
        const auto& s = r.strategy.per_class[c];
        classes.push_back({{"strategy", r.strategy_names.at(c)},
                           {"precision", s.precision},
                           {"recall", s.recall},
                           {"f1", s.f1},
                           {"support", s.support},
                           {"predicted", s.predicted}});
    }
    return {{"setting", std::string(to_string(r.setting))},
            {"predict_from", std::string(to_string(r.predict_from))},
            {"theta", r.theta},
            {"beam", r.beam},
            {"examples", r.n_examples},
            {"bleu", r.bleu},
            {"bleu_tokenization", "whitespace"},
            {"accuracy", r.strategy.accuracy},
            {"macro_f1", r.strategy.macro_f1},
            {"per_class", std::move(classes)}};
}

std::string format_table(const EvalReport& r) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "setting: %s   strategy metrics from: %s   examples: %zu   beam: %zu   theta: %.2f\n",
                  std::string(to_string(r.setting)).c_str(), std::string(to_string(r.predict_from)).c_str(), r.n_examples,
                  r.beam, r.theta);
    os << line;
    std::snprintf(line, sizeof line, "BLEU %.2f   accuracy %.2f   macro-F1 %.2f\n", r.bleu, 100.0 * r.strategy.accuracy,
                  100.0 * r.strategy.macro_f1);
    os << line;
    std::snprintf(line, sizeof line, "%-20s %9s %9s %9s %8s %9s\n", "strategy", "precision", "recall", "f1", "support",
                  "predicted");
    os << line;
    for (std::size_t c = 0; c < r.strategy.per_class.size(); ++c) {
        const auto& s = r.strategy.per_class[c];
        std::snprintf(line, sizeof line, "%-20s %9.4f %9.4f %9.4f %8zu %9zu\n", r.strategy_names.at(c).c_str(), s.precision,
                      s.recall, s.f1, s.support, s.predicted);
        os << line;
    }
    return os.str();
}

std::string per_example_jsonl(const EvalReport& r) {
    std::string out;
    for (const auto& e : r.examples) {
        out += json{{"id", e.id},
                    {"setting", std::string(to_string(r.setting))},
                    {"strategies", e.strategies},
                    {"hypothesis", e.hypothesis},
                    {"reference", e.reference}}
                   .dump();
        out += '\n';
    }
    return out;
}

}  // namespace cts::eval
