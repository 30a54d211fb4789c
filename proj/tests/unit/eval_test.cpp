#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "cts/eval/decoding.hpp"
#include "cts/eval/evaluate.hpp"
#include "cts/eval/metrics.hpp"
#include "test_support.hpp"

namespace cts::eval {
namespace {

using corpus::Vocabulary;
using cts::testing::tiny_config;
using cts::testing::toy_corpus;

TEST(Bleu, IdenticalIsHundredAndEmptyIsZero) {
    EXPECT_NEAR(corpus_bleu({"the cat sat on the mat"}, {"the cat sat on the mat"}), 100.0, 1e-12);
    EXPECT_EQ(corpus_bleu({""}, {"the cat"}), 0.0);
    EXPECT_THROW(corpus_bleu({}, {}), ValidationError);
    EXPECT_THROW(corpus_bleu({"a"}, {"a", "b"}), ValidationError);
}

struct BleuCase {
    std::vector<std::string> hyp, ref;
    double expected;
};

TEST(Bleu, MatchesReferenceImplementation) {
    const std::vector<BleuCase> cases = {
        {{"the cat sat on the mat"}, {"the cat sat on a mat"}, 53.7284965911771},
        {{"the cat"}, {"the cat sat on the mat"}, 8.047084086794415},
        {{"the cat sat on the mat", "a dog ran"}, {"the cat sat on a mat", "the dog ran away fast"}, 39.507465520836014},
        {{"the the the the"}, {"the cat"}, 15.973577606156814},
        {{"the cat sat on the mat today again"}, {"the cat sat on the mat"}, 68.03749333171201},
    };
    for (const auto& c : cases) EXPECT_NEAR(corpus_bleu(c.hyp, c.ref), c.expected, 1e-9) << c.hyp.front();
}

TEST(Bleu, StaysWithinBoundsOnRandomSentences) {
    std::mt19937_64 rng(17);
    const std::vector<std::string> words = {"a", "b", "c", "d", "e"};
    for (int trial = 0; trial < 100; ++trial) {
        auto sentence = [&] {
            std::string s;
            for (std::size_t i = 0, n = rng() % 7; i < n; ++i) s += (i ? " " : "") + words[rng() % words.size()];
            return s;
        };
        const double b = corpus_bleu({sentence(), sentence()}, {sentence(), sentence()});
        EXPECT_GE(b, 0.0);
        EXPECT_LE(b, 100.0 + 1e-9);
    }
}

TEST(Bleu, CorpusScoreIsOrderInvariant) {
    const std::vector<std::string> h = {"the cat sat on the mat", "a dog ran", "hello there"};
    const std::vector<std::string> r = {"the cat sat on a mat", "the dog ran away fast", "hello there friend"};
    std::vector<std::string> h2(h.rbegin(), h.rend()), r2(r.rbegin(), r.rend());
    EXPECT_NEAR(corpus_bleu(h, r), corpus_bleu(h2, r2), 1e-12);
}

TEST(Bootstrap, DeterministicAndOrdered) {
    const std::vector<std::string> refs = {"a b c d", "e f g h", "i j k l", "m n o p"};
    const std::vector<std::string> bad = {"a x", "y f", "i z", "q"};
    const auto r = paired_bootstrap(refs, bad, refs, 200, 3);
    EXPECT_NEAR(r.bleu_a, 100.0, 1e-12);
    EXPECT_EQ(r.win_rate_a, 1.0);
    const auto same = paired_bootstrap(bad, bad, refs, 200, 3);
    EXPECT_EQ(same.win_rate_a, 0.0);
    EXPECT_EQ(paired_bootstrap(bad, refs, refs, 50, 9).win_rate_a, paired_bootstrap(bad, refs, refs, 50, 9).win_rate_a);
}

TEST(StrategyMetrics, MajorityPredictorOnImbalancedLabels) {
    const std::vector<int> gold = {0, 0, 0, 0, 1};
    const std::vector<int> pred(5, 0);
    const auto m = strategy_metrics(gold, pred, 2);
    EXPECT_NEAR(m.accuracy, 0.8, 1e-15);
    EXPECT_NEAR(m.macro_f1, 0.4444444444444445, 1e-15);
    EXPECT_EQ(m.per_class[1].f1, 0.0);
    EXPECT_EQ(m.per_class[0].support, 4u);
    EXPECT_EQ(m.per_class[0].predicted, 5u);
}

TEST(StrategyMetrics, PerfectAndAbsentClasses) {
    const std::vector<int> gold = {0, 1, 1};
    EXPECT_DOUBLE_EQ(strategy_metrics(gold, gold, 2).macro_f1, 1.0);
    // A third class that never occurs still counts in the macro average.
    EXPECT_NEAR(strategy_metrics(gold, gold, 3).macro_f1, 2.0 / 3.0, 1e-15);
    EXPECT_THROW(strategy_metrics(gold, std::vector<int>{0, 1}, 2), ValidationError);
    EXPECT_THROW(strategy_metrics(std::vector<int>{}, std::vector<int>{}, 2), ValidationError);
    EXPECT_THROW(strategy_metrics(gold, std::vector<int>{0, 1, 5}, 2), ValidationError);
}

TEST(StrategyMetrics, InvariantToRelabelingAndOrder) {
    std::mt19937_64 rng(5);
    std::vector<int> gold(60), pred(60);
    for (std::size_t i = 0; i < gold.size(); ++i) {
        gold[i] = static_cast<int>(rng() % 4);
        pred[i] = rng() % 3 == 0 ? static_cast<int>(rng() % 4) : gold[i];
    }
    const auto base = strategy_metrics(gold, pred, 4);
    const std::vector<int> relabel = {2, 0, 3, 1};
    std::vector<int> g2, p2;
    for (std::size_t i = gold.size(); i-- > 0;) {
        g2.push_back(relabel[gold[i]]);
        p2.push_back(relabel[pred[i]]);
    }
    const auto moved = strategy_metrics(g2, p2, 4);
    EXPECT_NEAR(moved.macro_f1, base.macro_f1, 1e-15);
    EXPECT_NEAR(moved.accuracy, base.accuracy, 1e-15);
}

TEST(StrategyMetrics, MajorityAndArgmaxBreakTiesLow) {
    EXPECT_EQ(majority_class(std::vector<int>{2, 1, 2, 1}, 3), 1);
    EXPECT_EQ(argmax(std::vector<double>{0.2, 0.4, 0.4}), 1u);
}

TEST(Setting, ParseRoundTrip) {
    for (auto s : {Setting::WithoutTS, Setting::GoldenTS, Setting::NeedTSPredict}) EXPECT_EQ(parse_setting(to_string(s)), s);
    EXPECT_FALSE(parse_setting("psychic").has_value());
}

class DecodingTest : public ::testing::Test {
protected:
    DecodingTest() : toy_(toy_corpus(12, 3, 6)), model_(tiny_config(), toy_.vocab, toy_.data.strategies, 4) {}

    std::vector<int> source(std::size_t i) const { return model_.assemble_source(toy_.data.conversations.at(i)); }

    cts::testing::Toy toy_;
    model::CtsModel model_;
};

TEST_F(DecodingTest, BlocklistCoversControlTokens) {
    const auto block = generation_blocklist(model_.vocab());
    EXPECT_TRUE(block[Vocabulary::kPad]);
    EXPECT_TRUE(block[Vocabulary::kBos]);
    EXPECT_TRUE(block[Vocabulary::kMask]);
    EXPECT_FALSE(block[Vocabulary::kEos]);
    EXPECT_FALSE(block[Vocabulary::kUnk]);
    for (std::size_t s = 0; s < model_.n_strategies(); ++s) EXPECT_TRUE(block[model_.vocab().strategy_token(static_cast<int>(s))]);
}

TEST_F(DecodingTest, BeamOfOneIsGreedy) {
    for (std::size_t i = 0; i < 4; ++i) {
        const auto src = source(i);
        const model::Prompt prompt = model::GoldStrategy{{static_cast<int>(i % 3)}};
        const auto beam = beam_search(model_, src, prompt, {1, 10});
        const auto greedy = greedy_decode(model_, src, prompt, 10);
        EXPECT_EQ(beam.tokens, greedy.tokens);
        EXPECT_NEAR(beam.logp, greedy.logp, 1e-12);
        EXPECT_EQ(beam.finished, greedy.finished);
    }
}

TEST_F(DecodingTest, FullWidthSingleStepPicksTheArgmax) {
    const auto src = source(0);
    const model::Prompt prompt = model::MaskedPrompt{};
    const auto wide = beam_search(model_, src, prompt, {model_.vocab().size(), 1});
    const auto greedy = greedy_decode(model_, src, prompt, 1);
    ASSERT_EQ(wide.tokens.size(), 1u);
    EXPECT_EQ(wide.tokens, greedy.tokens);
    EXPECT_FALSE(generation_blocklist(model_.vocab())[wide.tokens[0]]);
}

TEST_F(DecodingTest, OutputsNeverContainBlockedTokens) {
    const auto block = generation_blocklist(model_.vocab());
    for (std::size_t i = 0; i < 3; ++i) {
        const auto h = beam_search(model_, source(i), model::MaskedPrompt{}, {3, 12});
        EXPECT_LE(h.tokens.size(), 12u);
        for (int t : h.tokens) EXPECT_FALSE(block[t]);
        if (h.finished) EXPECT_EQ(h.tokens.back(), Vocabulary::kEos);
        EXPECT_EQ(h.content().size(), h.finished ? h.tokens.size() - 1 : h.tokens.size());
    }
}

TEST_F(DecodingTest, PipelineUsesOnlyTheSourceForPrediction) {
    const auto src = source(1);
    const DecodeOptions opts{2, 8};
    const auto none = pipeline_generate(model_, src, Setting::WithoutTS, 0.3, opts);
    EXPECT_TRUE(none.strategies.empty());
    EXPECT_THROW(pipeline_generate(model_, src, Setting::GoldenTS, 0.3, opts), ValidationError);
    const auto golden = pipeline_generate(model_, src, Setting::GoldenTS, 0.3, opts, 2);
    ASSERT_EQ(golden.strategies.size(), 1u);
    EXPECT_EQ(golden.strategies[0].strategy, 2);

    const auto predicted = pipeline_generate(model_, src, Setting::NeedTSPredict, 0.3, opts);
    const auto batch = corpus::TokenMatrix::pack({source(0), src}, Vocabulary::kPad);
    const auto rows = source_distribution(model_, batch);
    ASSERT_EQ(predicted.source_probs.size(), model_.n_strategies());
    for (std::size_t k = 0; k < rows[1].size(); ++k) EXPECT_NEAR(predicted.source_probs[k], rows[1][k], 1e-12);
    const auto expected = model::select_strategies(predicted.source_probs, 0.3);
    ASSERT_EQ(predicted.strategies.size(), expected.size());
    for (std::size_t k = 0; k < expected.size(); ++k) EXPECT_EQ(predicted.strategies[k].strategy, expected[k].strategy);
    const auto direct = generate_with_strategies(model_, src, expected, opts);
    EXPECT_EQ(predicted.hypothesis.tokens, direct.tokens);
}

TEST_F(DecodingTest, EvaluateReportsAreConsistentAndOrderInvariant) {
    EvalOptions o;
    o.decode = {2, 6};
    o.batch_size = 5;
    auto convs = toy_.data.conversations;
    const auto report = evaluate(model_, convs, o);
    EXPECT_EQ(report.n_examples, convs.size());
    EXPECT_EQ(report.examples.size(), convs.size());
    EXPECT_GE(report.bleu, 0.0);
    EXPECT_LE(report.bleu, 100.0);
    EXPECT_EQ(report.strategy_names.size(), 3u);

    std::reverse(convs.begin(), convs.end());
    const auto reversed = evaluate(model_, convs, o);
    EXPECT_NEAR(reversed.bleu, report.bleu, 1e-9);
    EXPECT_NEAR(reversed.strategy.macro_f1, report.strategy.macro_f1, 1e-12);
    EXPECT_NEAR(evaluate_prediction(model_, convs, PredictFrom::Source, 3).macro_f1, report.strategy.macro_f1, 1e-12);

    const auto j = to_json(report);
    EXPECT_EQ(j.at("setting"), "need_ts_predict");
    EXPECT_EQ(j.at("bleu_tokenization"), "whitespace");
    std::istringstream lines(per_example_jsonl(report));
    std::size_t n = 0;
    for (std::string line; std::getline(lines, line);) {
        const auto row = nlohmann::json::parse(line);
        EXPECT_TRUE(row.contains("hypothesis"));
        EXPECT_TRUE(row.contains("reference"));
        ++n;
    }
    EXPECT_EQ(n, convs.size());
    EXPECT_NE(format_table(report).find("BLEU"), std::string::npos);
}

}  // namespace
}  // namespace cts::eval
