#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cts/autodiff/ops.hpp"
#include "cts/objectives/losses.hpp"
#include "test_support.hpp"

namespace cts::objectives {
namespace {

using ad::Tensor;
using corpus::Vocabulary;
using cts::testing::tiny_config;
using cts::testing::toy_corpus;

Tensor probs(std::size_t rows, std::vector<double> v) {
    const std::size_t cols = v.size() / rows;
    return Tensor::from({rows, cols}, std::move(v));
}

TEST(GenerationLoss, CertainPredictionIsZeroAndUniformIsLogV) {
    const std::vector<int> gold = {1, 2};
    const Tensor certain = Tensor::from({1, 2, 3}, {-1e3, 1e3, -1e3, -1e3, -1e3, 1e3});
    EXPECT_NEAR(generation_loss(certain, gold, 0).item(), 0.0, 1e-12);
    const Tensor uniform = Tensor::zeros({1, 2, 5});
    EXPECT_NEAR(generation_loss(uniform, gold, 0).item(), std::log(5.0), 1e-12);
}

TEST(GenerationLoss, TwoTokenOracle) {
    const Tensor logits = Tensor::from({2, 3}, {2, 0, -1, 0.5, 1.5, 0});
    const std::vector<int> gold = {0, 2};
    EXPECT_NEAR(generation_loss(logits, gold, -1).item(), 1.0671074018321152, 1e-12);
}

TEST(GenerationLoss, PadPositionsAreSkippedAndAllPadIsAnError) {
    const Tensor logits = Tensor::from({3, 3}, {2, 0, -1, 9, 9, -9, 0.5, 1.5, 0});
    EXPECT_NEAR(generation_loss(logits, std::vector<int>{0, -1, 2}, -1).item(), 1.0671074018321152, 1e-12);
    EXPECT_THROW(generation_loss(logits, std::vector<int>{-1, -1, -1}, -1), ValidationError);
    EXPECT_THROW(generation_loss(logits, std::vector<int>{0, 1}, -1), ShapeError);
}

TEST(SelfDistillation, Identities) {
    const Tensor one_hot = probs(1, {0.0, 1.0});
    EXPECT_EQ(self_distillation_loss(one_hot, one_hot).item(), 0.0);
    const Tensor uniform = probs(1, {0.5, 0.5});
    EXPECT_NEAR(self_distillation_loss(uniform, uniform).item(), std::log(2.0), 1e-12);
    EXPECT_NEAR(self_distillation_loss(probs(1, {0.7, 0.3}), probs(1, {0.6, 0.4})).item(), 0.63246515619844, 1e-12);
    EXPECT_NEAR(self_distillation_loss(probs(1, {0.7, 0.3}), probs(1, {0.6, 0.4}), DistillDirection::Conventional).item(),
                0.695594088093614, 1e-12);
}

TEST(SelfDistillation, RejectsNonSimplexInput) {
    EXPECT_THROW(self_distillation_loss(probs(1, {0.7, 0.4}), probs(1, {0.5, 0.5})), DomainError);
    EXPECT_THROW(self_distillation_loss(probs(1, {1.2, -0.2}), probs(1, {0.5, 0.5})), DomainError);
    EXPECT_NO_THROW(self_distillation_loss(probs(1, {0.7, 0.3 + 5e-7}), probs(1, {0.5, 0.5})));
}

TEST(SelfDistillation, ClampedTeacherZeroStaysFinite) {
    const double v = self_distillation_loss(probs(1, {0.5, 0.5}), probs(1, {1.0, 0.0})).item();
    EXPECT_NEAR(v, -0.5 * std::log(1e-9), 1e-9);
}

TEST(SelfDistillation, NonNegativeOnRandomSimplices) {
    std::mt19937_64 rng(8);
    std::gamma_distribution<double> g(0.3, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> a(4), b(4);
        double sa = 0, sb = 0;
        for (int i = 0; i < 4; ++i) {
            sa += a[i] = g(rng) + 1e-12;
            sb += b[i] = g(rng) + 1e-12;
        }
        for (int i = 0; i < 4; ++i) {
            a[i] /= sa;
            b[i] /= sb;
        }
        for (auto dir : {DistillDirection::AsWritten, DistillDirection::Conventional}) {
            EXPECT_GE(self_distillation_loss(probs(1, a), probs(1, b), dir).item(), 0.0);
        }
    }
}

TEST(PredictionLoss, Identities) {
    const Tensor gold_hot = probs(1, {0.0, 0.0, 1.0});
    EXPECT_EQ(prediction_loss(gold_hot, gold_hot, {{2}}, 3.0).item(), 0.0);
    const Tensor uniform = probs(1, {0.25, 0.25, 0.25, 0.25});
    EXPECT_NEAR(prediction_loss(uniform, uniform, {{1}}, 0.0).item(), 2.772588722239781, 1e-12);
    const Tensor ps = probs(1, {0.7, 0.3});
    const Tensor pt = probs(1, {0.6, 0.4});
    EXPECT_NEAR(prediction_loss(ps, pt, {{1}}, 1.0).item(), 2.752728692398531, 1e-12);
    EXPECT_NEAR(prediction_loss(ps, pt, {{1}}, 1.0).item(),
                hard_label_loss(ps, pt, {{1}}).item() + self_distillation_loss(ps, pt).item(), 1e-15);
}

TEST(PredictionLoss, InvalidGoldIsRejected) {
    const Tensor p = probs(1, {0.5, 0.5});
    EXPECT_THROW(prediction_loss(p, p, {{2}}, 1.0), ValidationError);
    EXPECT_THROW(prediction_loss(p, p, {{-1}}, 1.0), ValidationError);
    EXPECT_THROW(prediction_loss(p, p, {{}}, 1.0), ValidationError);
}

TEST(PredictionLoss, MultipleGoldsSumHardTerms) {
    const Tensor p = probs(1, {0.5, 0.25, 0.25});
    const double expected = -2.0 * (std::log(0.5) + std::log(0.25));
    EXPECT_NEAR(hard_label_loss(p, p, {{0, 1}}).item(), expected, 1e-12);
}

TEST(Options, ParseAndValidate) {
    EXPECT_EQ(parse_distill_direction("conventional"), DistillDirection::Conventional);
    EXPECT_FALSE(parse_distill_direction("backwards").has_value());
    LossWeights w;
    w.gamma = -1.0;
    EXPECT_THROW(w.validate(), ValidationError);
}

class JointLossTest : public ::testing::Test {
protected:
    JointLossTest() : toy_(toy_corpus(8, 2, 5)), model_(tiny_config(), toy_.vocab, toy_.data.strategies, 3) {
        const auto ex = model_.encode(toy_.data.conversations);
        batch_ = corpus::collate(std::span(ex).first(3), Vocabulary::kPad);
    }

    LossBundle run(LossWeights w, bool detach = true, JointLossTrace* trace = nullptr) {
        ObjectiveOptions o;
        o.weights = w;
        o.detach_teacher = detach;
        return joint_loss(model_, batch_, o, model::CtsModel::eval_context(), trace);
    }

    cts::testing::Toy toy_;
    model::CtsModel model_;
    corpus::Batch batch_;
};

TEST_F(JointLossTest, GenerationOnlyWeightsReduceToGenerationLoss) {
    const auto bundle = run({1.0, 0.0, 0.0});
    const auto ctx = model::CtsModel::eval_context();
    const auto enc = model_.encode_source(batch_.src, ctx);
    const auto pass = model_.forward_target(enc, batch_.tgt, model::GoldStrategy{batch_.primary_golds()}, ctx);
    const double gen = generation_loss(pass.logits, next_token_labels(pass, Vocabulary::kPad), Vocabulary::kPad).item();
    EXPECT_NEAR(bundle.total_value, gen, 1e-12);
}

TEST_F(JointLossTest, TotalIsReconstructableAndLinearInWeights) {
    const auto b = run({1.0, 1.0, 0.2});
    EXPECT_NEAR(b.total_value, b.gen_target + 0.2 * b.gen_source + 1.0 * b.pred, 1e-12);
    EXPECT_GE(b.sd, 0.0);
    EXPECT_GE(b.pred, 0.0);
    const auto scaled = run({1.0, 3.0, 0.5});
    EXPECT_NEAR(scaled.gen_target, b.gen_target, 1e-12);
    EXPECT_NEAR(scaled.total_value, b.gen_target + 0.5 * b.gen_source + 3.0 * b.pred, 1e-12);
    const auto no_sd = run({0.0, 1.0, 0.2});
    EXPECT_NEAR(b.pred - no_sd.pred, b.sd, 1e-12);
    EXPECT_EQ(b.examples, 3u);
}

TEST_F(JointLossTest, TeacherPassNeverSeesTheGoldStrategyToken) {
    JointLossTrace trace;
    run({}, true, &trace);
    const auto& ids = trace.teacher_inputs;
    ASSERT_EQ(ids.rows, 3u);
    for (std::size_t r = 0; r < ids.rows; ++r) {
        EXPECT_EQ(ids.at(r, 0), Vocabulary::kMask);
        for (std::size_t c = 0; c < ids.cols; ++c) EXPECT_FALSE(model_.vocab().is_strategy_token(ids.at(r, c)));
    }
}

// Target-decoder weights reach the distillation term only through p_t.
TEST_F(JointLossTest, DetachedTeacherGivesZeroDistillationGradientToTargetDecoder) {
    auto sd_grad_norm = [&](bool detach) {
        for (auto p : model_.parameters()) p.tensor.zero_grad();
        ObjectiveOptions o;
        o.detach_teacher = detach;
        const auto ctx = model::CtsModel::eval_context();
        const auto enc = model_.encode_source(batch_.src, ctx);
        const auto masked = model_.forward_target(enc, batch_.tgt, model::MaskedPrompt{}, ctx, false);
        const Tensor p_t = model_.predict_strategy(model_.eos_representation(masked), model::DistributionSource::FromTarget).probs;
        const auto src_pass = model_.forward_source(enc, batch_.src, ctx, false);
        const Tensor p_s = model_.predict_strategy(model_.eos_representation(src_pass), model::DistributionSource::FromSource).probs;
        self_distillation_loss(p_s, detach ? p_t.detach() : p_t).backward();
        double norm = 0.0;
        for (const auto& p : model_.parameters()) {
            if (p.name.rfind("target_decoder.", 0) != 0 || !p.tensor.has_grad()) continue;
            for (double g : p.tensor.grad()) norm += std::abs(g);
        }
        return norm;
    };
    EXPECT_EQ(sd_grad_norm(true), 0.0);
    EXPECT_GT(sd_grad_norm(false), 0.0);
}

TEST_F(JointLossTest, GradientMatchesFiniteDifferences) {
    ObjectiveOptions o;
    o.detach_teacher = false;
    auto loss = [&] { return joint_loss(model_, batch_, o, model::CtsModel::eval_context()).total; };
    const auto params = model_.parameters();
    for (auto p : params) p.tensor.zero_grad();
    loss().backward();
    std::mt19937_64 rng(21);
    for (int i = 0; i < 12; ++i) {
        auto p = params[rng() % params.size()].tensor;
        const std::size_t j = rng() % p.numel();
        const double analytic = p.has_grad() ? p.grad()[j] : 0.0;
        auto data = p.mutable_data();
        const double saved = data[j];
        data[j] = saved + 1e-5;
        const double up = loss().item();
        data[j] = saved - 1e-5;
        const double down = loss().item();
        data[j] = saved;
        const double numeric = (up - down) / 2e-5;
        EXPECT_NEAR(analytic, numeric, 1e-6 + 1e-4 * std::abs(numeric));
    }
}

}  // namespace
}  // namespace cts::objectives
