#include <gtest/gtest.h>

#include <random>

#include "cts/error.hpp"
#include "cts/nn/layers.hpp"
#include "test_support.hpp"

namespace cts::nn {
namespace {

using ad::Tensor;
using cts::testing::expect_gradients_match;
using cts::testing::random_tensor;

LayerConfig small_config() {
    LayerConfig c;
    c.d_model = 8;
    c.n_heads = 2;
    c.d_ff = 12;
    c.n_enc_layers = 2;
    c.n_dec_layers = 2;
    c.dropout_p = 0.0;
    c.max_positions = 16;
    c.vocab_size = 20;
    return c;
}

std::size_t count(const std::vector<NamedTensor>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

TEST(LayerConfig, Validation) {
    LayerConfig c = small_config();
    EXPECT_NO_THROW(c.validate(10));
    EXPECT_THROW(c.validate(21), ValidationError);
    c.n_heads = 3;
    EXPECT_THROW(c.validate(), ValidationError);
    c = small_config();
    c.dropout_p = 1.0;
    EXPECT_THROW(c.validate(), ValidationError);
    c = small_config();
    c.n_dec_layers = 0;
    EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Activation, ParseRoundTrip) {
    for (auto a : {Activation::Gelu, Activation::Relu, Activation::Tanh}) EXPECT_EQ(parse_activation(to_string(a)), a);
    EXPECT_FALSE(parse_activation("swish").has_value());
}

TEST(Stacks, ParameterCountsMatchClosedForm) {
    std::mt19937_64 rng(1);
    const LayerConfig c = small_config();
    std::vector<NamedTensor> enc, dec;
    Encoder(c, rng).collect("e", enc);
    Decoder(c, rng).collect("d", dec);
    EXPECT_EQ(count(enc), encoder_parameter_count(c));
    EXPECT_EQ(count(dec), decoder_parameter_count(c));
    // d=8, ff=12: attention 4*(64+8)=288, ffn 8*12+12+12*8+8=212
    EXPECT_EQ(encoder_parameter_count(c), 2 * (288 + 4 * 8 + 212) + 2 * 8);
    EXPECT_EQ(decoder_parameter_count(c), 2 * (2 * 288 + 6 * 8 + 212) + 2 * 8);
}

TEST(Attention, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(2);
    AttentionParams p = AttentionParams::init(4, rng);
    Tensor q = random_tensor({2, 3, 4}, rng);
    Tensor kv = random_tensor({2, 2, 4}, rng);
    Tensor w = random_tensor({2, 3, 4}, rng);
    const std::vector<std::uint8_t> pad = {0, 0, 0, 1};
    expect_gradients_match([&] { return ad::sum(ad::mul(multi_head_attention(p, q, kv, kv, pad, false, 2), w)); },
                           {q, kv, p.q.weight, p.v.bias, p.o.weight});
}

TEST(Attention, FeedForwardAndLayerNormGradients) {
    std::mt19937_64 rng(3);
    FeedForward f = FeedForward::init(4, 6, rng);
    LayerNorm ln = LayerNorm::init(4);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({3, 4}, rng);
    expect_gradients_match([&] { return ad::sum(ad::mul(f(ln(x), Activation::Gelu), w)); }, {x, f.in.weight, f.out.bias, ln.gamma});
}

corpus::TokenMatrix ids(std::vector<std::vector<int>> rows) { return corpus::TokenMatrix::pack(rows, 0); }

TEST(Encoder, PaddingDoesNotChangeRealPositions) {
    std::mt19937_64 rng(4);
    const LayerConfig c = small_config();
    Encoder enc(c, rng);
    const Tensor table = random_tensor({20, 8}, rng);
    const Tensor pos = random_tensor({16, 8}, rng);
    const ForwardContext ctx;
    const auto alone = ids({{5, 6, 7}});
    const auto padded = ids({{5, 6, 7}, {8, 9, 10, 11, 12, 13}});
    const auto a = enc.forward(embed(alone, table, pos, ctx), alone.lengths, ctx).hidden.to_vector();
    const auto b = enc.forward(embed(padded, table, pos, ctx), padded.lengths, ctx).hidden.to_vector();
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(a[t * 8 + k], b[t * 8 + k], 1e-12);
}

TEST(Decoder, IsCausal) {
    std::mt19937_64 rng(5);
    const LayerConfig c = small_config();
    Encoder enc(c, rng);
    Decoder dec(c, rng);
    const Tensor table = random_tensor({20, 8}, rng);
    const Tensor pos = random_tensor({16, 8}, rng);
    const ForwardContext ctx;
    const auto src = ids({{5, 6, 7, 8}});
    const auto memory = enc.forward(embed(src, table, pos, ctx), src.lengths, ctx);
    const auto t1 = ids({{9, 10, 11, 12}});
    const auto t2 = ids({{9, 10, 15, 3}});
    const auto h1 = dec.forward(embed(t1, table, pos, ctx), t1.lengths, memory, ctx).to_vector();
    const auto h2 = dec.forward(embed(t2, table, pos, ctx), t2.lengths, memory, ctx).to_vector();
    for (std::size_t k = 0; k < 2 * 8; ++k) EXPECT_NEAR(h1[k], h2[k], 1e-12);  // positions 0 and 1 unchanged
    double diff = 0.0;
    for (std::size_t k = 2 * 8; k < 4 * 8; ++k) diff += std::abs(h1[k] - h2[k]);
    EXPECT_GT(diff, 1e-6);
}

TEST(Embedding, RejectsOutOfRangeIdsAndOverlongInputs) {
    std::mt19937_64 rng(6);
    const Tensor table = random_tensor({5, 4}, rng);
    const Tensor pos = random_tensor({3, 4}, rng);
    EXPECT_THROW(embed_tokens(ids({{1, 7}}), table), ValidationError);
    EXPECT_THROW(embed(ids({{1, 2, 3, 4}}), table, pos, {}), ValidationError);
}

TEST(ForwardContext, TrainingDropoutNeedsRng) {
    const ForwardContext ctx{true, 0.5, nullptr};
    EXPECT_THROW(ctx.dropout(Tensor::zeros({3})), ValidationError);
}

}  // namespace
}  // namespace cts::nn
