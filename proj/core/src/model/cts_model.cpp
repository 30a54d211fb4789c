#include "cts/model/cts_model.hpp"

#include <algorithm>
#include <cmath>

#include "cts/autodiff/ops.hpp"
#include "cts/error.hpp"

namespace cts::model {

using namespace cts::ad;
using corpus::TokenMatrix;
using corpus::Vocabulary;

std::vector<StrategyWeight> select_strategies(std::span<const double> probs, double theta) {
    if (probs.empty()) throw ValidationError("select_strategies: empty distribution");
    if (!(theta > 0.0 && theta <= 1.0)) throw ValidationError("select_strategies: theta must lie in (0, 1]");
    std::vector<StrategyWeight> out;
    double mass = 0.0;
    for (std::size_t j = 0; j < probs.size(); ++j) {
        if (probs[j] >= theta) {
            out.push_back({static_cast<int>(j), probs[j]});
            mass += probs[j];
        }
    }
    if (out.empty()) {
        const auto best = std::max_element(probs.begin(), probs.end()) - probs.begin();
        return {{static_cast<int>(best), 1.0}};
    }
    for (auto& w : out) w.weight /= mass;
    return out;
}

std::vector<double> mixture_row(const std::vector<StrategyWeight>& selected, std::size_t n_strategies) {
    std::vector<double> row(n_strategies, 0.0);
    for (const auto& s : selected) {
        if (s.strategy < 0 || static_cast<std::size_t>(s.strategy) >= n_strategies) {
            throw ValidationError("strategy index " + std::to_string(s.strategy) + " out of range");
        }
        row[static_cast<std::size_t>(s.strategy)] += s.weight;
    }
    return row;
}

CtsModel::CtsModel(ModelConfig config, Vocabulary vocab, corpus::StrategyList strategies, std::uint64_t seed)
    : config_(std::move(config)), vocab_(std::move(vocab)), strategies_(std::move(strategies)), rng_(seed) {
    if (vocab_.n_strategies() != strategies_.size()) {
        throw ValidationError("vocabulary reserves " + std::to_string(vocab_.n_strategies()) + " strategy ids but " +
                              std::to_string(strategies_.size()) + " strategies were given");
    }
    config_.layers.vocab_size = vocab_.size();
    config_.layers.validate(vocab_.n_reserved());
    const auto& L = config_.layers;
    const std::size_t d = L.d_model;

    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    auto table = [&](std::size_t rows) {
        std::vector<double> v(rows * d);
        for (auto& x : v) x = normal(rng_);
        return Tensor::from({rows, d}, std::move(v), true);
    };
    token_embedding_ = table(L.vocab_size);
    enc_positions_ = table(L.max_positions);
    dec_positions_ = table(L.max_positions + 2);
    encoder_ = nn::Encoder(L, rng_);
    target_decoder_ = nn::Decoder(L, rng_);
    if (!config_.share_decoders) source_decoder_ = nn::Decoder(L, rng_);
    head_in_ = nn::Linear::init(d, config_.hidden_size(), rng_);
    head_out_ = nn::Linear::init(config_.hidden_size(), strategies_.size(), rng_);
}

std::vector<int> CtsModel::assemble_source(const corpus::Conversation& conversation) const {
    if (conversation.turns.empty()) throw ValidationError("cannot assemble an empty conversation '" + conversation.id + "'");
    std::vector<std::vector<int>> turns;
    for (const auto& t : conversation.turns) turns.push_back(vocab_.encode(t.text));

    const std::size_t budget = config_.layers.max_positions;
    // Length of turns[first..] joined with separators plus the trailing <mask>.
    auto length_from = [&](std::size_t first) {
        std::size_t n = 0;
        for (std::size_t i = first; i < turns.size(); ++i) n += turns[i].size() + 1;
        return n;
    };
    std::size_t first = 0;
    while (length_from(first) > budget) {
        if (first + 1 == turns.size()) {
            throw ValidationError("final turn of '" + conversation.id + "' does not fit max_positions=" + std::to_string(budget));
        }
        ++first;
    }
    std::vector<int> out;
    for (std::size_t i = first; i < turns.size(); ++i) {
        if (i > first) out.push_back(Vocabulary::kEos);
        out.insert(out.end(), turns[i].begin(), turns[i].end());
    }
    out.push_back(Vocabulary::kMask);
    return out;
}

corpus::EncodedExample CtsModel::encode_example(const corpus::Conversation& c) const {
    corpus::validate(c, strategies_.size());
    corpus::EncodedExample e;
    e.id = c.id;
    e.src = assemble_source(c);
    e.tgt = vocab_.encode(c.target);
    e.tgt.push_back(Vocabulary::kEos);
    if (e.tgt.size() + 1 > config_.layers.max_positions + 2) {
        throw ValidationError("target of '" + c.id + "' is longer than max_positions allows");
    }
    e.golds = c.gold_strategies;
    return e;
}

std::vector<corpus::EncodedExample> CtsModel::encode(const std::vector<corpus::Conversation>& conversations) const {
    std::vector<corpus::EncodedExample> out;
    out.reserve(conversations.size());
    for (const auto& c : conversations) out.push_back(encode_example(c));
    return out;
}

nn::EncoderOutput CtsModel::encode_source(const TokenMatrix& src, const nn::ForwardContext& ctx) const {
    for (auto len : src.lengths) {
        if (len == 0) throw ValidationError("empty source sequence");
    }
    return encoder_.forward(nn::embed(src, token_embedding_, enc_positions_, ctx), src.lengths, ctx);
}

Tensor CtsModel::prompt_embedding(const Prompt& prompt, std::size_t batch) const {
    const std::size_t d = config_.layers.d_model;
    return std::visit(
        [&](const auto& p) -> Tensor {
            using P = std::decay_t<decltype(p)>;
            std::vector<std::size_t> rows;
            if constexpr (std::is_same_v<P, GoldStrategy>) {
                if (p.strategies.size() != batch) throw ValidationError("GoldStrategy prompt needs one strategy per row");
                for (int s : p.strategies) rows.push_back(static_cast<std::size_t>(vocab_.strategy_token(s)));
                return reshape(index_rows(token_embedding_, rows), {batch, 1, d});
            } else if constexpr (std::is_same_v<P, MaskedPrompt>) {
                rows.assign(batch, static_cast<std::size_t>(Vocabulary::kMask));
                return reshape(index_rows(token_embedding_, rows), {batch, 1, d});
            } else {
                if (p.weights.size() != batch) throw ValidationError("WeightedMix prompt needs one weight row per batch row");
                const std::size_t n = strategies_.size();
                std::vector<double> w;
                w.reserve(batch * n);
                for (const auto& row : p.weights) {
                    if (row.size() != n) throw ValidationError("WeightedMix row must have one weight per strategy");
                    w.insert(w.end(), row.begin(), row.end());
                }
                const Tensor strategy_rows = narrow(token_embedding_, 0, Vocabulary::kFirstStrategy, n);
                return reshape(matmul(Tensor::from({batch, n}, std::move(w)), strategy_rows), {batch, 1, d});
            }
        },
        prompt);
}

Tensor CtsModel::output_logits(const Tensor& hidden) const { return matmul(hidden, token_embedding_, /*transpose_b=*/true); }

DecoderPass CtsModel::run_decoder(const nn::Decoder& decoder, const Tensor& first, int first_id, const TokenMatrix& rest,
                                  const nn::EncoderOutput& enc, const nn::ForwardContext& ctx, bool with_logits) const {
    const std::size_t B = rest.rows;
    DecoderPass pass;
    pass.input_ids.rows = B;
    pass.input_ids.cols = rest.cols + 1;
    pass.input_ids.ids.assign(B * (rest.cols + 1), Vocabulary::kPad);
    for (std::size_t b = 0; b < B; ++b) {
        pass.input_ids.ids[b * (rest.cols + 1)] = first_id;
        for (std::size_t j = 0; j < rest.cols; ++j) pass.input_ids.ids[b * (rest.cols + 1) + j + 1] = rest.at(b, j);
        pass.lengths.push_back(rest.lengths[b] + 1);
    }
    pass.input_ids.lengths = pass.lengths;

    Tensor x = first;
    if (rest.cols > 0) x = concat({first, nn::embed_tokens(rest, token_embedding_)}, 1);
    if (x.shape()[1] > dec_positions_.shape()[0]) throw ValidationError("decoder input exceeds positional table");
    x = ctx.dropout(nn::add_positions(x, dec_positions_));
    pass.hidden = decoder.forward(x, pass.lengths, enc, ctx);
    if (with_logits) pass.logits = output_logits(pass.hidden);
    return pass;
}

DecoderPass CtsModel::forward_target(const nn::EncoderOutput& enc, const TokenMatrix& tokens, const Prompt& prompt,
                                     const nn::ForwardContext& ctx, bool with_logits) const {
    if (tokens.rows != enc.batch()) throw ShapeError("target batch does not match encoder batch");
    int first_id = -1;
    if (std::holds_alternative<MaskedPrompt>(prompt)) first_id = Vocabulary::kMask;
    DecoderPass pass = run_decoder(target_decoder_, prompt_embedding(prompt, tokens.rows), first_id, tokens, enc, ctx, with_logits);
    if (const auto* g = std::get_if<GoldStrategy>(&prompt)) {
        for (std::size_t b = 0; b < tokens.rows; ++b) pass.input_ids.ids[b * pass.input_ids.cols] = vocab_.strategy_token(g->strategies[b]);
    }
    return pass;
}

DecoderPass CtsModel::forward_source(const nn::EncoderOutput& enc, const TokenMatrix& src, const nn::ForwardContext& ctx,
                                     bool with_logits) const {
    if (src.rows != enc.batch()) throw ShapeError("source batch does not match encoder batch");
    std::vector<std::vector<int>> rows;
    for (std::size_t b = 0; b < src.rows; ++b) {
        auto r = std::vector<int>(src.row(b).begin(), src.row(b).end());
        r.push_back(Vocabulary::kEos);
        rows.push_back(std::move(r));
    }
    const TokenMatrix rest = TokenMatrix::pack(rows, Vocabulary::kPad);
    std::vector<std::size_t> bos(src.rows, Vocabulary::kBos);
    const Tensor first = reshape(index_rows(token_embedding_, bos), {src.rows, 1, config_.layers.d_model});
    return run_decoder(source_decoder(), first, Vocabulary::kBos, rest, enc, ctx, with_logits);
}

Tensor CtsModel::eos_representation(const DecoderPass& pass) const {
    const auto& s = pass.hidden.shape();
    const std::size_t B = s[0], T = s[1], d = s[2];
    std::vector<std::size_t> rows;
    for (std::size_t b = 0; b < B; ++b) {
        if (pass.lengths[b] == 0) throw ValidationError("eos_representation of an empty sequence");
        rows.push_back(b * T + pass.lengths[b] - 1);
    }
    return index_rows(reshape(pass.hidden, {B * T, d}), rows);
}

StrategyDistribution CtsModel::predict_strategy(const Tensor& h_eos, DistributionSource source) const {
    const Tensor r = head_out_(nn::activate(config_.head_activation, head_in_(h_eos)));
    return {softmax(r, -1), source};
}

std::vector<nn::NamedTensor> CtsModel::parameters() const {
    std::vector<nn::NamedTensor> out;
    out.push_back({"embed.tokens", token_embedding_});
    out.push_back({"embed.enc_positions", enc_positions_});
    out.push_back({"embed.dec_positions", dec_positions_});
    encoder_.collect("encoder", out);
    target_decoder_.collect("target_decoder", out);
    if (!config_.share_decoders) source_decoder_.collect("source_decoder", out);
    head_in_.collect("strategy_head.in", out);
    head_out_.collect("strategy_head.out", out);
    return out;
}

std::size_t CtsModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
}

std::size_t CtsModel::expected_parameter_count(const ModelConfig& c, std::size_t n_strategies) {
    const auto& L = c.layers;
    const std::size_t d = L.d_model;
    const std::size_t h = c.hidden_size();
    const std::size_t embeddings = L.vocab_size * d + L.max_positions * d + (L.max_positions + 2) * d;
    const std::size_t decoders = (c.share_decoders ? 1 : 2) * nn::decoder_parameter_count(L);
    const std::size_t head = d * h + h + h * n_strategies + n_strategies;
    return embeddings + nn::encoder_parameter_count(L) + decoders + head;
}

}  // namespace cts::model
