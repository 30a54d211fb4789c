#include "cts/nn/layers.hpp"

#include <cmath>

#include "cts/error.hpp"

namespace cts::nn {

using namespace cts::ad;

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::Gelu: return "gelu";
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
    }
    return "gelu";
}

std::optional<Activation> parse_activation(std::string_view s) {
    if (s == "gelu") return Activation::Gelu;
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    return std::nullopt;
}

Tensor activate(Activation a, const Tensor& x) {
    switch (a) {
        case Activation::Gelu: return gelu(x);
        case Activation::Relu: return relu(x);
        case Activation::Tanh: return ad::tanh(x);
    }
    return x;
}

void LayerConfig::validate(std::size_t min_vocab) const {
    auto fail = [](const std::string& m) { throw ValidationError("layer config: " + m); };
    if (d_model == 0 || n_heads == 0 || d_ff == 0) fail("d_model, n_heads and d_ff must be positive");
    if (d_model % n_heads != 0) fail("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
    if (n_enc_layers == 0 || n_dec_layers == 0) fail("layer counts must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must lie in [0, 1)");
    if (max_positions == 0) fail("max_positions must be positive");
    if (vocab_size == 0 || vocab_size < min_vocab) {
        fail("vocab_size " + std::to_string(vocab_size) + " is smaller than the " + std::to_string(min_vocab) + " reserved ids");
    }
}

Tensor ForwardContext::dropout(const Tensor& x) const {
    if (!training || dropout_p == 0.0) return x;
    if (!rng) throw ValidationError("training forward pass needs an RNG for dropout");
    return ad::dropout(x, dropout_p, *rng, true);
}

Linear Linear::init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> w(in * out);
    for (auto& v : w) v = u(rng);
    return {Tensor::from({in, out}, std::move(w), true), Tensor::zeros({out}, true)};
}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Linear::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

LayerNorm LayerNorm::init(std::size_t d) { return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)}; }

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

void LayerNorm::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

AttentionParams AttentionParams::init(std::size_t d, std::mt19937_64& rng) {
    AttentionParams p;
    p.q = Linear::init(d, d, rng);
    p.k = Linear::init(d, d, rng);
    p.v = Linear::init(d, d, rng);
    p.o = Linear::init(d, d, rng);
    return p;
}

void AttentionParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    q.collect(prefix + ".q", out);
    k.collect(prefix + ".k", out);
    v.collect(prefix + ".v", out);
    o.collect(prefix + ".o", out);
}

namespace {

// [B, L, d] -> [B, H, L, d/H]
Tensor split_heads(const Tensor& x, std::size_t heads) {
    const auto& s = x.shape();
    return permute(reshape(x, {s[0], s[1], heads, s[2] / heads}), {0, 2, 1, 3});
}

// [B, H, L, dh] -> [B, L, H*dh]
Tensor merge_heads(const Tensor& x) {
    const auto& s = x.shape();
    return reshape(permute(x, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}

}  // namespace

Tensor multi_head_attention(const AttentionParams& p, const Tensor& query, const Tensor& key, const Tensor& value,
                            std::span<const std::uint8_t> key_padding, bool causal, std::size_t n_heads) {
    if (query.dim() != 3 || key.dim() != 3 || value.dim() != 3) {
        throw ShapeError("attention expects [batch, len, d_model] inputs");
    }
    const std::size_t B = query.shape()[0], Lq = query.shape()[1], d = query.shape()[2];
    const std::size_t Lk = key.shape()[1];
    if (key.shape()[0] != B || value.shape()[0] != B || key.shape()[2] != d || value.shape()[2] != d || value.shape()[1] != Lk) {
        throw ShapeError("attention: query " + shape_str(query.shape()) + ", key " + shape_str(key.shape()) + ", value " +
                         shape_str(value.shape()) + " disagree");
    }
    if (key_padding.size() != B * Lk) {
        throw ShapeError("attention: key mask has " + std::to_string(key_padding.size()) + " entries, expected " +
                         std::to_string(B * Lk));
    }
    if (n_heads == 0 || d % n_heads != 0) throw ShapeError("attention: d_model not divisible by head count");

    const Tensor q = split_heads(p.q(query), n_heads);
    const Tensor k = split_heads(p.k(key), n_heads);
    const Tensor v = split_heads(p.v(value), n_heads);
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(d / n_heads));
    const Tensor scores = scale(matmul(q, k, /*transpose_b=*/true), scale_factor);

    AttentionMask mask{B, Lq, Lk, std::vector<std::uint8_t>(B * Lq * Lk, 0)};
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < Lq; ++i)
            for (std::size_t j = 0; j < Lk; ++j)
                mask.allowed[(b * Lq + i) * Lk + j] = !key_padding[b * Lk + j] && (!causal || j <= i);

    const Tensor probs = masked_softmax(scores, mask);
    return p.o(merge_heads(matmul(probs, v)));
}

FeedForward FeedForward::init(std::size_t d_model, std::size_t d_ff, std::mt19937_64& rng) {
    return {Linear::init(d_model, d_ff, rng), Linear::init(d_ff, d_model, rng)};
}

Tensor FeedForward::operator()(const Tensor& x, Activation act) const { return out(activate(act, in(x))); }

void FeedForward::collect(const std::string& prefix, std::vector<NamedTensor>& out_params) const {
    in.collect(prefix + ".in", out_params);
    out.collect(prefix + ".out", out_params);
}

Tensor embed_tokens(const corpus::TokenMatrix& tokens, const Tensor& table) {
    const std::size_t vocab = table.shape()[0];
    const std::size_t d = table.shape()[1];
    std::vector<std::size_t> rows(tokens.ids.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const int id = tokens.ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw ValidationError("token id " + std::to_string(id) + " >= vocab_size " + std::to_string(vocab));
        }
        rows[i] = static_cast<std::size_t>(id);
    }
    return reshape(index_rows(table, rows), {tokens.rows, tokens.cols, d});
}

Tensor add_positions(const Tensor& x, const Tensor& pos_table) {
    const std::size_t len = x.shape()[1];
    if (len > pos_table.shape()[0]) {
        throw ValidationError("sequence length " + std::to_string(len) + " exceeds max_positions " +
                              std::to_string(pos_table.shape()[0]));
    }
    return add(x, narrow(pos_table, 0, 0, len));
}

Tensor embed(const corpus::TokenMatrix& tokens, const Tensor& table, const Tensor& pos_table, const ForwardContext& ctx) {
    return ctx.dropout(add_positions(embed_tokens(tokens, table), pos_table));
}

std::vector<std::uint8_t> padding_mask(const std::vector<std::size_t>& lengths, std::size_t cols) {
    std::vector<std::uint8_t> pad(lengths.size() * cols, 0);
    for (std::size_t b = 0; b < lengths.size(); ++b)
        for (std::size_t j = lengths[b]; j < cols; ++j) pad[b * cols + j] = 1;
    return pad;
}

Encoder::Encoder(const LayerConfig& cfg, std::mt19937_64& rng) : cfg_(cfg), final_ln_(LayerNorm::init(cfg.d_model)) {
    for (std::size_t i = 0; i < cfg.n_enc_layers; ++i) {
        EncoderLayer l;
        l.ln_self = LayerNorm::init(cfg.d_model);
        l.self_attn = AttentionParams::init(cfg.d_model, rng);
        l.ln_ffn = LayerNorm::init(cfg.d_model);
        l.ffn = FeedForward::init(cfg.d_model, cfg.d_ff, rng);
        layers_.push_back(std::move(l));
    }
}

EncoderOutput Encoder::forward(const Tensor& embedded, const std::vector<std::size_t>& lengths, const ForwardContext& ctx) const {
    if (embedded.dim() != 3 || embedded.shape()[0] != lengths.size()) throw ShapeError("encoder: batch/length mismatch");
    const std::size_t L = embedded.shape()[1];
    if (L > cfg_.max_positions) {
        throw ValidationError("source length " + std::to_string(L) + " exceeds max_positions " + std::to_string(cfg_.max_positions));
    }
    auto pad = padding_mask(lengths, L);
    Tensor x = embedded;
    for (const auto& l : layers_) {
        const Tensor h = l.ln_self(x);
        x = add(x, ctx.dropout(multi_head_attention(l.self_attn, h, h, h, pad, false, cfg_.n_heads)));
        x = add(x, ctx.dropout(l.ffn(l.ln_ffn(x), cfg_.ffn_activation)));
    }
    return {final_ln_(x), std::move(pad), lengths};
}

void Encoder::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::string p = prefix + ".layers." + std::to_string(i);
        layers_[i].ln_self.collect(p + ".ln_self", out);
        layers_[i].self_attn.collect(p + ".self_attn", out);
        layers_[i].ln_ffn.collect(p + ".ln_ffn", out);
        layers_[i].ffn.collect(p + ".ffn", out);
    }
    final_ln_.collect(prefix + ".final_ln", out);
}

Decoder::Decoder(const LayerConfig& cfg, std::mt19937_64& rng) : cfg_(cfg), final_ln_(LayerNorm::init(cfg.d_model)) {
    for (std::size_t i = 0; i < cfg.n_dec_layers; ++i) {
        DecoderLayer l;
        l.ln_self = LayerNorm::init(cfg.d_model);
        l.self_attn = AttentionParams::init(cfg.d_model, rng);
        l.ln_cross = LayerNorm::init(cfg.d_model);
        l.cross_attn = AttentionParams::init(cfg.d_model, rng);
        l.ln_ffn = LayerNorm::init(cfg.d_model);
        l.ffn = FeedForward::init(cfg.d_model, cfg.d_ff, rng);
        layers_.push_back(std::move(l));
    }
}

Tensor Decoder::forward(const Tensor& embedded, const std::vector<std::size_t>& lengths, const EncoderOutput& enc,
                        const ForwardContext& ctx) const {
    if (embedded.dim() != 3 || embedded.shape()[0] != lengths.size()) throw ShapeError("decoder: batch/length mismatch");
    if (enc.batch() != lengths.size()) {
        throw ShapeError("decoder batch " + std::to_string(lengths.size()) + " does not match encoder batch " +
                         std::to_string(enc.batch()));
    }
    const std::size_t T = embedded.shape()[1];
    const auto self_pad = padding_mask(lengths, T);
    Tensor x = embedded;
    for (const auto& l : layers_) {
        const Tensor h = l.ln_self(x);
        x = add(x, ctx.dropout(multi_head_attention(l.self_attn, h, h, h, self_pad, true, cfg_.n_heads)));
        const Tensor c = l.ln_cross(x);
        x = add(x, ctx.dropout(multi_head_attention(l.cross_attn, c, enc.hidden, enc.hidden, enc.pad, false, cfg_.n_heads)));
        x = add(x, ctx.dropout(l.ffn(l.ln_ffn(x), cfg_.ffn_activation)));
    }
    return final_ln_(x);
}

void Decoder::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::string p = prefix + ".layers." + std::to_string(i);
        layers_[i].ln_self.collect(p + ".ln_self", out);
        layers_[i].self_attn.collect(p + ".self_attn", out);
        layers_[i].ln_cross.collect(p + ".ln_cross", out);
        layers_[i].cross_attn.collect(p + ".cross_attn", out);
        layers_[i].ln_ffn.collect(p + ".ln_ffn", out);
        layers_[i].ffn.collect(p + ".ffn", out);
    }
    final_ln_.collect(prefix + ".final_ln", out);
}

namespace {

std::size_t attention_count(std::size_t d) { return 4 * (d * d + d); }
std::size_t ffn_count(std::size_t d, std::size_t ff) { return d * ff + ff + ff * d + d; }

}  // namespace

std::size_t encoder_parameter_count(const LayerConfig& c) {
    const std::size_t d = c.d_model;
    return c.n_enc_layers * (attention_count(d) + 2 * 2 * d + ffn_count(d, c.d_ff)) + 2 * d;
}

std::size_t decoder_parameter_count(const LayerConfig& c) {
    const std::size_t d = c.d_model;
    return c.n_dec_layers * (2 * attention_count(d) + 3 * 2 * d + ffn_count(d, c.d_ff)) + 2 * d;
}

}  // namespace cts::nn
