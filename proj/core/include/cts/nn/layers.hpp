#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cts/autodiff/ops.hpp"
#include "cts/autodiff/tensor.hpp"
#include "cts/corpus/batching.hpp"

namespace cts::nn {

using ad::Tensor;

enum class Activation { Gelu, Relu, Tanh };

std::string_view to_string(Activation a);
std::optional<Activation> parse_activation(std::string_view s);
Tensor activate(Activation a, const Tensor& x);

struct LayerConfig {
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::size_t n_enc_layers = 2;
    std::size_t n_dec_layers = 2;
    double dropout_p = 0.1;
    std::size_t max_positions = 256;
    std::size_t vocab_size = 0;
    Activation ffn_activation = Activation::Gelu;

    /// Throws ValidationError when an invariant fails; min_vocab is the count
    /// of reserved (special + strategy) ids the vocabulary must hold.
    void validate(std::size_t min_vocab = 0) const;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Dropout switch and randomness for one forward pass.
struct ForwardContext {
    bool training = false;
    double dropout_p = 0.0;
    std::mt19937_64* rng = nullptr;

    Tensor dropout(const Tensor& x) const;
};

struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    static Linear init(std::size_t in, std::size_t out, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x) const;
    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;

    static LayerNorm init(std::size_t d);
    Tensor operator()(const Tensor& x) const;
    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct AttentionParams {
    Linear q, k, v, o;

    static AttentionParams init(std::size_t d_model, std::mt19937_64& rng);
    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

/// Scaled dot-product attention over n_heads heads (scale 1/sqrt(d_model/n_heads)).
/// key_padding[b * Lk + j] != 0 marks a padded key; causal additionally hides
/// keys j > i from query i. A query row with no visible key is an error.
Tensor multi_head_attention(const AttentionParams& p, const Tensor& query, const Tensor& key, const Tensor& value,
                            std::span<const std::uint8_t> key_padding, bool causal, std::size_t n_heads);

struct FeedForward {
    Linear in, out;

    static FeedForward init(std::size_t d_model, std::size_t d_ff, std::mt19937_64& rng);
    Tensor operator()(const Tensor& x, Activation act) const;
    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

/// Row lookup: [rows, cols] ids -> [rows, cols, d_model]. Throws on ids >= vocab.
Tensor embed_tokens(const corpus::TokenMatrix& tokens, const Tensor& table);

/// Adds learned positions 0..len-1 from pos_table ([max_positions, d]) to x ([B, len, d]).
Tensor add_positions(const Tensor& x, const Tensor& pos_table);

/// embed_tokens + add_positions + dropout.
Tensor embed(const corpus::TokenMatrix& tokens, const Tensor& table, const Tensor& pos_table, const ForwardContext& ctx);

std::vector<std::uint8_t> padding_mask(const std::vector<std::size_t>& lengths, std::size_t cols);

struct EncoderOutput {
    Tensor hidden;                    // [B, src_len, d_model]
    std::vector<std::uint8_t> pad;    // [B * src_len], 1 = padding
    std::vector<std::size_t> lengths;

    std::size_t batch() const { return lengths.size(); }
    std::size_t src_len() const { return hidden.shape()[1]; }
};

struct EncoderLayer {
    LayerNorm ln_self;
    AttentionParams self_attn;
    LayerNorm ln_ffn;
    FeedForward ffn;
};

/// Pre-norm Transformer encoder stack with a final LayerNorm.
class Encoder {
public:
    Encoder() = default;
    Encoder(const LayerConfig& cfg, std::mt19937_64& rng);

    /// `embedded` is [B, L, d] with positions already added.
    EncoderOutput forward(const Tensor& embedded, const std::vector<std::size_t>& lengths, const ForwardContext& ctx) const;

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;

private:
    LayerConfig cfg_;
    std::vector<EncoderLayer> layers_;
    LayerNorm final_ln_;
};

struct DecoderLayer {
    LayerNorm ln_self;
    AttentionParams self_attn;
    LayerNorm ln_cross;
    AttentionParams cross_attn;
    LayerNorm ln_ffn;
    FeedForward ffn;
};

/// Pre-norm Transformer decoder: causal self-attention, cross-attention over
/// the encoder output, feed-forward; final LayerNorm. Returns hidden states
/// for every input position.
class Decoder {
public:
    Decoder() = default;
    Decoder(const LayerConfig& cfg, std::mt19937_64& rng);

    Tensor forward(const Tensor& embedded, const std::vector<std::size_t>& lengths, const EncoderOutput& enc,
                   const ForwardContext& ctx) const;

    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;

private:
    LayerConfig cfg_;
    std::vector<DecoderLayer> layers_;
    LayerNorm final_ln_;
};

/// Closed-form parameter counts for the stacks above.
std::size_t encoder_parameter_count(const LayerConfig& cfg);
std::size_t decoder_parameter_count(const LayerConfig& cfg);

}  // namespace cts::nn
