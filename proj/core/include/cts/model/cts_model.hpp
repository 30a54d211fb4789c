#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "cts/autodiff/tensor.hpp"
#include "cts/corpus/batching.hpp"
#include "cts/corpus/conversation.hpp"
#include "cts/corpus/vocabulary.hpp"
#include "cts/nn/layers.hpp"

namespace cts::model {

using ad::Tensor;

struct ModelConfig {
    nn::LayerConfig layers;
    nn::Activation head_activation = nn::Activation::Tanh;  // alpha in the strategy MLP
    std::size_t head_hidden = 0;                             // 0 means d_model
    bool share_decoders = false;                             // source decoder reuses the target decoder's weights

    std::size_t hidden_size() const { return head_hidden ? head_hidden : layers.d_model; }
};

// What occupies decoder position 0 of the target decoder.
struct GoldStrategy {
    std::vector<int> strategies;  // one per batch row
};
struct MaskedPrompt {};
struct WeightedMix {
    std::vector<std::vector<double>> weights;  // [batch][n_strategies]
};
using Prompt = std::variant<GoldStrategy, MaskedPrompt, WeightedMix>;

struct StrategyWeight {
    int strategy = 0;
    double weight = 0.0;
};

/// Strategies with probability >= theta, weights renormalized to sum to 1.
/// Falls back to the single argmax (weight 1) when none clears theta.
std::vector<StrategyWeight> select_strategies(std::span<const double> probs, double theta);

/// Dense per-strategy weight row for a WeightedMix prompt.
std::vector<double> mixture_row(const std::vector<StrategyWeight>& selected, std::size_t n_strategies);

enum class DistributionSource { FromSource, FromTarget };

struct StrategyDistribution {
    Tensor probs;  // [batch, n_strategies], each row a simplex element
    DistributionSource source = DistributionSource::FromSource;
};

struct DecoderPass {
    Tensor hidden;                      // [B, T, d_model]
    Tensor logits;                      // [B, T, vocab]; undefined when not requested
    std::vector<std::size_t> lengths;   // decoder input lengths
    corpus::TokenMatrix input_ids;      // decoder input ids; position 0 is -1 for a mixed prompt
};

/// Joint tutoring model: shared encoder, target and source decoders, tied
/// output projection, and a two-layer strategy MLP over the final-position
/// decoder state.
class CtsModel {
public:
    CtsModel(ModelConfig config, corpus::Vocabulary vocab, corpus::StrategyList strategies, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const corpus::Vocabulary& vocab() const { return vocab_; }
    const corpus::StrategyList& strategies() const { return strategies_; }
    std::size_t n_strategies() const { return strategies_.size(); }

    /// t1 </s> t2 </s> ... tn <mask>. Whole turns are dropped from the left
    /// until the sequence fits max_positions; the final turn is never split.
    std::vector<int> assemble_source(const corpus::Conversation& conversation) const;

    corpus::EncodedExample encode_example(const corpus::Conversation& conversation) const;
    std::vector<corpus::EncodedExample> encode(const std::vector<corpus::Conversation>& conversations) const;

    nn::EncoderOutput encode_source(const corpus::TokenMatrix& src, const nn::ForwardContext& ctx) const;

    /// Decoder input is [prompt, tokens...]. For training, tokens is the gold
    /// response plus </s>; for decoding, the generated prefix.
    DecoderPass forward_target(const nn::EncoderOutput& enc, const corpus::TokenMatrix& tokens, const Prompt& prompt,
                               const nn::ForwardContext& ctx, bool with_logits = true) const;

    /// Source decoder teacher-forced on [<s>, src..., </s>].
    DecoderPass forward_source(const nn::EncoderOutput& enc, const corpus::TokenMatrix& src, const nn::ForwardContext& ctx,
                               bool with_logits = true) const;

    /// Hidden state at each row's final non-pad decoder position: [B, d_model].
    Tensor eos_representation(const DecoderPass& pass) const;

    StrategyDistribution predict_strategy(const Tensor& h_eos, DistributionSource source) const;

    /// [B, 1, d_model] prompt embeddings.
    Tensor prompt_embedding(const Prompt& prompt, std::size_t batch) const;

    Tensor output_logits(const Tensor& hidden) const;

    std::vector<nn::NamedTensor> parameters() const;
    std::size_t parameter_count() const;
    static std::size_t expected_parameter_count(const ModelConfig& config, std::size_t n_strategies);

    nn::ForwardContext train_context() { return {true, config_.layers.dropout_p, &rng_}; }
    static nn::ForwardContext eval_context() { return {}; }

    std::mt19937_64& rng() { return rng_; }
    const std::mt19937_64& rng() const { return rng_; }

    // Separate decoder stacks are only materialized when not shared.
    const nn::Decoder& target_decoder() const { return target_decoder_; }
    const nn::Decoder& source_decoder() const { return config_.share_decoders ? target_decoder_ : source_decoder_; }

private:
    DecoderPass run_decoder(const nn::Decoder& decoder, const Tensor& first, int first_id, const corpus::TokenMatrix& rest,
                            const nn::EncoderOutput& enc, const nn::ForwardContext& ctx, bool with_logits) const;

    ModelConfig config_;
    corpus::Vocabulary vocab_;
    corpus::StrategyList strategies_;
    std::mt19937_64 rng_;

    Tensor token_embedding_;  // [vocab, d], also the output projection
    Tensor enc_positions_;    // [max_positions, d]
    Tensor dec_positions_;    // [max_positions + 2, d]
    nn::Encoder encoder_;
    nn::Decoder target_decoder_;
    nn::Decoder source_decoder_;
    nn::Linear head_in_;
    nn::Linear head_out_;
};

}  // namespace cts::model
