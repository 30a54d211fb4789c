#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "cts/autodiff/tensor.hpp"
#include "cts/corpus/batching.hpp"
#include "cts/model/cts_model.hpp"

namespace cts::objectives {

using ad::Tensor;

struct LossWeights {
    double lambda = 1.0;  // self-distillation inside the prediction loss
    double gamma = 1.0;   // prediction loss
    double delta = 0.2;   // source-reconstruction generation loss

    void validate() const;
};

enum class DistillDirection {
    AsWritten,     // -sum p_s log p_t
    Conventional,  // -sum p_t log p_s
};

std::string_view to_string(DistillDirection d);
std::optional<DistillDirection> parse_distill_direction(std::string_view s);

struct ObjectiveOptions {
    LossWeights weights;
    DistillDirection direction = DistillDirection::AsWritten;
    bool detach_teacher = true;
    double eps = 1e-9;
};

inline constexpr double kSimplexTolerance = 1e-6;

/// Mean over non-pad positions of -log softmax(logits)[gold].
/// logits: [B, T, V] (or [N, V]); gold: B*T ids aligned row-major with logits.
Tensor generation_loss(const Tensor& logits, std::span<const int> gold, int pad_id);

/// Gold ids for a decoder pass over [first, x_0..x_{m-1}]: position t predicts
/// x_t, the final position predicts nothing (pad).
std::vector<int> next_token_labels(const model::DecoderPass& pass, int pad_id);

/// Per-row distillation loss averaged over the batch. p_s, p_t: [B, n] simplex rows.
/// The caller decides whether p_t is detached.
Tensor self_distillation_loss(const Tensor& p_s, const Tensor& p_t, DistillDirection direction = DistillDirection::AsWritten,
                              double eps = 1e-9);

/// Batch mean of -(sum over golds of log p_s[g] + log p_t[g]), logs eps-clamped.
Tensor hard_label_loss(const Tensor& p_s, const Tensor& p_t, const std::vector<std::vector<int>>& golds, double eps = 1e-9);

/// Batch mean of -(sum over golds of log p_s[g] + log p_t[g]) + lambda * L^sd.
Tensor prediction_loss(const Tensor& p_s, const Tensor& p_t, const std::vector<std::vector<int>>& golds, double lambda,
                       DistillDirection direction = DistillDirection::AsWritten, double eps = 1e-9);

struct LossBundle {
    Tensor total;  // differentiable
    double gen_target = 0.0;
    double gen_source = 0.0;
    double pred = 0.0;  // includes lambda * sd
    double sd = 0.0;
    double total_value = 0.0;
    std::size_t target_tokens = 0;
    std::size_t source_tokens = 0;
    std::size_t examples = 0;
};

/// Optional instrumentation: decoder input ids of the masked teacher pass.
struct JointLossTrace {
    corpus::TokenMatrix teacher_inputs;
};

/// Three decoder passes over one batch: gold-prompted target decoding for
/// generation, a masked-prompt target pass for the teacher distribution, and
/// the source decoder for reconstruction plus the student distribution.
LossBundle joint_loss(const model::CtsModel& model, const corpus::Batch& batch, const ObjectiveOptions& options,
                      const nn::ForwardContext& ctx, JointLossTrace* trace = nullptr);

}  // namespace cts::objectives
