#include "cts/objectives/losses.hpp"

#include <cmath>

#include "cts/autodiff/ops.hpp"
#include "cts/corpus/vocabulary.hpp"
#include "cts/error.hpp"

namespace cts::objectives {

using namespace cts::ad;

void LossWeights::validate() const {
    auto check = [](double v, const char* name) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError(std::string("loss weight ") + name + " must be finite and >= 0");
    };
    check(lambda, "lambda");
    check(gamma, "gamma");
    check(delta, "delta");
}

std::string_view to_string(DistillDirection d) { return d == DistillDirection::AsWritten ? "as_written" : "conventional"; }

std::optional<DistillDirection> parse_distill_direction(std::string_view s) {
    if (s == "as_written") return DistillDirection::AsWritten;
    if (s == "conventional") return DistillDirection::Conventional;
    return std::nullopt;
}

namespace {

void require_simplex(const Tensor& p, const char* what) {
    if (p.dim() != 2) throw ShapeError(std::string(what) + " must be [batch, n], got " + shape_str(p.shape()));
    const std::size_t B = p.shape()[0], n = p.shape()[1];
    const auto v = p.data();
    for (std::size_t b = 0; b < B; ++b) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double x = v[b * n + j];
            if (!(x >= -kSimplexTolerance)) throw DomainError(std::string(what) + " has a negative or NaN entry");
            s += x;
        }
        if (std::abs(s - 1.0) > kSimplexTolerance) {
            throw DomainError(std::string(what) + " row " + std::to_string(b) + " sums to " + std::to_string(s) + ", not 1");
        }
    }
}

}  // namespace

Tensor generation_loss(const Tensor& logits, std::span<const int> gold, int pad_id) {
    if (logits.dim() < 2) throw ShapeError("generation_loss: logits need a vocabulary axis");
    const std::size_t V = logits.shape().back();
    const std::size_t N = logits.numel() / V;
    if (gold.size() != N) {
        throw ShapeError("generation_loss: " + std::to_string(gold.size()) + " gold ids for " + std::to_string(N) + " positions");
    }
    std::size_t count = 0;
    for (int g : gold) count += g != pad_id;
    if (count == 0) throw ValidationError("generation_loss: target consists only of padding");
    return scale(cross_entropy_sum(reshape(logits, {N, V}), gold, pad_id), 1.0 / static_cast<double>(count));
}

std::vector<int> next_token_labels(const model::DecoderPass& pass, int pad_id) {
    const auto& in = pass.input_ids;
    std::vector<int> labels(in.rows * in.cols, pad_id);
    for (std::size_t b = 0; b < in.rows; ++b) {
        for (std::size_t t = 0; t + 1 < in.lengths[b]; ++t) labels[b * in.cols + t] = in.at(b, t + 1);
    }
    return labels;
}

Tensor self_distillation_loss(const Tensor& p_s, const Tensor& p_t, DistillDirection direction, double eps) {
    require_simplex(p_s, "student distribution");
    require_simplex(p_t, "teacher distribution");
    if (p_s.shape() != p_t.shape()) throw ShapeError("student and teacher distributions differ in shape");
    const Tensor& weight = direction == DistillDirection::AsWritten ? p_s : p_t;
    const Tensor& logged = direction == DistillDirection::AsWritten ? p_t : p_s;
    const Tensor per_row = neg(sum(mul(weight, log(clamp_min(logged, eps))), -1));
    return mean(per_row);
}

Tensor hard_label_loss(const Tensor& p_s, const Tensor& p_t, const std::vector<std::vector<int>>& golds, double eps) {
    require_simplex(p_s, "student distribution");
    require_simplex(p_t, "teacher distribution");
    if (p_s.shape() != p_t.shape()) throw ShapeError("student and teacher distributions differ in shape");
    const std::size_t B = p_s.shape()[0], n = p_s.shape()[1];
    if (golds.size() != B) throw ShapeError("one gold list per batch row required");
    std::vector<std::size_t> picks;
    for (std::size_t b = 0; b < B; ++b) {
        if (golds[b].empty()) throw ValidationError("example without a gold strategy");
        for (int g : golds[b]) {
            if (g < 0 || static_cast<std::size_t>(g) >= n) {
                throw ValidationError("gold strategy " + std::to_string(g) + " outside [0, " + std::to_string(n) + ")");
            }
            picks.push_back(b * n + static_cast<std::size_t>(g));
        }
    }
    auto picked_log = [&](const Tensor& p) { return sum(log(clamp_min(index_rows(reshape(p, {B * n}), picks), eps))); };
    return scale(add(picked_log(p_s), picked_log(p_t)), -1.0 / static_cast<double>(B));
}

Tensor prediction_loss(const Tensor& p_s, const Tensor& p_t, const std::vector<std::vector<int>>& golds, double lambda,
                       DistillDirection direction, double eps) {
    return add(hard_label_loss(p_s, p_t, golds, eps), scale(self_distillation_loss(p_s, p_t, direction, eps), lambda));
}

LossBundle joint_loss(const model::CtsModel& model, const corpus::Batch& batch, const ObjectiveOptions& options,
                      const nn::ForwardContext& ctx, JointLossTrace* trace) {
    options.weights.validate();
    if (batch.size() == 0) throw ValidationError("joint_loss on an empty batch");
    constexpr int pad = corpus::Vocabulary::kPad;
    const auto& w = options.weights;

    const nn::EncoderOutput enc = model.encode_source(batch.src, ctx);

    const model::DecoderPass gold_pass = model.forward_target(enc, batch.tgt, model::GoldStrategy{batch.primary_golds()}, ctx);
    const Tensor gen_target = generation_loss(gold_pass.logits, next_token_labels(gold_pass, pad), pad);

    const model::DecoderPass masked_pass = model.forward_target(enc, batch.tgt, model::MaskedPrompt{}, ctx, /*with_logits=*/false);
    if (trace) trace->teacher_inputs = masked_pass.input_ids;
    const Tensor p_t = model.predict_strategy(model.eos_representation(masked_pass), model::DistributionSource::FromTarget).probs;

    const model::DecoderPass source_pass = model.forward_source(enc, batch.src, ctx);
    const Tensor gen_source = generation_loss(source_pass.logits, next_token_labels(source_pass, pad), pad);
    const Tensor p_s = model.predict_strategy(model.eos_representation(source_pass), model::DistributionSource::FromSource).probs;

    const Tensor teacher = options.detach_teacher ? p_t.detach() : p_t;
    const Tensor sd = self_distillation_loss(p_s, teacher, options.direction, options.eps);
    const Tensor pred = add(hard_label_loss(p_s, p_t, batch.golds, options.eps), scale(sd, w.lambda));

    LossBundle out;
    out.total = add(add(gen_target, scale(gen_source, w.delta)), scale(pred, w.gamma));
    out.gen_target = gen_target.item();
    out.gen_source = gen_source.item();
    out.sd = sd.item();
    out.pred = pred.item();
    out.total_value = out.total.item();
    for (auto len : batch.tgt.lengths) out.target_tokens += len;
    for (auto len : batch.src.lengths) out.source_tokens += len + 1;
    out.examples = batch.size();
    return out;
}

}  // namespace cts::objectives
