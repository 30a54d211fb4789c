#include "cts/eval/decoding.hpp"

#include <algorithm>
#include <limits>

#include "cts/autodiff/ops.hpp"
#include "cts/error.hpp"

namespace cts::eval {

using corpus::TokenMatrix;
using corpus::Vocabulary;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

TokenMatrix single_row(std::span<const int> ids) {
    TokenMatrix m;
    m.rows = 1;
    m.cols = ids.size();
    m.ids.assign(ids.begin(), ids.end());
    m.lengths = {ids.size()};
    return m;
}

nn::EncoderOutput replicate(const nn::EncoderOutput& enc, std::size_t rows) {
    nn::EncoderOutput out;
    const std::vector<std::size_t> picks(rows, 0);
    out.hidden = ad::index_rows(enc.hidden, picks);
    for (std::size_t r = 0; r < rows; ++r) out.pad.insert(out.pad.end(), enc.pad.begin(), enc.pad.end());
    out.lengths.assign(rows, enc.lengths.at(0));
    return out;
}

model::Prompt replicate(const model::Prompt& prompt, std::size_t rows) {
    if (const auto* g = std::get_if<model::GoldStrategy>(&prompt)) {
        if (g->strategies.size() != 1) throw ValidationError("decoding expects a single-row prompt");
        return model::GoldStrategy{std::vector<int>(rows, g->strategies[0])};
    }
    if (const auto* w = std::get_if<model::WeightedMix>(&prompt)) {
        if (w->weights.size() != 1) throw ValidationError("decoding expects a single-row prompt");
        return model::WeightedMix{std::vector<std::vector<double>>(rows, w->weights[0])};
    }
    return prompt;
}

/// Log-probabilities of the next token for each row of `prefixes` ([A, t]).
std::vector<double> next_log_probs(const model::CtsModel& model, const nn::EncoderOutput& enc, const TokenMatrix& prefixes,
                                   const model::Prompt& prompt) {
    const std::size_t A = prefixes.rows;
    const std::size_t d = model.config().layers.d_model;
    const auto pass = model.forward_target(replicate(enc, A), prefixes, replicate(prompt, A), model::CtsModel::eval_context(),
                                           /*with_logits=*/false);
    const ad::Tensor last = ad::reshape(ad::narrow(pass.hidden, 1, prefixes.cols, 1), {A, d});
    return ad::log_softmax(model.output_logits(last), -1).to_vector();
}

struct Candidate {
    double logp;
    std::size_t slot;
    int token;
};

}  // namespace

std::vector<int> Hypothesis::content() const {
    std::vector<int> out = tokens;
    if (finished && !out.empty() && out.back() == Vocabulary::kEos) out.pop_back();
    return out;
}

std::vector<bool> generation_blocklist(const Vocabulary& vocab) {
    std::vector<bool> blocked(vocab.size(), false);
    blocked[Vocabulary::kPad] = true;
    blocked[Vocabulary::kBos] = true;
    blocked[Vocabulary::kMask] = true;
    for (std::size_t s = 0; s < vocab.n_strategies(); ++s) blocked[Vocabulary::kFirstStrategy + s] = true;
    return blocked;
}

Hypothesis beam_search(const model::CtsModel& model, std::span<const int> src, const model::Prompt& prompt,
                       const DecodeOptions& options) {
    if (options.beam == 0) throw ValidationError("beam size must be at least 1");
    if (options.max_len == 0) throw ValidationError("max_len must be at least 1");
    ad::NoGradGuard no_grad;
    const std::size_t V = model.vocab().size();
    const std::size_t max_len = std::min(options.max_len, model.config().layers.max_positions + 1);
    const auto blocked = generation_blocklist(model.vocab());
    const nn::EncoderOutput enc = model.encode_source(single_row(src), model::CtsModel::eval_context());

    std::vector<Hypothesis> active(1);
    std::vector<Hypothesis> finished;
    for (std::size_t t = 0; t < max_len && !active.empty() && finished.size() < options.beam; ++t) {
        TokenMatrix prefixes;
        prefixes.rows = active.size();
        prefixes.cols = t;
        for (const auto& h : active) prefixes.ids.insert(prefixes.ids.end(), h.tokens.begin(), h.tokens.end());
        prefixes.lengths.assign(active.size(), t);
        const auto lp = next_log_probs(model, enc, prefixes, prompt);

        std::vector<Candidate> cands;
        cands.reserve(active.size() * V);
        for (std::size_t a = 0; a < active.size(); ++a) {
            for (std::size_t v = 0; v < V; ++v) {
                if (!blocked[v]) cands.push_back({active[a].logp + lp[a * V + v], a, static_cast<int>(v)});
            }
        }
        const std::size_t keep = std::min(options.beam, cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                          [](const Candidate& x, const Candidate& y) {
                              if (x.logp != y.logp) return x.logp > y.logp;
                              if (x.slot != y.slot) return x.slot < y.slot;
                              return x.token < y.token;
                          });
        std::vector<Hypothesis> next;
        for (std::size_t i = 0; i < keep; ++i) {
            const Candidate& c = cands[i];
            if (c.logp == kNegInf) break;
            Hypothesis h = active[c.slot];
            h.tokens.push_back(c.token);
            h.logp = c.logp;
            if (c.token == Vocabulary::kEos) {
                h.finished = true;
                finished.push_back(std::move(h));
            } else {
                next.push_back(std::move(h));
            }
        }
        active = std::move(next);
    }

    std::vector<Hypothesis> pool = std::move(finished);
    const bool hit_max_len = !active.empty() && active.front().tokens.size() >= max_len;
    if (pool.empty() || hit_max_len) pool.insert(pool.end(), active.begin(), active.end());
    if (pool.empty()) return {};
    const auto best = std::max_element(pool.begin(), pool.end(),
                                       [](const Hypothesis& x, const Hypothesis& y) { return x.score() < y.score(); });
    return *best;
}

Hypothesis greedy_decode(const model::CtsModel& model, std::span<const int> src, const model::Prompt& prompt,
                         std::size_t max_len) {
    if (max_len == 0) throw ValidationError("max_len must be at least 1");
    ad::NoGradGuard no_grad;
    const std::size_t V = model.vocab().size();
    max_len = std::min(max_len, model.config().layers.max_positions + 1);
    const auto blocked = generation_blocklist(model.vocab());
    const nn::EncoderOutput enc = model.encode_source(single_row(src), model::CtsModel::eval_context());
    Hypothesis h;
    while (h.tokens.size() < max_len) {
        const auto lp = next_log_probs(model, enc, single_row(h.tokens), prompt);
        int best = -1;
        for (std::size_t v = 0; v < V; ++v) {
            if (!blocked[v] && (best < 0 || lp[v] > lp[static_cast<std::size_t>(best)])) best = static_cast<int>(v);
        }
        h.tokens.push_back(best);
        h.logp += lp[static_cast<std::size_t>(best)];
        if (best == Vocabulary::kEos) {
            h.finished = true;
            break;
        }
    }
    return h;
}

std::string_view to_string(Setting s) {
    switch (s) {
        case Setting::WithoutTS: return "without_ts";
        case Setting::GoldenTS: return "golden_ts";
        case Setting::NeedTSPredict: return "need_ts_predict";
    }
    return "without_ts";
}

std::optional<Setting> parse_setting(std::string_view s) {
    if (s == "without_ts") return Setting::WithoutTS;
    if (s == "golden_ts") return Setting::GoldenTS;
    if (s == "need_ts_predict") return Setting::NeedTSPredict;
    return std::nullopt;
}

std::vector<std::vector<double>> source_distribution(const model::CtsModel& model, const TokenMatrix& src) {
    ad::NoGradGuard no_grad;
    const auto ctx = model::CtsModel::eval_context();
    const auto enc = model.encode_source(src, ctx);
    const auto pass = model.forward_source(enc, src, ctx, /*with_logits=*/false);
    const auto probs = model.predict_strategy(model.eos_representation(pass), model::DistributionSource::FromSource).probs;
    const std::size_t n = model.n_strategies();
    const auto flat = probs.to_vector();
    std::vector<std::vector<double>> out;
    for (std::size_t b = 0; b < src.rows; ++b) out.emplace_back(flat.begin() + b * n, flat.begin() + (b + 1) * n);
    return out;
}

std::vector<std::vector<double>> target_distribution(const model::CtsModel& model, const TokenMatrix& src,
                                                     const TokenMatrix& tgt) {
    ad::NoGradGuard no_grad;
    const auto ctx = model::CtsModel::eval_context();
    const auto enc = model.encode_source(src, ctx);
    const auto pass = model.forward_target(enc, tgt, model::MaskedPrompt{}, ctx, /*with_logits=*/false);
    const auto probs = model.predict_strategy(model.eos_representation(pass), model::DistributionSource::FromTarget).probs;
    const std::size_t n = model.n_strategies();
    const auto flat = probs.to_vector();
    std::vector<std::vector<double>> out;
    for (std::size_t b = 0; b < src.rows; ++b) out.emplace_back(flat.begin() + b * n, flat.begin() + (b + 1) * n);
    return out;
}

Hypothesis generate_with_strategies(const model::CtsModel& model, std::span<const int> src,
                                    const std::vector<model::StrategyWeight>& strategies, const DecodeOptions& options) {
    if (strategies.empty()) throw ValidationError("at least one strategy is required");
    const model::Prompt prompt = model::WeightedMix{{model::mixture_row(strategies, model.n_strategies())}};
    return beam_search(model, src, prompt, options);
}

PipelineOutput pipeline_generate(const model::CtsModel& model, std::span<const int> src, Setting setting, double theta,
                                 const DecodeOptions& options, std::optional<int> gold_strategy) {
    PipelineOutput out;
    switch (setting) {
        case Setting::WithoutTS:
            out.hypothesis = beam_search(model, src, model::MaskedPrompt{}, options);
            break;
        case Setting::GoldenTS: {
            if (!gold_strategy) throw ValidationError("the golden_ts setting needs a gold strategy");
            out.strategies = {{*gold_strategy, 1.0}};
            out.hypothesis = beam_search(model, src, model::GoldStrategy{{*gold_strategy}}, options);
            break;
        }
        case Setting::NeedTSPredict: {
            out.source_probs = source_distribution(model, single_row(src)).front();
            out.strategies = model::select_strategies(out.source_probs, theta);
            out.hypothesis = generate_with_strategies(model, src, out.strategies, options);
            break;
        }
    }
    return out;
}

}  // namespace cts::eval
