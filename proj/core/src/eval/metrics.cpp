#include "cts/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "cts/corpus/conversation.hpp"
#include "cts/error.hpp"

namespace cts::eval {

StrategyMetrics strategy_metrics(std::span<const int> golds, std::span<const int> predictions, std::size_t n_classes) {
    if (golds.size() != predictions.size()) {
        throw ValidationError("strategy_metrics: " + std::to_string(golds.size()) + " golds vs " +
                              std::to_string(predictions.size()) + " predictions");
    }
    if (golds.empty()) throw ValidationError("strategy_metrics: no examples");
    if (n_classes == 0) throw ValidationError("strategy_metrics: no classes");
    auto check = [&](int c) {
        if (c < 0 || static_cast<std::size_t>(c) >= n_classes) throw ValidationError("label " + std::to_string(c) + " out of range");
    };
    StrategyMetrics m;
    m.per_class.resize(n_classes);
    std::vector<std::size_t> tp(n_classes, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < golds.size(); ++i) {
        check(golds[i]);
        check(predictions[i]);
        ++m.per_class[static_cast<std::size_t>(golds[i])].support;
        ++m.per_class[static_cast<std::size_t>(predictions[i])].predicted;
        if (golds[i] == predictions[i]) {
            ++correct;
            ++tp[static_cast<std::size_t>(golds[i])];
        }
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(golds.size());
    double f1_sum = 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        auto& s = m.per_class[c];
        s.precision = s.predicted ? static_cast<double>(tp[c]) / static_cast<double>(s.predicted) : 0.0;
        s.recall = s.support ? static_cast<double>(tp[c]) / static_cast<double>(s.support) : 0.0;
        s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
        f1_sum += s.f1;
    }
    m.macro_f1 = f1_sum / static_cast<double>(n_classes);
    return m;
}

int majority_class(std::span<const int> labels, std::size_t n_classes) {
    if (labels.empty()) throw ValidationError("majority_class of an empty label list");
    std::vector<std::size_t> counts(n_classes, 0);
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= n_classes) throw ValidationError("label out of range");
        ++counts[static_cast<std::size_t>(l)];
    }
    return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) throw ValidationError("argmax of an empty vector");
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

BleuStats& BleuStats::operator+=(const BleuStats& o) {
    for (std::size_t n = 0; n < 4; ++n) {
        matches[n] += o.matches[n];
        totals[n] += o.totals[n];
    }
    hyp_len += o.hyp_len;
    ref_len += o.ref_len;
    return *this;
}

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
    std::map<Ngram, std::size_t> counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) ++counts[Ngram(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                                                      toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return counts;
}

}  // namespace

BleuStats sentence_stats(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
    BleuStats s;
    s.hyp_len = hyp.size();
    s.ref_len = ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
        const auto h = ngram_counts(hyp, n);
        const auto r = ngram_counts(ref, n);
        for (const auto& [gram, count] : h) {
            const auto it = r.find(gram);
            if (it != r.end()) s.matches[n - 1] += std::min(count, it->second);
        }
        s.totals[n - 1] = hyp.size() >= n ? hyp.size() - n + 1 : 0;
    }
    return s;
}

double bleu_from_stats(const BleuStats& s) {
    if (s.hyp_len == 0) return 0.0;
    double log_sum = 0.0;
    double smooth = 1.0;
    for (std::size_t n = 0; n < 4; ++n) {
        const double total = static_cast<double>(std::max<std::size_t>(s.totals[n], 1));
        double p;
        if (s.matches[n] == 0) {
            smooth *= 2.0;
            p = 1.0 / (smooth * total);
        } else {
            p = static_cast<double>(s.matches[n]) / total;
        }
        log_sum += std::log(p);
    }
    const double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.hyp_len)));
    return 100.0 * bp * std::exp(log_sum / 4.0);
}

double corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
    if (references.empty()) throw ValidationError("corpus_bleu: empty reference set");
    if (hypotheses.size() != references.size()) throw ValidationError("corpus_bleu: hypothesis/reference count mismatch");
    BleuStats total;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        total += sentence_stats(corpus::tokenize(hypotheses[i]), corpus::tokenize(references[i]));
    }
    return bleu_from_stats(total);
}

BootstrapResult paired_bootstrap(const std::vector<std::string>& a, const std::vector<std::string>& b,
                                 const std::vector<std::string>& refs, std::size_t samples, std::uint64_t seed) {
    if (a.size() != refs.size() || b.size() != refs.size()) throw ValidationError("paired_bootstrap: size mismatch");
    if (refs.empty()) throw ValidationError("paired_bootstrap: empty reference set");
    if (samples == 0) throw ValidationError("paired_bootstrap: samples must be positive");
    std::vector<BleuStats> sa, sb;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto r = corpus::tokenize(refs[i]);
        sa.push_back(sentence_stats(corpus::tokenize(a[i]), r));
        sb.push_back(sentence_stats(corpus::tokenize(b[i]), r));
    }
    BootstrapResult res;
    BleuStats ta, tb;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        ta += sa[i];
        tb += sb[i];
    }
    res.bleu_a = bleu_from_stats(ta);
    res.bleu_b = bleu_from_stats(tb);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, refs.size() - 1);
    std::size_t wins = 0;
    for (std::size_t s = 0; s < samples; ++s) {
        BleuStats xa, xb;
        for (std::size_t i = 0; i < refs.size(); ++i) {
            const std::size_t j = pick(rng);
            xa += sa[j];
            xb += sb[j];
        }
        wins += bleu_from_stats(xa) > bleu_from_stats(xb);
    }
    res.win_rate_a = static_cast<double>(wins) / static_cast<double>(samples);
    return res;
}

}  // namespace cts::eval
