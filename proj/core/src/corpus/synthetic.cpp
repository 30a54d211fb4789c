#include "cts/corpus/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>

namespace cts::corpus {

namespace {

struct Lexeme {
    const char* en;
    const char* it;
};

constexpr std::array<Lexeme, 16> kObjects{{{"apple", "mela"},
                                           {"house", "casa"},
                                           {"dog", "cane"},
                                           {"cat", "gatto"},
                                           {"book", "libro"},
                                           {"table", "tavolo"},
                                           {"tree", "albero"},
                                           {"bread", "pane"},
                                           {"water", "acqua"},
                                           {"car", "macchina"},
                                           {"window", "finestra"},
                                           {"chair", "sedia"},
                                           {"red", "rosso"},
                                           {"green", "verde"},
                                           {"blue", "blu"},
                                           {"friend", "amico"}}};

constexpr std::array<const char*, 8> kNames{"Hint",        "Question",      "Correction", "Confirmation",
                                            "Explanation", "Encouragement", "Revoicing",  "Pressing"};

// Two cue phrases per strategy; every phrase has a distinct leading bigram.
constexpr std::array<std::array<const char*, 2>, 8> kCues{{{"i am stuck on", "no idea about"},
                                                          {"let me guess", "quiz me on"},
                                                          {"i said", "my answer was"},
                                                          {"i believe it is", "surely it is"},
                                                          {"why is it", "explain again"},
                                                          {"this is hard", "i feel lost with"},
                                                          {"so basically", "in other words"},
                                                          {"i just guessed", "random guess for"}}};

// {E} = English object, {I} = Italian translation.
constexpr std::array<const char*, 8> kTemplates{"here is a hint : the word for {E} starts like {I}",
                                                "what do you think {E} is in italian ?",
                                                "not quite , {E} is {I} in italian .",
                                                "yes , {I} is correct for {E} .",
                                                "we use {I} because it names the {E} .",
                                                "good effort ! keep going with {E} .",
                                                "so you mean {E} is {I} ?",
                                                "why did you choose that word for {E} ?"};

constexpr std::array<std::array<const char*, 2>, 3> kOpeners{{{"hello ! today we practice italian words .", "ok , i am ready ."},
                                                              {"welcome back , shall we continue ?", "yes please ."},
                                                              {"let us work on some vocabulary .", "sure , go ahead ."}}};

constexpr std::array<const char*, 3> kAsks{"how do you say {E} in italian ?", "can you translate {E} for me ?",
                                           "please tell me the italian word for {E} ."};

std::string fill(std::string_view tmpl, const Lexeme& obj) {
    std::string out;
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
        if (tmpl[i] == '{' && i + 2 < tmpl.size() && tmpl[i + 2] == '}') {
            out += tmpl[i + 1] == 'E' ? obj.en : obj.it;
            i += 2;
        } else {
            out += tmpl[i];
        }
    }
    return out;
}

std::string cue_phrase(std::size_t strategy, std::size_t variant) {
    if (strategy < kCues.size()) return kCues[strategy][variant];
    return "cue" + std::to_string(strategy) + (variant == 0 ? " alpha" : " beta");
}

std::string response_template(std::size_t strategy) {
    if (strategy < kTemplates.size()) return kTemplates[strategy];
    return "move" + std::to_string(strategy) + " answer for {E} is {I} .";
}

// Library-independent draws so corpora are byte-identical across toolchains.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

std::size_t categorical(std::mt19937_64& rng, const std::vector<double>& probs) {
    const double u = uniform01(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    return probs.size() - 1;
}

}  // namespace

std::string_view to_string(Imbalance i) {
    switch (i) {
        case Imbalance::Uniform: return "uniform";
        case Imbalance::Mild: return "mild";
        case Imbalance::Severe: return "severe";
    }
    return "uniform";
}

std::optional<Imbalance> parse_imbalance(std::string_view s) {
    if (s == "uniform") return Imbalance::Uniform;
    if (s == "mild") return Imbalance::Mild;
    if (s == "severe") return Imbalance::Severe;
    return std::nullopt;
}

std::vector<double> imbalance_profile(Imbalance profile, std::size_t n) {
    std::vector<double> p(n, 0.0);
    if (n == 0) return p;
    switch (profile) {
        case Imbalance::Uniform:
            for (auto& v : p) v = 1.0 / static_cast<double>(n);
            return p;
        case Imbalance::Mild: {
            double z = 0.0;
            for (std::size_t k = 0; k < n; ++k) z += p[k] = 1.0 / std::sqrt(static_cast<double>(k + 1));
            for (auto& v : p) v /= z;
            return p;
        }
        case Imbalance::Severe: {
            if (n == 1) return {1.0};
            p[0] = 0.6;
            double z = 0.0;
            for (std::size_t k = 1; k < n; ++k) z += 1.0 / static_cast<double>(k);
            for (std::size_t k = 1; k < n; ++k) p[k] = 0.4 / (static_cast<double>(k) * z);
            return p;
        }
    }
    return p;
}

std::string synthetic_strategy_name(std::size_t index) {
    if (index < kNames.size()) return kNames[index];
    return "Move" + std::to_string(index);
}

SyntheticCorpus generate_synthetic(const SyntheticOptions& o) {
    if (o.n_strategies < 2) throw ValidationError("synthetic corpus needs at least two strategies");
    if (o.cue_noise < 0.0 || o.cue_noise > 1.0) throw ValidationError("cue_noise must lie in [0, 1]");

    std::vector<std::string> names;
    for (std::size_t k = 0; k < o.n_strategies; ++k) names.push_back(synthetic_strategy_name(k));
    SyntheticCorpus out{StrategyList(std::move(names)), {}};

    const auto prior = imbalance_profile(o.imbalance, o.n_strategies);
    std::mt19937_64 rng(o.seed);
    out.conversations.reserve(o.n);
    for (std::size_t i = 0; i < o.n; ++i) {
        const std::size_t gold = categorical(rng, prior);
        const Lexeme& obj = kObjects[uniform_index(rng, kObjects.size())];
        const bool noisy = uniform01(rng) < o.cue_noise;
        const std::size_t cue = noisy ? uniform_index(rng, o.n_strategies) : gold;
        const std::size_t variant = uniform_index(rng, 2);
        const bool with_opener = uniform01(rng) < 0.5;
        const std::size_t opener = uniform_index(rng, kOpeners.size());
        const std::size_t ask = uniform_index(rng, kAsks.size());

        Conversation c;
        char id[48];
        std::snprintf(id, sizeof id, "syn-%llu-%05zu", static_cast<unsigned long long>(o.seed), i);
        c.id = id;
        if (with_opener) {
            c.turns.push_back({Speaker::Tutor, kOpeners[opener][0]});
            c.turns.push_back({Speaker::Student, kOpeners[opener][1]});
        }
        c.turns.push_back({Speaker::Tutor, fill(kAsks[ask], obj)});
        c.turns.push_back({Speaker::Student, cue_phrase(cue, variant) + " " + obj.en});
        c.gold_strategies = {static_cast<int>(gold)};
        c.target = fill(response_template(gold), obj);
        out.conversations.push_back(std::move(c));
    }
    return out;
}

}  // namespace cts::corpus
