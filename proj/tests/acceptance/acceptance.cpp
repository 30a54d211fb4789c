// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails. Pass criterion numbers as
// arguments to run a subset, e.g. `acceptance 1 2 8`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cts/autodiff/ops.hpp"
#include "cts/corpus/corpus_io.hpp"
#include "cts/corpus/synthetic.hpp"
#include "cts/corpus/vocabulary.hpp"
#include "cts/eval/decoding.hpp"
#include "cts/eval/evaluate.hpp"
#include "cts/eval/metrics.hpp"
#include "cts/model/checkpoint.hpp"
#include "cts/objectives/losses.hpp"
#include "cts/train/trainer.hpp"

namespace {

using namespace cts;
using Clock = std::chrono::steady_clock;

// ---- pinned tolerances and budgets
constexpr double kFdStep = 1e-5;
constexpr double kFdRelTol = 1e-4;
constexpr double kFdRelFloor = 1e-6;  // denominator floor for near-zero gradients
constexpr std::size_t kFdSamples = 64;
constexpr double kIdentityTol = 1e-12;
constexpr double kOverfitLoss = 0.05;
constexpr std::size_t kOverfitSteps = 500;
constexpr double kDaggerMargin = 0.05;
constexpr double kDaggerBudgetSeconds = 15 * 60;
constexpr double kGuidanceMargin = 3.0;
constexpr double kBleuTol = 1e-6;
constexpr double kF1Tol = 1e-9;
constexpr double kControlShare = 0.9;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct Verdict {
    bool pass = false;
    std::string detail;
};

// ---- shared fixtures

model::ModelConfig toy_config() {
    model::ModelConfig c;
    c.layers.d_model = 16;
    c.layers.n_heads = 2;
    c.layers.d_ff = 32;
    c.layers.n_enc_layers = 1;
    c.layers.n_dec_layers = 1;
    c.layers.dropout_p = 0.0;
    c.layers.max_positions = 64;
    return c;
}

struct Data {
    corpus::SyntheticCorpus corpus;
    corpus::Split split;
    corpus::Vocabulary vocab;
};

Data make_data(const corpus::SyntheticOptions& o) {
    Data d{corpus::generate_synthetic(o), {}, {}};
    d.split = corpus::split_corpus(d.corpus.conversations, o.seed);
    d.vocab = corpus::Vocabulary::build(d.split.train, d.corpus.strategies, 1);
    return d;
}

// Small corpora used whole, without a split.
Data toy_data(const corpus::SyntheticOptions& o) {
    Data d{corpus::generate_synthetic(o), {}, {}};
    d.vocab = corpus::Vocabulary::build(d.corpus.conversations, d.corpus.strategies, 1);
    return d;
}

// 2000 conversations, 5 strategies, cue noise 0.3, severe imbalance.
const Data& main_data() {
    static const Data d = make_data(corpus::SyntheticOptions{});
    return d;
}

train::TrainConfig main_recipe(std::uint64_t seed, double lambda) {
    train::TrainConfig c;
    c.schedule.warmup_steps = 50;
    c.schedule.total_steps = 350;
    c.max_epochs = 10;
    c.seed = seed;
    c.objective.weights.lambda = lambda;
    c.objective.direction = objectives::DistillDirection::Conventional;
    return c;
}

struct TrainedRun {
    std::unique_ptr<model::CtsModel> model;
    train::TrainResult result;
    double seconds = 0.0;
};

TrainedRun train_main(std::uint64_t seed, double lambda) {
    const Data& d = main_data();
    TrainedRun run;
    const auto t0 = Clock::now();
    run.model = std::make_unique<model::CtsModel>(model::ModelConfig{}, d.vocab, d.corpus.strategies, seed);
    train::Trainer trainer(*run.model, main_recipe(seed, lambda));
    trainer.on_epoch([&](const train::EpochRecord& e) {
        std::fprintf(stderr, "    seed %llu lambda %.1f epoch %zu valid %.4f (%.0fs)\n", static_cast<unsigned long long>(seed), lambda,
                     e.epoch, e.valid_loss, seconds_since(t0));
    });
    run.result = trainer.fit(run.model->encode(d.split.train), run.model->encode(d.split.valid));
    run.seconds = seconds_since(t0);
    return run;
}

// Criterion 4's run doubles as the lambda=1, seed=1 run of criterion 6.
TrainedRun& reference_run() {
    static TrainedRun run = train_main(1, 1.0);
    return run;
}

std::vector<std::vector<double>> parameter_values(const model::CtsModel& m) {
    std::vector<std::vector<double>> out;
    for (const auto& p : m.parameters()) out.push_back(p.tensor.to_vector());
    return out;
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// ---- criteria

Verdict gradient_correctness() {
    const auto t0 = Clock::now();
    corpus::SyntheticOptions o;
    o.n = 8;
    o.n_strategies = 2;
    o.seed = 5;
    const Data d = toy_data(o);
    model::CtsModel m(toy_config(), d.vocab, d.corpus.strategies, 11);
    const auto ex = m.encode(d.corpus.conversations);
    const auto batch = corpus::collate(std::span(ex).first(2), corpus::Vocabulary::kPad);
    objectives::ObjectiveOptions opt;
    opt.detach_teacher = false;  // exact gradient of the full objective
    auto loss = [&] { return objectives::joint_loss(m, batch, opt, model::CtsModel::eval_context()).total; };

    auto params = m.parameters();
    for (auto& p : params) p.tensor.zero_grad();
    loss().backward();

    std::vector<std::pair<std::size_t, std::size_t>> entries;
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < params[i].tensor.numel(); ++j) entries.emplace_back(i, j);
    std::mt19937_64 rng(2024);
    std::shuffle(entries.begin(), entries.end(), rng);
    entries.resize(kFdSamples);

    double worst = 0.0;
    std::string worst_name;
    for (const auto& [i, j] : entries) {
        auto& t = params[i].tensor;
        const double analytic = t.has_grad() ? t.grad()[j] : 0.0;
        auto data = t.mutable_data();
        const double saved = data[j];
        data[j] = saved + kFdStep;
        const double up = loss().item();
        data[j] = saved - kFdStep;
        const double down = loss().item();
        data[j] = saved;
        const double numeric = (up - down) / (2.0 * kFdStep);
        const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kFdRelFloor});
        if (rel > worst) {
            worst = rel;
            worst_name = params[i].name;
        }
    }
    const double secs = seconds_since(t0);
    return {worst < kFdRelTol && secs < 60.0,
            fmt("max relative error %.2e over %zu entries (worst in %s), tol %.0e, h %.0e, %.1fs", worst, entries.size(),
                worst_name.c_str(), kFdRelTol, kFdStep, secs)};
}

Verdict loss_identities() {
    using ad::Tensor;
    const Tensor one_hot = Tensor::from({1, 3}, {0.0, 1.0, 0.0});
    const double sd_one_hot = objectives::self_distillation_loss(one_hot, one_hot).item();
    const Tensor uniform = Tensor::from({1, 2}, {0.5, 0.5});
    const double sd_uniform = objectives::self_distillation_loss(uniform, uniform).item();

    corpus::SyntheticOptions o;
    o.n = 8;
    o.n_strategies = 2;
    const Data d = toy_data(o);
    const model::CtsModel m(toy_config(), d.vocab, d.corpus.strategies, 3);
    const auto ex = m.encode(d.corpus.conversations);
    const auto batch = corpus::collate(std::span(ex).first(4), corpus::Vocabulary::kPad);
    objectives::ObjectiveOptions opt;
    opt.weights = {1.0, 0.0, 0.0};
    const auto ctx = model::CtsModel::eval_context();
    const double joint = objectives::joint_loss(m, batch, opt, ctx).total_value;
    const auto enc = m.encode_source(batch.src, ctx);
    const auto pass = m.forward_target(enc, batch.tgt, model::GoldStrategy{batch.primary_golds()}, ctx);
    const double gen = objectives::generation_loss(pass.logits, objectives::next_token_labels(pass, corpus::Vocabulary::kPad),
                                                   corpus::Vocabulary::kPad)
                           .item();

    const double e1 = std::abs(sd_one_hot);
    const double e2 = std::abs(sd_uniform - std::log(2.0));
    const double e3 = std::abs(joint - gen);
    return {e1 == 0.0 && e2 <= kIdentityTol && e3 <= kIdentityTol,
            fmt("sd(one-hot)=%.1e, |sd(uniform)-ln2|=%.1e, |joint(1,0,0)-gen|=%.1e (tol %.0e)", e1, e2, e3, kIdentityTol)};
}

Verdict overfit_sanity() {
    corpus::SyntheticOptions o;
    o.n = 16;
    o.seed = 3;
    const auto data = corpus::generate_synthetic(o);
    const auto vocab = corpus::Vocabulary::build(data.conversations, data.strategies, 1);
    model::ModelConfig mc;
    mc.layers.dropout_p = 0.0;
    model::CtsModel m(mc, vocab, data.strategies, 1);
    const auto ex = m.encode(data.conversations);
    const auto batches = corpus::make_batches(ex, 4096, 1, corpus::Vocabulary::kPad);

    train::TrainConfig c;
    c.update_freq = 1;
    c.schedule.warmup_steps = 20;
    c.schedule.total_steps = kOverfitSteps;
    c.l2_coeff = 0.0;
    train::Trainer trainer(m, c);
    std::size_t steps = 0;
    double loss = trainer.validation_loss(batches);
    while (steps < kOverfitSteps && loss >= kOverfitLoss) {
        trainer.train_step(std::span(batches).subspan(steps % batches.size(), 1));
        ++steps;
        if (steps % 5 == 0 || steps == kOverfitSteps) loss = trainer.validation_loss(batches);
    }
    eval::EvalOptions eo;
    eo.setting = eval::Setting::GoldenTS;
    const double bleu = eval::evaluate(m, data.conversations, eo).bleu;
    return {loss < kOverfitLoss && bleu == 100.0,
            fmt("total loss %.4f after %zu steps (< %.2f within %zu), GoldenTS train BLEU %.2f (= 100)", loss, steps,
                kOverfitLoss, kOverfitSteps, bleu)};
}

Verdict dagger_effect() {
    const auto t0 = Clock::now();
    auto& run = reference_run();
    const auto& test = main_data().split.test;
    const auto src = eval::evaluate_prediction(*run.model, test, eval::PredictFrom::Source);
    const auto tgt = eval::evaluate_prediction(*run.model, test, eval::PredictFrom::Target);
    const double secs = std::max(seconds_since(t0), run.seconds);
    return {tgt.accuracy - src.accuracy >= kDaggerMargin && secs < kDaggerBudgetSeconds,
            fmt("target-side acc %.1f vs source-side acc %.1f (margin %.1f >= %.0f), %d epochs in %.0fs (< %.0fs)",
                100 * tgt.accuracy, 100 * src.accuracy, 100 * (tgt.accuracy - src.accuracy), 100 * kDaggerMargin,
                static_cast<int>(run.result.epochs), secs, kDaggerBudgetSeconds)};
}

Verdict strategy_guidance() {
    auto& run = reference_run();
    const auto& test = main_data().split.test;
    std::map<eval::Setting, double> bleu;
    for (auto s : {eval::Setting::WithoutTS, eval::Setting::GoldenTS, eval::Setting::NeedTSPredict}) {
        eval::EvalOptions o;
        o.setting = s;
        bleu[s] = eval::evaluate(*run.model, test, o).bleu;
    }
    const double none = bleu[eval::Setting::WithoutTS];
    const double gold = bleu[eval::Setting::GoldenTS];
    const double pred = bleu[eval::Setting::NeedTSPredict];
    return {gold >= none + kGuidanceMargin && pred >= none && pred <= gold,
            fmt("BLEU without_ts %.2f, need_ts_predict %.2f, golden_ts %.2f (golden >= without + %.0f, predict in between)",
                none, pred, gold, kGuidanceMargin)};
}

Verdict distillation_ablation() {
    const auto& test = main_data().split.test;
    std::vector<double> with, without;
    std::string per_seed;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        double f1_on = 0.0;
        if (seed == 1) {
            f1_on = eval::evaluate_prediction(*reference_run().model, test, eval::PredictFrom::Source).macro_f1;
        } else {
            f1_on = eval::evaluate_prediction(*train_main(seed, 1.0).model, test, eval::PredictFrom::Source).macro_f1;
        }
        const double f1_off = eval::evaluate_prediction(*train_main(seed, 0.0).model, test, eval::PredictFrom::Source).macro_f1;
        with.push_back(f1_on);
        without.push_back(f1_off);
        per_seed += fmt("%sseed %d: %.3f vs %.3f", seed == 1 ? "" : "; ", static_cast<int>(seed), f1_on, f1_off);
    }
    const double mean_on = std::accumulate(with.begin(), with.end(), 0.0) / 3.0;
    const double mean_off = std::accumulate(without.begin(), without.end(), 0.0) / 3.0;
    return {mean_on - mean_off > 0.0,
            fmt("source macro-F1 lambda=1 vs lambda=0 (conventional direction): %s; mean %.3f vs %.3f (gain %+.3f > 0)", per_seed.c_str(), mean_on,
                mean_off, mean_on - mean_off)};
}

Verdict frequency_baseline() {
    corpus::SyntheticOptions o;
    o.n_strategies = 8;
    o.imbalance = corpus::Imbalance::Severe;
    const Data d = make_data(o);
    std::vector<int> train_golds, test_golds;
    for (const auto& c : d.split.train) train_golds.push_back(c.primary_strategy());
    for (const auto& c : d.split.test) test_golds.push_back(c.primary_strategy());
    const int majority = eval::majority_class(train_golds, 8);
    const std::vector<int> pred(test_golds.size(), majority);
    const auto m = eval::strategy_metrics(test_golds, pred, 8);
    return {m.accuracy >= 0.5 && m.macro_f1 <= 0.2 * m.accuracy,
            fmt("8-strategy severe corpus, majority '%s': accuracy %.3f (>= 0.5), macro-F1 %.3f (<= %.3f)",
                d.corpus.strategies.name(majority).c_str(), m.accuracy, m.macro_f1, 0.2 * m.accuracy)};
}

Verdict decoding_and_metric_oracles() {
    auto& run = reference_run();
    const auto& test = main_data().split.test;
    std::size_t agree = 0;
    for (std::size_t i = 0; i < 50; ++i) {
        const auto src = run.model->assemble_source(test[i]);
        const model::Prompt prompt = model::GoldStrategy{{test[i].primary_strategy()}};
        const auto b = eval::beam_search(*run.model, src, prompt, {1, 48});
        const auto g = eval::greedy_decode(*run.model, src, prompt, 48);
        agree += b.tokens == g.tokens && std::abs(b.logp - g.logp) < 1e-12;
    }
    const double self = eval::corpus_bleu({"the cat sat on the mat", "a dog ran"}, {"the cat sat on the mat", "a dog ran"});
    const double hand = eval::corpus_bleu({"the cat sat on the mat", "a dog ran"}, {"the cat sat on a mat", "the dog ran away fast"});
    // 7/9, 4/7, 2/5, 1/3 clipped precisions; brevity penalty exp(1 - 11/9).
    const double hand_expected = 39.507465520836014;
    const std::vector<int> gold = {0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2};
    const std::vector<int> pred = {0, 0, 0, 0, 0, 1, 0, 0, 1, 1, 1, 2, 2, 2, 2, 2};
    const double f1 = eval::strategy_metrics(gold, pred, 3).macro_f1;
    const double f1_expected = 0.7527065527065527;
    const bool ok = agree == 50 && std::abs(self - 100.0) < kBleuTol && std::abs(hand - hand_expected) < kBleuTol &&
                    std::abs(f1 - f1_expected) < kF1Tol;
    return {ok, fmt("beam=1 == greedy on %zu/50, BLEU(x,x)=%.6f, hand BLEU %.9f vs %.9f, macro-F1 %.12f vs %.12f", agree, self,
                    hand, hand_expected, f1, f1_expected)};
}

Verdict determinism_and_persistence() {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / fmt("cts-acceptance-%d", static_cast<int>(std::random_device{}() % 100000));
    fs::create_directories(dir);
    corpus::SyntheticOptions o;
    o.n = 24;
    o.n_strategies = 3;
    const auto data = corpus::generate_synthetic(o);
    const auto vocab = corpus::Vocabulary::build(data.conversations, data.strategies, 1);
    auto cfg = toy_config();
    cfg.layers.dropout_p = 0.1;
    train::TrainConfig tc;
    tc.update_freq = 2;
    tc.max_tokens = 64;
    tc.schedule.warmup_steps = 2;
    tc.schedule.total_steps = 100;

    auto steps = [&](model::CtsModel& m, train::Trainer& t, std::size_t from, std::size_t n) {
        const auto batches = corpus::make_batches(m.encode(data.conversations), tc.max_tokens, 1, corpus::Vocabulary::kPad);
        for (std::size_t s = from; s < from + n; ++s) t.train_step(std::span(batches).subspan((2 * s) % (batches.size() - 1), 2));
    };

    // identical seeds, identical training -> identical checkpoint bytes
    std::vector<std::string> bytes;
    for (int rep = 0; rep < 2; ++rep) {
        model::CtsModel m(cfg, vocab, data.strategies, 42);
        train::Trainer t(m, tc);
        steps(m, t, 0, 3);
        const auto path = (dir / fmt("seed-%d.ckpt", rep)).string();
        model::write_checkpoint(path, t.state_checkpoint());
        bytes.push_back(file_bytes(path));
    }
    const bool same_seed = bytes[0] == bytes[1];

    // save after 3 steps, reload, take one more step; compare with uninterrupted
    model::CtsModel straight(cfg, vocab, data.strategies, 42);
    train::Trainer ts(straight, tc);
    steps(straight, ts, 0, 3);
    const auto state_path = (dir / "state.ckpt").string();
    model::write_checkpoint(state_path, ts.state_checkpoint());
    steps(straight, ts, 3, 1);

    const auto state = model::read_checkpoint(state_path);
    model::CtsModel resumed = model::load_model(state);
    train::Trainer tr(resumed, tc);
    tr.restore_state(state);
    steps(resumed, tr, 3, 1);

    model::write_checkpoint((dir / "a.ckpt").string(), ts.state_checkpoint());
    model::write_checkpoint((dir / "b.ckpt").string(), tr.state_checkpoint());
    const bool resume_exact = parameter_values(straight) == parameter_values(resumed) &&
                              file_bytes((dir / "a.ckpt").string()) == file_bytes((dir / "b.ckpt").string());
    std::error_code ec;
    fs::remove_all(dir, ec);
    return {same_seed && resume_exact,
            fmt("same-seed checkpoints %s (%zu bytes); resume-then-step %s", same_seed ? "identical" : "DIFFER", bytes[0].size(),
                resume_exact ? "bit-identical" : "DIVERGES")};
}

Verdict controllability() {
    auto& run = reference_run();
    const auto& test = main_data().split.test;
    const auto& strategies = run.model->strategies();
    const std::vector<model::StrategyWeight> first = {{0, 1.0}};
    const std::vector<model::StrategyWeight> second = {{1, 1.0}};
    const eval::DecodeOptions opts;
    std::size_t differ = 0;
    const std::size_t n = std::min<std::size_t>(100, test.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto src = run.model->assemble_source(test[i]);
        differ += eval::generate_with_strategies(*run.model, src, first, opts).tokens !=
                  eval::generate_with_strategies(*run.model, src, second, opts).tokens;
    }
    const double share = static_cast<double>(differ) / static_cast<double>(n);
    return {share >= kControlShare, fmt("'%s' vs '%s' responses differ on %zu/%zu held-out contexts (%.0f%% >= %.0f%%)",
                                        strategies.name(0).c_str(), strategies.name(1).c_str(), differ, n, 100 * share,
                                        100 * kControlShare)};
}

struct Criterion {
    int id;
    const char* name;
    std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all = {
        {1, "gradient correctness", gradient_correctness},
        {2, "loss identities", loss_identities},
        {3, "overfit sanity", overfit_sanity},
        {4, "target-side prediction beats source-side", dagger_effect},
        {5, "strategy guidance improves generation", strategy_guidance},
        {6, "distillation ablation", distillation_ablation},
        {7, "frequency-baseline pattern", frequency_baseline},
        {8, "decoding and metric oracles", decoding_and_metric_oracles},
        {9, "determinism and persistence", determinism_and_persistence},
        {10, "strategy controllability", controllability},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& c : all) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        const auto t0 = Clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        failures += !v.pass;
        std::printf("%s [%2d] %s: %s (%.1fs)\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
