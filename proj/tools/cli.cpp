#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "cts/corpus/corpus_io.hpp"
#include "cts/corpus/synthetic.hpp"
#include "cts/corpus/vocabulary.hpp"
#include "cts/eval/evaluate.hpp"
#include "cts/eval/metrics.hpp"
#include "cts/model/checkpoint.hpp"

namespace cts::cli {

namespace fs = std::filesystem;
using nlohmann::json;

json to_json(const RunConfig& c) {
    return {{"model", model::to_json(c.model)},
            {"train", train::to_json(c.train)},
            {"data",
             {{"train", c.train_path},
              {"valid", c.valid_path},
              {"strategies", c.strategies_path},
              {"min_freq", c.min_freq}}},
            {"decode", {{"theta", c.theta}, {"beam", c.decode.beam}, {"max_len", c.decode.max_len}}}};
}

namespace {

void reject_unknown_keys(const json& given, const json& known, const std::string& where) {
    if (!given.is_object()) throw ValidationError("config section '" + where + "' must be an object");
    for (const auto& [key, value] : given.items()) {
        if (!known.contains(key)) throw ValidationError("unknown config key '" + where + key + "'");
        if (known.at(key).is_object()) reject_unknown_keys(value, known.at(key), where + key + ".");
    }
}

}  // namespace

RunConfig run_config_from_json(const json& j, RunConfig base) {
    json merged = to_json(base);
    reject_unknown_keys(j, merged, "");
    merged.merge_patch(j);
    // vocab_size is derived from the training corpus, never configured.
    merged["model"]["vocab_size"] = 0;

    RunConfig c;
    c.model = model::model_config_from_json(merged.at("model"));
    c.train = train::train_config_from_json(merged.at("train"));
    const json& data = merged.at("data");
    c.train_path = data.at("train").get<std::string>();
    c.valid_path = data.at("valid").get<std::string>();
    c.strategies_path = data.at("strategies").get<std::string>();
    c.min_freq = data.at("min_freq").get<std::size_t>();
    const json& decode = merged.at("decode");
    c.theta = decode.at("theta").get<double>();
    c.decode.beam = decode.at("beam").get<std::size_t>();
    c.decode.max_len = decode.at("max_len").get<std::size_t>();

    if (!(c.theta > 0.0 && c.theta <= 1.0)) throw ValidationError("theta must lie in (0, 1]");
    if (c.decode.beam == 0) throw ValidationError("beam must be at least 1");
    if (c.decode.max_len == 0) throw ValidationError("max_len must be at least 1");
    if (c.min_freq == 0) throw ValidationError("min_freq must be at least 1");
    c.train.validate();
    return c;
}

namespace {

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw ValidationError(what + " path is required");
    if (!fs::is_regular_file(path)) throw ValidationError(what + " not found: " + path);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeError("cannot write " + path.string());
    out << text;
    if (!out) throw RuntimeError("write failed for " + path.string());
}

json parse_scalar(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error&) {
        return text;
    }
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::string out_dir;
    corpus::SyntheticOptions options;
    std::string imbalance = "severe";
};

int cmd_synth(SynthArgs& a, std::ostream& out) {
    const auto profile = corpus::parse_imbalance(a.imbalance);
    if (!profile) throw ValidationError("--imbalance must be uniform, mild or severe");
    a.options.imbalance = *profile;
    const auto data = corpus::generate_synthetic(a.options);
    const auto split = corpus::split_corpus(data.conversations, a.options.seed);

    std::error_code ec;
    fs::create_directories(a.out_dir, ec);
    if (ec) throw RuntimeError("cannot create " + a.out_dir + ": " + ec.message());
    const fs::path dir(a.out_dir);
    data.strategies.save((dir / "strategies.txt").string());
    corpus::save_corpus((dir / "train.jsonl").string(), split.train, data.strategies);
    corpus::save_corpus((dir / "valid.jsonl").string(), split.valid, data.strategies);
    corpus::save_corpus((dir / "test.jsonl").string(), split.test, data.strategies);
    out << "wrote " << split.train.size() << '/' << split.valid.size() << '/' << split.test.size()
        << " conversations and " << data.strategies.size() << " strategies to " << dir.string() << '\n';
    return kOk;
}

// ---------------------------------------------------------------- stats

struct StatsArgs {
    std::string corpus;
    std::string strategies;
};

int cmd_stats(const StatsArgs& a, std::ostream& out) {
    require_file(a.strategies, "strategy list");
    require_file(a.corpus, "corpus");
    const auto strategies = corpus::StrategyList::load(a.strategies);
    const auto convs = corpus::load_corpus(a.corpus, strategies);
    if (convs.empty()) throw ValidationError("corpus is empty: " + a.corpus);

    std::vector<int> golds;
    std::vector<std::size_t> counts(strategies.size(), 0);
    for (const auto& c : convs) {
        golds.push_back(c.primary_strategy());
        ++counts[c.primary_strategy()];
    }
    const int majority = eval::majority_class(golds, strategies.size());
    const std::vector<int> baseline(golds.size(), majority);
    const auto m = eval::strategy_metrics(golds, baseline, strategies.size());

    json count_obj = json::object();
    for (std::size_t k = 0; k < counts.size(); ++k) count_obj[strategies.name(static_cast<int>(k))] = counts[k];
    const json report = {{"n", convs.size()},
                         {"counts", count_obj},
                         {"majority", strategies.name(majority)},
                         {"majority_share", static_cast<double>(counts[majority]) / static_cast<double>(convs.size())},
                         {"frequency_baseline", {{"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}}}};
    out << report.dump(2) << '\n';
    return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string config_file;
    std::string run_dir;
    bool resume = false;
    bool ablate_distill = false;
    bool attach_teacher = false;
    bool share_decoders = false;
    std::vector<std::string> grid;
    std::map<std::string, std::string> overrides;  // "section.key" -> raw flag text
};

json override_patch(const TrainArgs& a) {
    json patch = json::object();
    for (const auto& [path, raw] : a.overrides) {
        const auto dot = path.find('.');
        patch[path.substr(0, dot)][path.substr(dot + 1)] = parse_scalar(raw);
    }
    // Paths are always strings, even when they look like numbers.
    for (const char* key : {"train", "valid", "strategies"}) {
        if (patch.contains("data") && patch["data"].contains(key)) {
            patch["data"][key] = a.overrides.at(std::string("data.") + key);
        }
    }
    if (a.share_decoders) patch["model"]["share_decoders"] = true;
    if (a.attach_teacher) patch["train"]["detach_teacher"] = false;
    if (a.ablate_distill) patch["train"]["lambda"] = 0.0;
    return patch;
}

RunConfig resolve_config(const TrainArgs& a) {
    json file = json::object();
    if (!a.config_file.empty()) {
        require_file(a.config_file, "config file");
        std::ifstream in(a.config_file);
        try {
            file = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ValidationError("config file " + a.config_file + " is not valid JSON: " + e.what());
        }
    }
    file.merge_patch(override_patch(a));
    return run_config_from_json(file);
}

train::ValidationScorer make_scorer(const RunConfig& cfg, const std::vector<corpus::Conversation>& valid) {
    switch (cfg.train.stop_metric) {
        case train::StopMetric::MacroF1:
            return [&valid](const model::CtsModel& m) {
                return eval::evaluate_prediction(m, valid, eval::PredictFrom::Source).macro_f1;
            };
        case train::StopMetric::Bleu:
            return [&valid, &cfg](const model::CtsModel& m) {
                eval::EvalOptions o;
                o.theta = cfg.theta;
                o.decode = cfg.decode;
                return eval::evaluate(m, valid, o).bleu;
            };
        case train::StopMetric::ValidLoss: break;
    }
    return {};
}

train::TrainResult train_once(const RunConfig& cfg, const fs::path& run_dir, bool resume, std::ostream& out) {
    require_file(cfg.strategies_path, "strategy list");
    require_file(cfg.train_path, "training corpus");
    require_file(cfg.valid_path, "validation corpus");
    const auto strategies = corpus::StrategyList::load(cfg.strategies_path);
    const auto train_set = corpus::load_corpus(cfg.train_path, strategies);
    const auto valid_set = corpus::load_corpus(cfg.valid_path, strategies);
    if (train_set.empty() || valid_set.empty()) throw ValidationError("training and validation corpora must be non-empty");

    std::error_code ec;
    fs::create_directories(run_dir, ec);
    if (ec) throw RuntimeError("cannot create run directory " + run_dir.string() + ": " + ec.message());
    write_text(run_dir / "config.echo", to_json(cfg).dump(2) + "\n");

    const fs::path state_path = run_dir / "state.ckpt";
    const bool resuming = resume && fs::exists(state_path);
    std::optional<model::Checkpoint> state;
    if (resuming) state = model::read_checkpoint(state_path.string());
    model::CtsModel model = state ? model::load_model(*state)
                                  : model::CtsModel(cfg.model, corpus::Vocabulary::build(train_set, strategies, cfg.min_freq),
                                                    strategies, cfg.train.seed);
    if (model.strategies() != strategies) throw ValidationError("state checkpoint was trained with a different strategy list");

    train::Trainer trainer(model, cfg.train);
    if (state) trainer.restore_state(*state);
    trainer.set_scorer(make_scorer(cfg, valid_set));

    const auto mode = resuming ? std::ios::app : std::ios::trunc;
    std::ofstream step_log(run_dir / "train.log", std::ios::binary | mode);
    std::ofstream epoch_log(run_dir / "epochs.log", std::ios::binary | mode);
    if (!step_log || !epoch_log) throw RuntimeError("cannot open logs in " + run_dir.string());
    trainer.on_step([&](const train::StepRecord& r) { step_log << train::to_json(r).dump() << '\n'; });
    trainer.on_epoch([&](const train::EpochRecord& r) {
        epoch_log << train::to_json(r).dump() << '\n';
        step_log.flush();
        epoch_log.flush();
        model::write_checkpoint(state_path.string(), trainer.state_checkpoint());
        out << "epoch " << r.epoch << std::fixed << std::setprecision(4) << "  train " << r.train_median_total
            << "  valid " << r.valid_loss << "  score " << r.score << (r.improved ? "  *" : "") << '\n'
            << std::defaultfloat;
    });

    out << "training " << model.parameter_count() << " parameters on " << train_set.size() << " conversations"
        << (resuming ? " (resumed at step " + std::to_string(trainer.progress().step) + ")" : "") << '\n';
    const auto result = trainer.fit(model.encode(train_set), model.encode(valid_set));
    model::write_checkpoint((run_dir / "best.ckpt").string(), model::model_checkpoint(model));
    const json summary = {{"epochs", result.epochs},
                          {"steps", result.steps},
                          {"best_epoch", result.best_epoch},
                          {"best_score", result.best_score},
                          {"stopped_early", result.stopped_early}};
    write_text(run_dir / "summary.json", summary.dump(2) + "\n");
    out << "best epoch " << result.best_epoch << " of " << result.epochs << ", checkpoint "
        << (run_dir / "best.ckpt").string() << '\n';
    return result;
}

struct GridAxis {
    std::string section;
    std::string key;
    std::vector<json> values;
};

std::vector<GridAxis> parse_grid(const std::vector<std::string>& entries, const RunConfig& base) {
    const json known = to_json(base);
    std::vector<GridAxis> axes;
    for (const auto& entry : entries) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == entry.size()) {
            throw ValidationError("--grid expects KEY=V1,V2,... but got '" + entry + "'");
        }
        GridAxis axis;
        std::string key = entry.substr(0, eq);
        if (const auto dot = key.find('.'); dot != std::string::npos) {
            axis.section = key.substr(0, dot);
            axis.key = key.substr(dot + 1);
        } else {
            for (const char* section : {"train", "model", "decode"}) {
                if (known.at(section).contains(key)) {
                    axis.section = section;
                    break;
                }
            }
            axis.key = key;
        }
        if (axis.section.empty() || !known.contains(axis.section) || !known.at(axis.section).contains(axis.key)) {
            throw ValidationError("--grid key '" + key + "' is not a config key");
        }
        std::stringstream values(entry.substr(eq + 1));
        for (std::string v; std::getline(values, v, ',');) axis.values.push_back(parse_scalar(v));
        axes.push_back(std::move(axis));
    }
    return axes;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
    const RunConfig cfg = resolve_config(a);
    const fs::path run_dir(a.run_dir);
    if (a.grid.empty()) {
        train_once(cfg, run_dir, a.resume, out);
        return kOk;
    }

    const auto axes = parse_grid(a.grid, cfg);
    std::size_t combos = 1;
    for (const auto& ax : axes) combos *= ax.values.size();
    json runs = json::array();
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < combos; ++i) {
        json patch = json::object();
        json chosen = json::object();
        for (std::size_t r = i, k = 0; k < axes.size(); ++k) {
            const auto& ax = axes[k];
            const json& v = ax.values[r % ax.values.size()];
            r /= ax.values.size();
            patch[ax.section][ax.key] = v;
            chosen[ax.section + "." + ax.key] = v;
        }
        const RunConfig point = run_config_from_json(patch, cfg);
        const std::string name = "grid-" + std::to_string(i);
        out << "== " << name << ' ' << chosen.dump() << '\n';
        const auto result = train_once(point, run_dir / name, a.resume, out);
        runs.push_back({{"run", name}, {"overrides", chosen}, {"best_score", result.best_score}, {"best_epoch", result.best_epoch}});
        if (result.best_score > best_score) {
            best_score = result.best_score;
            best = i;
        }
    }
    const json summary = {{"runs", runs}, {"best", runs[best].at("run")}, {"best_score", best_score}};
    write_text(run_dir / "grid.json", summary.dump(2) + "\n");
    out << "best grid point: " << runs[best].dump() << '\n';
    return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string checkpoint;
    std::string corpus;
    std::string strategies;
    std::string setting = "need_ts_predict";
    std::string predict_from = "source";
    std::string out_dir;
    double theta = 0.3;
    eval::DecodeOptions decode;
    std::size_t batch_size = 32;
};

model::CtsModel load_checked(const std::string& checkpoint, const std::string& strategies_path) {
    require_file(checkpoint, "checkpoint");
    model::CtsModel m = model::load_model(model::read_checkpoint(checkpoint));
    if (!strategies_path.empty()) {
        require_file(strategies_path, "strategy list");
        if (corpus::StrategyList::load(strategies_path) != m.strategies()) {
            throw ValidationError("strategy list " + strategies_path + " differs from the one stored in " + checkpoint);
        }
    }
    return m;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const auto from = eval::parse_predict_from(a.predict_from);
    if (!from) throw ValidationError("--predict-from must be source or target");
    std::vector<eval::Setting> settings;
    if (a.setting == "all") {
        settings = {eval::Setting::WithoutTS, eval::Setting::GoldenTS, eval::Setting::NeedTSPredict};
    } else if (const auto s = eval::parse_setting(a.setting)) {
        settings = {*s};
    } else {
        throw ValidationError("--setting must be without_ts, golden_ts, need_ts_predict or all");
    }
    if (!(a.theta > 0.0 && a.theta <= 1.0)) throw ValidationError("--theta must lie in (0, 1]");
    if (a.decode.beam == 0 || a.decode.max_len == 0) throw ValidationError("--beam and --max-len must be positive");

    const model::CtsModel model = load_checked(a.checkpoint, a.strategies);
    require_file(a.corpus, "corpus");
    const auto convs = corpus::load_corpus(a.corpus, model.strategies());

    const fs::path dir = a.out_dir.empty() ? fs::path(a.checkpoint).parent_path() : fs::path(a.out_dir);
    std::error_code ec;
    if (!dir.empty()) fs::create_directories(dir, ec);
    if (ec) throw RuntimeError("cannot create " + dir.string() + ": " + ec.message());

    for (const auto setting : settings) {
        eval::EvalOptions o;
        o.setting = setting;
        o.predict_from = *from;
        o.theta = a.theta;
        o.decode = a.decode;
        o.batch_size = a.batch_size;
        const auto report = eval::evaluate(model, convs, o);
        std::string stem = "eval." + std::string(eval::to_string(setting));
        if (*from == eval::PredictFrom::Target) stem += ".from_target";
        write_text(dir / (stem + ".report"), eval::to_json(report).dump(2) + "\n");
        write_text(dir / (stem + ".table"), eval::format_table(report));
        write_text(dir / (stem + ".jsonl"), eval::per_example_jsonl(report));
        out << eval::format_table(report) << '\n';
    }
    return kOk;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
    std::string checkpoint;
    std::string context;
    std::vector<std::string> turns;
    std::string context_file;
    std::string force_strategy;
    double theta = 0.3;
    eval::DecodeOptions decode;
};

corpus::Turn parse_turn(const std::string& line) {
    const auto colon = line.find(':');
    if (colon != std::string::npos) {
        if (const auto speaker = corpus::parse_speaker(corpus::normalize_whitespace(line.substr(0, colon)))) {
            return {*speaker, corpus::normalize_whitespace(line.substr(colon + 1))};
        }
    }
    return {corpus::Speaker::Student, corpus::normalize_whitespace(line)};
}

std::string format_weights(const model::CtsModel& m, std::vector<model::StrategyWeight> ws) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    for (std::size_t i = 0; i < ws.size(); ++i) os << (i ? ", " : "") << m.strategies().name(ws[i].strategy) << ' ' << ws[i].weight;
    return os.str();
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
    const model::CtsModel model = load_checked(a.checkpoint, "");
    corpus::Conversation conv;
    conv.id = "cli";
    conv.gold_strategies = {0};
    if (!a.context_file.empty()) {
        require_file(a.context_file, "context file");
        std::ifstream in(a.context_file);
        for (std::string line; std::getline(in, line);) {
            if (!corpus::normalize_whitespace(line).empty()) conv.turns.push_back(parse_turn(line));
        }
    }
    for (const auto& t : a.turns) conv.turns.push_back(parse_turn(t));
    if (!a.context.empty()) conv.turns.push_back({corpus::Speaker::Student, corpus::normalize_whitespace(a.context)});
    conv.turns.erase(std::remove_if(conv.turns.begin(), conv.turns.end(), [](const auto& t) { return t.text.empty(); }),
                     conv.turns.end());
    if (conv.turns.empty()) throw ValidationError("provide a context with --context, --turn or --context-file");
    if (!(a.theta > 0.0 && a.theta <= 1.0)) throw ValidationError("--theta must lie in (0, 1]");
    if (a.decode.beam == 0 || a.decode.max_len == 0) throw ValidationError("--beam and --max-len must be positive");

    const auto src = model.assemble_source(conv);
    if (!a.force_strategy.empty()) {
        const auto idx = model.strategies().index_of(a.force_strategy);
        if (!idx) {
            std::string valid;
            for (const auto& n : model.strategies().names()) valid += (valid.empty() ? "" : ", ") + n;
            throw ValidationError("unknown strategy '" + a.force_strategy + "'; valid strategies: " + valid);
        }
        const std::vector<model::StrategyWeight> forced = {{*idx, 1.0}};
        const auto hyp = eval::generate_with_strategies(model, src, forced, a.decode);
        out << "strategies: " << format_weights(model, forced) << " (forced)\n";
        out << "response: " << model.vocab().decode(hyp.content()) << '\n';
        return kOk;
    }

    const auto result = eval::pipeline_generate(model, src, eval::Setting::NeedTSPredict, a.theta, a.decode);
    std::vector<model::StrategyWeight> dist;
    for (std::size_t k = 0; k < result.source_probs.size(); ++k) dist.push_back({static_cast<int>(k), result.source_probs[k]});
    std::stable_sort(dist.begin(), dist.end(), [](const auto& x, const auto& y) { return x.weight > y.weight; });
    out << "predicted: " << format_weights(model, dist) << '\n';
    out << "strategies: " << format_weights(model, result.strategies) << '\n';
    out << "response: " << model.vocab().decode(result.hypothesis.content()) << '\n';
    return kOk;
}

// ---------------------------------------------------------------- wiring

void add_decode_options(CLI::App* cmd, double& theta, eval::DecodeOptions& decode) {
    cmd->add_option("--theta", theta, "Strategy selection threshold")->capture_default_str();
    cmd->add_option("--beam", decode.beam, "Beam width")->capture_default_str();
    cmd->add_option("--max-len", decode.max_len, "Maximum generated tokens, </s> included")->capture_default_str();
}

void add_override(CLI::App* cmd, TrainArgs& a, const std::string& flag, const std::string& path, const std::string& help) {
    cmd->add_option_function<std::string>(
           flag, [&a, path](const std::string& v) { a.overrides[path] = v; }, help + " [" + path + "]")
        ->type_name("VALUE")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app("Joint teaching-strategy prediction and tutor-response generation", "cts");
    app.require_subcommand(1);
    app.footer(
        "Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.\n"
        "Training configuration precedence: built-in defaults < --config file < individual flags.");

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus split 8:1:1");
    synth_cmd->add_option("--out", synth.out_dir, "Output directory")->required();
    synth_cmd->add_option("--n", synth.options.n, "Number of conversations")->capture_default_str();
    synth_cmd->add_option("--strategies", synth.options.n_strategies, "Number of strategies")->capture_default_str();
    synth_cmd->add_option("--seed", synth.options.seed, "Generator and split seed")->capture_default_str();
    synth_cmd->add_option("--noise", synth.options.cue_noise, "Cue noise in [0, 1]")->capture_default_str();
    synth_cmd->add_option("--imbalance", synth.imbalance, "uniform | mild | severe")->capture_default_str();

    StatsArgs stats;
    auto* stats_cmd = app.add_subcommand("stats", "Label distribution and frequency-baseline scores of a corpus");
    stats_cmd->add_option("--corpus", stats.corpus, "Corpus file")->required();
    stats_cmd->add_option("--strategies", stats.strategies, "Strategy list file")->required();

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train a model into a run directory");
    train_cmd->add_option("--run-dir", tr.run_dir, "Run directory")->required();
    train_cmd->add_option("--config", tr.config_file, "JSON config with sections model/train/data/decode");
    add_override(train_cmd, tr, "--train", "data.train", "Training corpus");
    add_override(train_cmd, tr, "--valid", "data.valid", "Validation corpus");
    add_override(train_cmd, tr, "--strategies", "data.strategies", "Strategy list file");
    add_override(train_cmd, tr, "--min-freq", "data.min_freq", "Minimum token frequency for the vocabulary");
    add_override(train_cmd, tr, "--d-model", "model.d_model", "Model width");
    add_override(train_cmd, tr, "--heads", "model.n_heads", "Attention heads");
    add_override(train_cmd, tr, "--d-ff", "model.d_ff", "Feed-forward width");
    add_override(train_cmd, tr, "--enc-layers", "model.n_enc_layers", "Encoder layers");
    add_override(train_cmd, tr, "--dec-layers", "model.n_dec_layers", "Layers per decoder");
    add_override(train_cmd, tr, "--dropout", "model.dropout", "Dropout probability");
    add_override(train_cmd, tr, "--max-positions", "model.max_positions", "Longest encoder input");
    add_override(train_cmd, tr, "--lr", "train.lr_peak", "Peak learning rate");
    add_override(train_cmd, tr, "--warmup", "train.warmup_steps", "Warmup updates");
    add_override(train_cmd, tr, "--total-steps", "train.total_steps", "Updates until the decay reaches end_lr");
    add_override(train_cmd, tr, "--end-lr", "train.end_lr", "Final learning rate");
    add_override(train_cmd, tr, "--epochs", "train.max_epochs", "Maximum epochs");
    add_override(train_cmd, tr, "--patience", "train.patience", "Epochs without improvement before stopping");
    add_override(train_cmd, tr, "--update-freq", "train.update_freq", "Micro-batches per update");
    add_override(train_cmd, tr, "--max-tokens", "train.max_tokens", "Padded source tokens per micro-batch");
    add_override(train_cmd, tr, "--seed", "train.seed", "Seed for initialization, batching and dropout");
    add_override(train_cmd, tr, "--l2", "train.l2_coeff", "L2 coefficient");
    add_override(train_cmd, tr, "--l2-mode", "train.l2_mode", "decoupled | loss_penalty");
    add_override(train_cmd, tr, "--stop-metric", "train.stop_metric", "valid_loss | macro_f1 | bleu");
    add_override(train_cmd, tr, "--lambda", "train.lambda", "Distillation weight");
    add_override(train_cmd, tr, "--gamma", "train.gamma", "Prediction loss weight");
    add_override(train_cmd, tr, "--delta", "train.delta", "Source generation weight");
    add_override(train_cmd, tr, "--distill-direction", "train.distill_direction", "as_written | conventional");
    add_override(train_cmd, tr, "--theta", "decode.theta", "Strategy threshold used for BLEU-based stopping");
    add_override(train_cmd, tr, "--beam", "decode.beam", "Beam width used for BLEU-based stopping");
    add_override(train_cmd, tr, "--max-len", "decode.max_len", "Maximum generated tokens");
    train_cmd->add_flag("--share-decoders", tr.share_decoders, "Source decoder reuses the target decoder");
    train_cmd->add_flag("--attach-teacher", tr.attach_teacher, "Let the distillation term update the teacher side");
    train_cmd->add_flag("--ablate-distill", tr.ablate_distill, "Disable self-distillation (lambda = 0)");
    train_cmd->add_flag("--resume", tr.resume, "Continue from <run-dir>/state.ckpt when present");
    train_cmd->add_option("--grid", tr.grid, "KEY=V1,V2,... ; repeat for a Cartesian grid of runs");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
    eval_cmd->add_option("--corpus", ev.corpus, "Corpus file")->required();
    eval_cmd->add_option("--strategies", ev.strategies, "Strategy list to check against the checkpoint");
    eval_cmd->add_option("--setting", ev.setting, "without_ts | golden_ts | need_ts_predict | all")->capture_default_str();
    eval_cmd->add_option("--predict-from", ev.predict_from, "Distribution scored for strategy metrics: source | target")
        ->capture_default_str();
    eval_cmd->add_option("--out-dir", ev.out_dir, "Report directory (default: the checkpoint's directory)");
    eval_cmd->add_option("--batch-size", ev.batch_size, "Rows per prediction pass")->capture_default_str();
    add_decode_options(eval_cmd, ev.theta, ev.decode);

    GenerateArgs gen;
    auto* gen_cmd = app.add_subcommand("generate", "Predict strategies and generate a tutor response");
    gen_cmd->add_option("--checkpoint", gen.checkpoint, "Model checkpoint")->required();
    gen_cmd->add_option("--context", gen.context, "Final student turn");
    gen_cmd->add_option("--turn", gen.turns, "Earlier turn as 'tutor: text' or 'student: text' (repeatable)");
    gen_cmd->add_option("--context-file", gen.context_file, "File with one 'speaker: text' turn per line");
    gen_cmd->add_option("--force-strategy", gen.force_strategy, "Condition on this strategy instead of predicting");
    add_decode_options(gen_cmd, gen.theta, gen.decode);

    std::vector<const char*> argv = {"cts"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsageError;
    }

    try {
        if (*synth_cmd) return cmd_synth(synth, out);
        if (*stats_cmd) return cmd_stats(stats, out);
        if (*train_cmd) return cmd_train(tr, out);
        if (*eval_cmd) return cmd_eval(ev, out);
        if (*gen_cmd) return cmd_generate(gen, out);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const json::exception& e) {
        err << "error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeFailure;
    }
    return kUsageError;
}

}  // namespace cts::cli
