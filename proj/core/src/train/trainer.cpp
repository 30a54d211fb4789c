#include "cts/train/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "cts/autodiff/ops.hpp"
#include "cts/corpus/vocabulary.hpp"

namespace cts::train {

using nlohmann::json;

std::string_view to_string(StopMetric m) {
    switch (m) {
        case StopMetric::ValidLoss: return "valid_loss";
        case StopMetric::MacroF1: return "macro_f1";
        case StopMetric::Bleu: return "bleu";
    }
    return "valid_loss";
}

std::optional<StopMetric> parse_stop_metric(std::string_view s) {
    if (s == "valid_loss") return StopMetric::ValidLoss;
    if (s == "macro_f1") return StopMetric::MacroF1;
    if (s == "bleu") return StopMetric::Bleu;
    return std::nullopt;
}

void TrainConfig::validate() const {
    schedule.validate();
    objective.weights.validate();
    if (update_freq == 0) throw ValidationError("update_freq must be at least 1");
    if (max_tokens == 0) throw ValidationError("max_tokens must be positive");
    if (max_epochs == 0) throw ValidationError("max_epochs must be at least 1");
    if (patience == 0) throw ValidationError("patience must be at least 1");
    if (!(l2_coeff >= 0.0)) throw ValidationError("l2_coeff must be >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
        throw ValidationError("Adam betas must lie in [0, 1)");
    }
    if (!(adam.eps > 0.0)) throw ValidationError("Adam eps must be positive");
    if (!(objective.eps > 0.0 && objective.eps < 1.0)) throw ValidationError("log clamp eps must lie in (0, 1)");
}

json to_json(const TrainConfig& c) {
    return {{"lr_peak", c.schedule.lr_peak},
            {"warmup_steps", c.schedule.warmup_steps},
            {"total_steps", c.schedule.total_steps},
            {"end_lr", c.schedule.end_lr},
            {"decay_power", c.schedule.power},
            {"adam_beta1", c.adam.beta1},
            {"adam_beta2", c.adam.beta2},
            {"adam_eps", c.adam.eps},
            {"l2_coeff", c.l2_coeff},
            {"l2_mode", std::string(to_string(c.l2_mode))},
            {"update_freq", c.update_freq},
            {"max_tokens", c.max_tokens},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience},
            {"seed", c.seed},
            {"stop_metric", std::string(to_string(c.stop_metric))},
            {"lambda", c.objective.weights.lambda},
            {"gamma", c.objective.weights.gamma},
            {"delta", c.objective.weights.delta},
            {"distill_direction", std::string(objectives::to_string(c.objective.direction))},
            {"detach_teacher", c.objective.detach_teacher},
            {"log_eps", c.objective.eps}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
    auto take = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("lr_peak", c.schedule.lr_peak);
    take("warmup_steps", c.schedule.warmup_steps);
    take("total_steps", c.schedule.total_steps);
    take("end_lr", c.schedule.end_lr);
    take("decay_power", c.schedule.power);
    take("adam_beta1", c.adam.beta1);
    take("adam_beta2", c.adam.beta2);
    take("adam_eps", c.adam.eps);
    take("l2_coeff", c.l2_coeff);
    take("update_freq", c.update_freq);
    take("max_tokens", c.max_tokens);
    take("max_epochs", c.max_epochs);
    take("patience", c.patience);
    take("seed", c.seed);
    take("lambda", c.objective.weights.lambda);
    take("gamma", c.objective.weights.gamma);
    take("delta", c.objective.weights.delta);
    take("detach_teacher", c.objective.detach_teacher);
    take("log_eps", c.objective.eps);
    if (j.contains("l2_mode")) {
        auto m = parse_l2_mode(j.at("l2_mode").get<std::string>());
        if (!m) throw ValidationError("l2_mode must be 'decoupled' or 'loss_penalty'");
        c.l2_mode = *m;
    }
    if (j.contains("stop_metric")) {
        auto m = parse_stop_metric(j.at("stop_metric").get<std::string>());
        if (!m) throw ValidationError("stop_metric must be 'valid_loss', 'macro_f1' or 'bleu'");
        c.stop_metric = *m;
    }
    if (j.contains("distill_direction")) {
        auto d = objectives::parse_distill_direction(j.at("distill_direction").get<std::string>());
        if (!d) throw ValidationError("distill_direction must be 'as_written' or 'conventional'");
        c.objective.direction = *d;
    }
    return c;
}

json to_json(const StepRecord& r) {
    return {{"step", r.step}, {"lr", r.lr},       {"gen_target", r.gen_target}, {"gen_source", r.gen_source},
            {"pred", r.pred}, {"sd", r.sd},       {"total", r.total}};
}

json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},
            {"train_median_total", r.train_median_total},
            {"valid_loss", r.valid_loss},
            {"score", r.score},
            {"improved", r.improved}};
}

Trainer::Trainer(model::CtsModel& model, TrainConfig config)
    : model_(model), config_(std::move(config)), adam_(model.parameters(), config_.adam) {
    config_.validate();
}

StepRecord Trainer::train_step(std::span<const corpus::Batch> micro_batches) {
    if (micro_batches.empty()) throw ValidationError("train_step needs at least one micro-batch");
    adam_.zero_grad();
    const double k = static_cast<double>(micro_batches.size());
    StepRecord rec;
    for (const auto& mb : micro_batches) {
        const auto bundle = objectives::joint_loss(model_, mb, config_.objective, model_.train_context());
        if (!std::isfinite(bundle.total_value)) {
            throw NonFiniteError("non-finite training loss at step " + std::to_string(progress_.step + 1));
        }
        ad::scale(bundle.total, 1.0 / k).backward();
        rec.gen_target += bundle.gen_target / k;
        rec.gen_source += bundle.gen_source / k;
        rec.pred += bundle.pred / k;
        rec.sd += bundle.sd / k;
        rec.total += bundle.total_value / k;
    }
    rec.lr = lr_at(progress_.step + 1, config_.schedule);
    adam_.step(rec.lr, config_.l2_coeff, config_.l2_mode);
    rec.step = ++progress_.step;
    if (step_cb_) step_cb_(rec);
    return rec;
}

double Trainer::validation_loss(const std::vector<corpus::Batch>& batches) const {
    ad::NoGradGuard no_grad;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& b : batches) {
        const auto bundle = objectives::joint_loss(model_, b, config_.objective, model::CtsModel::eval_context());
        sum += bundle.total_value * static_cast<double>(b.size());
        n += b.size();
    }
    if (n == 0) throw ValidationError("validation set is empty");
    return sum / static_cast<double>(n);
}

std::vector<corpus::Batch> Trainer::epoch_batches(const std::vector<corpus::EncodedExample>& train, std::size_t epoch) const {
    return corpus::make_batches(train, config_.max_tokens, config_.seed * 1000003ull + epoch, corpus::Vocabulary::kPad);
}

void Trainer::snapshot_best() {
    best_params_.clear();
    for (const auto& p : model_.parameters()) best_params_.push_back(p.tensor.to_vector());
}

void Trainer::restore_best() {
    if (best_params_.empty()) return;
    auto params = model_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].tensor.mutable_data();
        std::copy(best_params_[i].begin(), best_params_[i].end(), dst.begin());
    }
}

namespace {

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TrainResult Trainer::fit(const std::vector<corpus::EncodedExample>& train, const std::vector<corpus::EncodedExample>& valid) {
    if (train.empty()) throw ValidationError("training split is empty");
    if (valid.empty()) throw ValidationError("validation split is empty");
    const auto valid_batches = corpus::make_batches(valid, config_.max_tokens, config_.seed, corpus::Vocabulary::kPad);
    const std::size_t k = config_.update_freq;

    TrainResult result;
    bool interrupted = false;
    while (progress_.epoch < config_.max_epochs) {
        const auto batches = epoch_batches(train, progress_.epoch);
        bool schedule_done = false;
        while (progress_.batch_cursor < batches.size()) {
            if (progress_.step >= config_.schedule.total_steps) {
                schedule_done = true;
                break;
            }
            if (stop_after_ && progress_.step >= *stop_after_) {
                interrupted = true;
                break;
            }
            const std::size_t begin = progress_.batch_cursor;
            const std::size_t end = std::min(begin + k, batches.size());
            const auto rec = train_step(std::span(batches).subspan(begin, end - begin));
            progress_.batch_cursor = end;
            progress_.epoch_totals.push_back(rec.total);
        }
        if (interrupted) break;

        EpochRecord er;
        er.epoch = ++progress_.epoch;
        er.train_median_total = median(progress_.epoch_totals);
        er.valid_loss = validation_loss(valid_batches);
        er.score = scorer_ && config_.stop_metric != StopMetric::ValidLoss ? scorer_(model_) : -er.valid_loss;
        er.improved = er.score > progress_.best_score;
        if (er.improved) {
            progress_.best_score = er.score;
            progress_.best_epoch = er.epoch;
            progress_.epochs_since_improvement = 0;
            snapshot_best();
        } else {
            ++progress_.epochs_since_improvement;
        }
        progress_.batch_cursor = 0;
        progress_.epoch_totals.clear();
        result.epochs_log.push_back(er);
        if (epoch_cb_) epoch_cb_(er);
        if (progress_.epochs_since_improvement >= config_.patience) {
            result.stopped_early = true;
            break;
        }
        if (schedule_done || progress_.step >= config_.schedule.total_steps) break;
    }
    if (!interrupted) restore_best();
    result.epochs = progress_.epoch;
    result.steps = progress_.step;
    result.best_epoch = progress_.best_epoch;
    result.best_score = progress_.best_score;
    return result;
}

model::Checkpoint Trainer::state_checkpoint() const {
    model::Checkpoint ckpt = model::model_checkpoint(model_);
    const auto& p = progress_;
    ckpt.meta["train_state"] = {{"step", p.step},
                                {"epoch", p.epoch},
                                {"batch_cursor", p.batch_cursor},
                                {"best_epoch", p.best_epoch},
                                {"epochs_since_improvement", p.epochs_since_improvement},
                                {"adam_steps", adam_.steps_taken()},
                                {"has_best", !best_params_.empty()},
                                {"config", to_json(config_)}};
    ckpt.arrays.push_back({"train/best_score", {1}, {p.best_score}});
    ckpt.arrays.push_back({"train/epoch_totals", {p.epoch_totals.size()}, p.epoch_totals});
    const auto& params = adam_.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& shape = params[i].tensor.shape();
        ckpt.arrays.push_back({"adam.m/" + params[i].name, shape, adam_.first_moments()[i]});
        ckpt.arrays.push_back({"adam.v/" + params[i].name, shape, adam_.second_moments()[i]});
        if (!best_params_.empty()) ckpt.arrays.push_back({"best/" + params[i].name, shape, best_params_[i]});
    }
    return ckpt;
}

void Trainer::restore_state(const model::Checkpoint& ckpt) {
    if (!ckpt.meta.contains("train_state")) throw ValidationError("checkpoint carries no training state");
    model::restore_parameters(model_, ckpt);
    const json& s = ckpt.meta.at("train_state");
    TrainProgress p;
    p.step = s.at("step").get<std::size_t>();
    p.epoch = s.at("epoch").get<std::size_t>();
    p.batch_cursor = s.at("batch_cursor").get<std::size_t>();
    p.best_epoch = s.at("best_epoch").get<std::size_t>();
    p.epochs_since_improvement = s.at("epochs_since_improvement").get<std::size_t>();
    p.best_score = ckpt.at("train/best_score").values.at(0);
    p.epoch_totals = ckpt.at("train/epoch_totals").values;

    std::vector<std::vector<double>> m, v;
    best_params_.clear();
    const bool has_best = s.at("has_best").get<bool>();
    for (const auto& param : adam_.params()) {
        m.push_back(ckpt.at("adam.m/" + param.name).values);
        v.push_back(ckpt.at("adam.v/" + param.name).values);
        if (has_best) best_params_.push_back(ckpt.at("best/" + param.name).values);
    }
    adam_.restore(s.at("adam_steps").get<std::size_t>(), std::move(m), std::move(v));
    progress_ = std::move(p);
}

}  // namespace cts::train
