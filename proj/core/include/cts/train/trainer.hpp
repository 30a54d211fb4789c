#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "cts/corpus/batching.hpp"
#include "cts/model/checkpoint.hpp"
#include "cts/model/cts_model.hpp"
#include "cts/objectives/losses.hpp"
#include "cts/train/optimizer.hpp"

namespace cts::train {

enum class StopMetric { ValidLoss, MacroF1, Bleu };

std::string_view to_string(StopMetric m);
std::optional<StopMetric> parse_stop_metric(std::string_view s);

struct TrainConfig {
    ScheduleConfig schedule;
    AdamOptions adam;
    double l2_coeff = 0.01;
    L2Mode l2_mode = L2Mode::Decoupled;
    std::size_t update_freq = 4;
    std::size_t max_tokens = 256;  // padded source tokens per micro-batch
    std::size_t max_epochs = 30;
    std::size_t patience = 3;
    std::uint64_t seed = 1;
    StopMetric stop_metric = StopMetric::ValidLoss;
    objectives::ObjectiveOptions objective;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Starts from `base` and overrides every key present in `j`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// One optimizer update; loss components are example-weighted means over its micro-batches.
struct StepRecord {
    std::size_t step = 0;
    double lr = 0.0;
    double gen_target = 0.0;
    double gen_source = 0.0;
    double pred = 0.0;
    double sd = 0.0;
    double total = 0.0;
};

nlohmann::json to_json(const StepRecord& r);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_median_total = 0.0;
    double valid_loss = 0.0;
    double score = 0.0;  // higher is better
    bool improved = false;
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainResult {
    std::size_t epochs = 0;
    std::size_t steps = 0;
    std::size_t best_epoch = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    bool stopped_early = false;
    std::vector<EpochRecord> epochs_log;
};

/// Validation score where larger is better (e.g. macro-F1 or BLEU).
using ValidationScorer = std::function<double(const model::CtsModel&)>;

struct TrainProgress {
    std::size_t step = 0;
    std::size_t epoch = 0;         // completed epochs
    std::size_t batch_cursor = 0;  // next micro-batch within the current epoch
    double best_score = -std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::size_t epochs_since_improvement = 0;
    std::vector<double> epoch_totals;  // per-step totals of the current epoch
};

/// Joint-objective training loop: gradient accumulation, Adam with a warmup
/// and decay schedule, per-epoch validation, early stopping, best-model
/// tracking, and resumable state.
class Trainer {
public:
    Trainer(model::CtsModel& model, TrainConfig config);

    void set_scorer(ValidationScorer scorer) { scorer_ = std::move(scorer); }
    void on_step(std::function<void(const StepRecord&)> cb) { step_cb_ = std::move(cb); }
    void on_epoch(std::function<void(const EpochRecord&)> cb) { epoch_cb_ = std::move(cb); }
    /// Stop fit() once this many optimizer steps exist in total (the schedule is unaffected).
    void stop_after(std::size_t steps) { stop_after_ = steps; }

    /// One optimizer update from the given micro-batches: each contributes
    /// total / k to the accumulated gradient.
    StepRecord train_step(std::span<const corpus::Batch> micro_batches);

    /// Example-weighted mean total loss, dropout off, no graph.
    double validation_loss(const std::vector<corpus::Batch>& batches) const;

    /// Trains until max_epochs, schedule end, patience, or stop_after. Afterwards
    /// the model holds the best-scoring parameters seen at an epoch boundary.
    TrainResult fit(const std::vector<corpus::EncodedExample>& train, const std::vector<corpus::EncodedExample>& valid);

    const TrainProgress& progress() const { return progress_; }
    const TrainConfig& config() const { return config_; }
    const Adam& optimizer() const { return adam_; }

    /// Model checkpoint plus optimizer moments, progress and best snapshot.
    model::Checkpoint state_checkpoint() const;
    void restore_state(const model::Checkpoint& ckpt);

private:
    std::vector<corpus::Batch> epoch_batches(const std::vector<corpus::EncodedExample>& train, std::size_t epoch) const;
    void snapshot_best();
    void restore_best();

    model::CtsModel& model_;
    TrainConfig config_;
    Adam adam_;
    TrainProgress progress_;
    std::vector<std::vector<double>> best_params_;
    ValidationScorer scorer_;
    std::function<void(const StepRecord&)> step_cb_;
    std::function<void(const EpochRecord&)> epoch_cb_;
    std::optional<std::size_t> stop_after_;
};

}  // namespace cts::train
