#pragma once

#include <iosfwd>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "cts/eval/decoding.hpp"
#include "cts/model/cts_model.hpp"
#include "cts/train/trainer.hpp"

namespace cts::cli {

enum ExitCode : int { kOk = 0, kRuntimeFailure = 1, kUsageError = 2 };

/// Effective configuration of a training run. Resolution order, later wins:
/// built-in defaults, then the --config file, then individual flags.
struct RunConfig {
    model::ModelConfig model;
    train::TrainConfig train;
    std::string train_path;
    std::string valid_path;
    std::string strategies_path;
    std::size_t min_freq = 1;
    double theta = 0.3;
    eval::DecodeOptions decode;
};

/// Sections "model", "train", "data", "decode"; the same layout is accepted
/// by --config and written to config.echo.
nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

/// Entry point shared by the `cts` binary and the tests. Returns an ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cts::cli
