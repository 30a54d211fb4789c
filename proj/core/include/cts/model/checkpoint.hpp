#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "cts/autodiff/tensor.hpp"
#include "cts/model/cts_model.hpp"

namespace cts::model {

struct NamedArray {
    std::string name;
    ad::Shape shape;
    std::vector<double> values;
};

/// On-disk layout (little-endian):
///   8 bytes   magic "CTSCKPT1"
///   u64       header length N
///   N bytes   UTF-8 JSON header: {"meta": {...}, "arrays": [{"name", "shape"}, ...]}
///   then the raw float64 payload of every array, in header order.
/// Values are stored bit-exactly.
struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedArray> arrays;

    const NamedArray* find(const std::string& name) const;
    const NamedArray& at(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

std::string rng_to_string(const std::mt19937_64& rng);
void rng_from_string(std::mt19937_64& rng, const std::string& state);

/// Config, vocabulary, strategy list, dropout RNG state and every parameter.
Checkpoint model_checkpoint(const CtsModel& model);
CtsModel load_model(const Checkpoint& ckpt);

/// Overwrites `model`'s parameters and RNG from a checkpoint of the same architecture.
void restore_parameters(CtsModel& model, const Checkpoint& ckpt);

}  // namespace cts::model
