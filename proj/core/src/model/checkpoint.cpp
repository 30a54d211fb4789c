#include "cts/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cts/error.hpp"

namespace cts::model {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'T', 'S', 'C', 'K', 'P', 'T', '1'};

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return &a;
    }
    return nullptr;
}

const NamedArray& Checkpoint::at(const std::string& name) const {
    if (const auto* a = find(name)) return *a;
    throw ValidationError("checkpoint has no array '" + name + "'");
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json arrays = json::array();
    for (const auto& a : ckpt.arrays) {
        if (ad::numel_of(a.shape) != a.values.size()) throw ValidationError("checkpoint array '" + a.name + "' shape mismatch");
        arrays.push_back({{"name", a.name}, {"shape", a.shape}});
    }
    const std::string header = json{{"meta", ckpt.meta}, {"arrays", std::move(arrays)}}.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write checkpoint '" + path + "'");
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t n = header.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& a : ckpt.arrays) {
        out.write(reinterpret_cast<const char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * sizeof(double)));
    }
    if (!out) throw RuntimeError("failed while writing checkpoint '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint '" + path + "'");
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw ValidationError("'" + path + "' is not a checkpoint file");
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!in || n > (1ull << 32)) throw ValidationError("corrupt checkpoint header in '" + path + "'");
    std::string header(n, '\0');
    in.read(header.data(), static_cast<std::streamsize>(n));
    if (!in) throw ValidationError("truncated checkpoint header in '" + path + "'");
    Checkpoint ckpt;
    json h;
    try {
        h = json::parse(header);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("corrupt checkpoint header: ") + e.what());
    }
    ckpt.meta = h.at("meta");
    for (const auto& a : h.at("arrays")) {
        NamedArray arr;
        arr.name = a.at("name").get<std::string>();
        arr.shape = a.at("shape").get<ad::Shape>();
        arr.values.resize(ad::numel_of(arr.shape));
        in.read(reinterpret_cast<char*>(arr.values.data()), static_cast<std::streamsize>(arr.values.size() * sizeof(double)));
        if (!in) throw ValidationError("truncated checkpoint payload for '" + arr.name + "'");
        ckpt.arrays.push_back(std::move(arr));
    }
    return ckpt;
}

json to_json(const ModelConfig& c) {
    const auto& L = c.layers;
    return {{"d_model", L.d_model},
            {"n_heads", L.n_heads},
            {"d_ff", L.d_ff},
            {"n_enc_layers", L.n_enc_layers},
            {"n_dec_layers", L.n_dec_layers},
            {"dropout", L.dropout_p},
            {"max_positions", L.max_positions},
            {"vocab_size", L.vocab_size},
            {"ffn_activation", std::string(nn::to_string(L.ffn_activation))},
            {"head_activation", std::string(nn::to_string(c.head_activation))},
            {"head_hidden", c.head_hidden},
            {"share_decoders", c.share_decoders}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    auto& L = c.layers;
    L.d_model = j.value("d_model", L.d_model);
    L.n_heads = j.value("n_heads", L.n_heads);
    L.d_ff = j.value("d_ff", L.d_ff);
    L.n_enc_layers = j.value("n_enc_layers", L.n_enc_layers);
    L.n_dec_layers = j.value("n_dec_layers", L.n_dec_layers);
    L.dropout_p = j.value("dropout", L.dropout_p);
    L.max_positions = j.value("max_positions", L.max_positions);
    L.vocab_size = j.value("vocab_size", L.vocab_size);
    if (j.contains("ffn_activation")) {
        auto a = nn::parse_activation(j.at("ffn_activation").get<std::string>());
        if (!a) throw ValidationError("unknown ffn_activation");
        L.ffn_activation = *a;
    }
    if (j.contains("head_activation")) {
        auto a = nn::parse_activation(j.at("head_activation").get<std::string>());
        if (!a) throw ValidationError("unknown head_activation");
        c.head_activation = *a;
    }
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.share_decoders = j.value("share_decoders", c.share_decoders);
    return c;
}

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& state) {
    std::istringstream is(state);
    is >> rng;
    if (!is) throw ValidationError("corrupt RNG state in checkpoint");
}

Checkpoint model_checkpoint(const CtsModel& model) {
    Checkpoint ckpt;
    ckpt.meta["format"] = "cts-checkpoint";
    ckpt.meta["version"] = 1;
    ckpt.meta["config"] = to_json(model.config());
    ckpt.meta["vocab"] = model.vocab().tokens();
    ckpt.meta["strategies"] = model.strategies().names();
    ckpt.meta["rng"] = rng_to_string(model.rng());
    for (const auto& p : model.parameters()) {
        ckpt.arrays.push_back({"param/" + p.name, p.tensor.shape(), p.tensor.to_vector()});
    }
    return ckpt;
}

void restore_parameters(CtsModel& model, const Checkpoint& ckpt) {
    for (auto& p : model.parameters()) {
        const NamedArray& a = ckpt.at("param/" + p.name);
        if (a.shape != p.tensor.shape()) {
            throw ValidationError("checkpoint parameter '" + p.name + "' has shape " + ad::shape_str(a.shape) + ", model expects " +
                                  ad::shape_str(p.tensor.shape()));
        }
        auto dst = p.tensor.mutable_data();
        std::copy(a.values.begin(), a.values.end(), dst.begin());
    }
    if (ckpt.meta.contains("rng")) rng_from_string(model.rng(), ckpt.meta.at("rng").get<std::string>());
}

CtsModel load_model(const Checkpoint& ckpt) {
    if (ckpt.meta.value("format", std::string{}) != "cts-checkpoint") throw ValidationError("not a model checkpoint");
    const ModelConfig config = model_config_from_json(ckpt.meta.at("config"));
    corpus::StrategyList strategies(ckpt.meta.at("strategies").get<std::vector<std::string>>());
    auto vocab = corpus::Vocabulary::from_tokens(ckpt.meta.at("vocab").get<std::vector<std::string>>(), strategies.size());
    CtsModel model(config, std::move(vocab), std::move(strategies), 0);
    restore_parameters(model, ckpt);
    return model;
}

}  // namespace cts::model
