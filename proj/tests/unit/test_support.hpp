#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cts/autodiff/ops.hpp"
#include "cts/corpus/synthetic.hpp"
#include "cts/corpus/vocabulary.hpp"
#include "cts/model/cts_model.hpp"

namespace cts::testing {

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

inline ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    const std::size_t n = ad::numel_of(shape);
    return ad::Tensor::from(std::move(shape), random_values(n, rng, lo, hi), true);
}

inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

/// Compares the analytic gradient of f() w.r.t. every entry of each input with
/// central differences. f must rebuild its graph from the inputs on each call.
inline void expect_gradients_match(const std::function<ad::Tensor()>& f, std::vector<ad::Tensor> inputs, double h = 1e-6,
                                   double tol = 1e-6) {
    for (auto& x : inputs) x.zero_grad();
    f().backward();
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto& x = inputs[k];
        const std::vector<double> analytic(x.grad().begin(), x.grad().end());
        auto data = x.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + h;
            const double up = f().item();
            data[i] = saved - h;
            const double down = f().item();
            data[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            EXPECT_LT(std::abs(analytic[i] - numeric), tol * std::max(1.0, std::abs(numeric)))
                << "input " << k << " entry " << i << ": analytic " << analytic[i] << " numeric " << numeric;
        }
    }
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() / ("cts-test-" + std::to_string(rng()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

struct Toy {
    corpus::SyntheticCorpus data;
    corpus::Vocabulary vocab;
};

inline Toy toy_corpus(std::size_t n = 16, std::size_t n_strategies = 2, std::uint64_t seed = 3, double noise = 0.3) {
    corpus::SyntheticOptions o;
    o.n = n;
    o.n_strategies = n_strategies;
    o.seed = seed;
    o.cue_noise = noise;
    Toy t{corpus::generate_synthetic(o), {}};
    t.vocab = corpus::Vocabulary::build(t.data.conversations, t.data.strategies, 1);
    return t;
}

inline model::ModelConfig tiny_config(std::size_t d_model = 16, double dropout = 0.0) {
    model::ModelConfig c;
    c.layers.d_model = d_model;
    c.layers.n_heads = 2;
    c.layers.d_ff = 2 * d_model;
    c.layers.n_enc_layers = 1;
    c.layers.n_dec_layers = 1;
    c.layers.dropout_p = dropout;
    c.layers.max_positions = 64;
    return c;
}

}  // namespace cts::testing
