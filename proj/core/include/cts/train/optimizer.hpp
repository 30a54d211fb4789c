#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "cts/error.hpp"
#include "cts/nn/layers.hpp"

namespace cts::train {

struct ScheduleConfig {
    double lr_peak = 1e-3;
    std::size_t warmup_steps = 100;
    std::size_t total_steps = 4000;
    double end_lr = 0.0;
    double power = 1.0;  // polynomial decay degree

    void validate() const;
};

/// Linear warmup 0 -> lr_peak over warmup_steps, then polynomial decay to
/// end_lr at total_steps, constant end_lr afterwards.
double lr_at(std::size_t step, const ScheduleConfig& schedule);

enum class L2Mode {
    Decoupled,    // theta -= lr * l2 * theta after the Adam update
    LossPenalty,  // l2/2 * ||theta||^2 added to the loss, i.e. g += l2 * theta
};

std::string_view to_string(L2Mode m);
std::optional<L2Mode> parse_l2_mode(std::string_view s);

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class NonFiniteError : public RuntimeError {
public:
    using RuntimeError::RuntimeError;
};

/// Adam with bias correction over a fixed parameter list. Moments are stored
/// per parameter in the same order as the list.
class Adam {
public:
    Adam() = default;
    Adam(std::vector<nn::NamedTensor> params, AdamOptions options = {});

    /// Applies one update from the parameters' current gradients. Parameters
    /// without a gradient are treated as having a zero gradient. Any NaN/Inf
    /// gradient aborts the whole step before anything is modified.
    void step(double lr, double l2_coeff = 0.0, L2Mode mode = L2Mode::Decoupled);

    void zero_grad();

    std::size_t steps_taken() const { return t_; }
    const std::vector<nn::NamedTensor>& params() const { return params_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

    void restore(std::size_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

private:
    std::vector<nn::NamedTensor> params_;
    AdamOptions options_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace cts::train
