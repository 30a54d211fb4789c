#include "cts/train/optimizer.hpp"

#include <cmath>

namespace cts::train {

void ScheduleConfig::validate() const {
    if (!(lr_peak > 0.0) || !std::isfinite(lr_peak)) throw ValidationError("lr_peak must be positive");
    if (!(end_lr >= 0.0) || end_lr >= lr_peak) throw ValidationError("end_lr must satisfy 0 <= end_lr < lr_peak");
    if (warmup_steps >= total_steps) throw ValidationError("warmup_steps must be smaller than total_steps");
    if (!(power > 0.0)) throw ValidationError("decay power must be positive");
}

double lr_at(std::size_t step, const ScheduleConfig& s) {
    if (step < s.warmup_steps) return s.lr_peak * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    if (step >= s.total_steps) return s.end_lr;
    const double remaining =
        static_cast<double>(s.total_steps - step) / static_cast<double>(s.total_steps - s.warmup_steps);
    return s.end_lr + (s.lr_peak - s.end_lr) * std::pow(remaining, s.power);
}

std::string_view to_string(L2Mode m) { return m == L2Mode::Decoupled ? "decoupled" : "loss_penalty"; }

std::optional<L2Mode> parse_l2_mode(std::string_view s) {
    if (s == "decoupled") return L2Mode::Decoupled;
    if (s == "loss_penalty") return L2Mode::LossPenalty;
    return std::nullopt;
}

Adam::Adam(std::vector<nn::NamedTensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

void Adam::restore(std::size_t t, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
    if (m.size() != params_.size() || v.size() != params_.size()) throw ValidationError("optimizer state has the wrong parameter count");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (m[i].size() != params_[i].tensor.numel() || v[i].size() != params_[i].tensor.numel()) {
            throw ValidationError("optimizer moments for '" + params_[i].name + "' do not match the parameter shape");
        }
    }
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

void Adam::step(double lr, double l2_coeff, L2Mode mode) {
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) {
            if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in parameter '" + p.name + "'");
        }
    }
    ++t_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto theta = params_[i].tensor.mutable_data();
        const bool has_grad = params_[i].tensor.has_grad();
        const auto grad = has_grad ? params_[i].tensor.grad() : std::span<const double>{};
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            double g = has_grad ? grad[j] : 0.0;
            if (mode == L2Mode::LossPenalty) g += l2_coeff * theta[j];
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
            if (mode == L2Mode::Decoupled) theta[j] -= lr * l2_coeff * theta[j];
            theta[j] -= lr * update;
        }
    }
}

}  // namespace cts::train
