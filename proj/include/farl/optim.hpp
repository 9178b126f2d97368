#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "farl/tensor.hpp"

namespace farl {

/// base * 0.5 * (1 + cos(pi * t / T)), with t clamped to [0, T].
inline double cosine_lr(double base, std::size_t step, std::size_t total) {
    if (total == 0) return base;
    const double t = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

struct AdamWConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::size_t total_steps = 0;  // cosine horizon; 0 disables decay
};

/// Adam with decoupled weight decay and a cosine-decayed learning rate.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    std::size_t step_count() const { return step_; }
    double current_lr() const { return cosine_lr(cfg_.lr, step_, cfg_.total_steps); }
    const AdamWConfig& config() const { return cfg_; }

    /// One update of every trainable parameter from its accumulated gradient.
    void step(std::span<Parameter* const> params) {
        if (first_.empty()) {
            for (Parameter* p : params) {
                first_.emplace_back(p->value.shape());
                second_.emplace_back(p->value.shape());
            }
        }
        if (first_.size() != params.size()) throw UsageError("AdamW: parameter list changed between steps");
        const double lr = current_lr();
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            Parameter& p = *params[k];
            if (!p.trainable) continue;
            if (p.grad.size() != p.value.size()) throw ShapeError("AdamW: gradient shape does not match parameter");
            Tensor& m = first_[k];
            Tensor& v = second_[k];
            const double decay = p.decay ? lr * cfg_.weight_decay : 0.0;
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const double gr = p.grad[i];
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gr;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gr * gr;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p.value[i] -= decay * p.value[i];
                p.value[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    AdamWConfig cfg_;
    std::size_t step_ = 0;
    std::vector<Tensor> first_, second_;
};

}  // namespace farl
