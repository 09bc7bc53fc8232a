#pragma once

// Adam with global L2 gradient clipping. Non-finite gradients skip the
// update (and report it) instead of poisoning the moments.

#include <cmath>
#include <vector>

#include "latenttrack/nn.hpp"
#include "latenttrack/tensor.hpp"

namespace lt {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip = 1.0;  // global L2 norm; <= 0 disables clipping
};

class AdamOptimizer {
  public:
    AdamOptimizer() = default;
    AdamOptimizer(NamedParams params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (auto& [name, t] : params_) {
            m_.emplace_back(t->numel(), 0.0);
            v_.emplace_back(t->numel(), 0.0);
        }
    }

    void zero_grad() {
        for (auto& [name, t] : params_) t->zero_grad();
    }

    double grad_norm() const {
        double acc = 0.0;
        for (const auto& [name, t] : params_)
            for (double g : t->grad) acc += g * g;
        return std::sqrt(acc);
    }

    // Returns false (and leaves parameters untouched) on a non-finite
    // gradient. The step counter advances either way so schedules keyed on
    // attempted updates stay aligned.
    bool step() {
        ++steps_;
        const double norm = grad_norm();
        if (!std::isfinite(norm)) {
            ++skipped_;
            return false;
        }
        const double scale = (cfg_.clip > 0.0 && norm > cfg_.clip) ? cfg_.clip / norm : 1.0;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
        for (std::size_t p = 0; p < params_.size(); ++p) {
            Tensor& t = *params_[p].second;
            t.ensure_grad();
            for (std::size_t i = 0; i < t.data.size(); ++i) {
                const double g = t.grad[i] * scale;
                m_[p][i] = cfg_.beta1 * m_[p][i] + (1.0 - cfg_.beta1) * g;
                v_[p][i] = cfg_.beta2 * v_[p][i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m_[p][i] / bc1;
                const double vhat = v_[p][i] / bc2;
                t.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
        return true;
    }

    long steps() const { return steps_; }
    long skipped() const { return skipped_; }
    const AdamConfig& config() const { return cfg_; }

  private:
    NamedParams params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long steps_ = 0;
    long skipped_ = 0;
};

// Linear KL warmup: beta ramps from 0 to beta_max over `warmup` updates.
inline double beta_schedule(long update_index, long warmup, double beta_max) {
    if (update_index >= warmup || warmup <= 0) return beta_max;
    return beta_max * static_cast<double>(update_index) / static_cast<double>(warmup);
}

}  // namespace lt
