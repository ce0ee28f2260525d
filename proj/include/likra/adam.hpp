#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "likra/tensor.hpp"
#include "likra/util.hpp"

namespace likra {

template <typename T>
struct AdamConfig {
    T lr = T(1e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    // Global-norm gradient clipping; <= 0 disables (the default).
    T clip_norm = T(0);
};

template <typename T>
struct NamedParam {
    std::string name;
    TensorT<T> tensor;
};

// Bias-corrected Adam over a fixed set of named parameters. The state arrays
// mirror parameter shapes; step_count advances by one per accepted step.
template <typename T>
class AdamOptimizer {
  public:
    AdamOptimizer(std::vector<NamedParam<T>> params, AdamConfig<T> cfg)
        : params_(std::move(params)), cfg_(cfg) {
        for (auto& p : params_) {
            m_.emplace_back(p.tensor.numel(), T(0));
            v_.emplace_back(p.tensor.numel(), T(0));
        }
    }

    int64_t step_count() const { return step_count_; }
    const AdamConfig<T>& config() const { return cfg_; }
    const std::vector<NamedParam<T>>& params() const { return params_; }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    // Rejects the whole step if any gradient is non-finite (no parameter is
    // touched), and verifies parameters stay finite afterwards.
    void step() {
        for (auto& p : params_) {
            if (!all_finite(p.tensor.grad())) {
                throw ContractError("adam_step: non-finite gradient in parameter '" + p.name + "'");
            }
        }
        T clip_scale = T(1);
        if (cfg_.clip_norm > T(0)) {
            double sq = 0;
            for (auto& p : params_) {
                for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
            }
            double norm = std::sqrt(sq);
            if (norm > static_cast<double>(cfg_.clip_norm)) {
                clip_scale = static_cast<T>(static_cast<double>(cfg_.clip_norm) / norm);
            }
        }
        ++step_count_;
        T bc1 = T(1) - std::pow(cfg_.beta1, T(step_count_));
        T bc2 = T(1) - std::pow(cfg_.beta2, T(step_count_));
        for (size_t k = 0; k < params_.size(); ++k) {
            auto& data = params_[k].tensor.data();
            auto& grad = params_[k].tensor.grad();
            auto& m = m_[k];
            auto& v = v_[k];
            for (size_t i = 0; i < data.size(); ++i) {
                T g = grad[i] * clip_scale;
                m[i] = cfg_.beta1 * m[i] + (T(1) - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (T(1) - cfg_.beta2) * g * g;
                T mhat = m[i] / bc1;
                T vhat = v[i] / bc2;
                data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
        for (auto& p : params_) {
            if (!all_finite(p.tensor.data())) {
                throw ContractError("adam_step: parameter '" + p.name + "' became non-finite");
            }
        }
    }

  private:
    std::vector<NamedParam<T>> params_;
    AdamConfig<T> cfg_;
    std::vector<std::vector<T>> m_, v_;
    int64_t step_count_ = 0;
};

}  // namespace likra
