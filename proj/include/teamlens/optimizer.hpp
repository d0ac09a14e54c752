#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "teamlens/tensor.hpp"

namespace teamlens {

/// Named handle to a trainable tensor. Models expose their full parameter
/// set as a flat list of these; the optimizer, checkpointing, and the
/// gradient checker all iterate the same list, in the same order.
template <typename T>
struct ParamRef {
    std::string name;
    Param<T>* param = nullptr;
};

template <typename T>
std::size_t total_param_count(const std::vector<ParamRef<T>>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.param->size();
    return n;
}

template <typename T>
void zero_grads(const std::vector<ParamRef<T>>& params) {
    for (const auto& p : params) p.param->zero_grad();
}

template <typename T>
T global_grad_norm(const std::vector<ParamRef<T>>& params) {
    T sq = T(0);
    for (const auto& p : params)
        for (T g : p.param->grad.data) sq += g * g;
    return std::sqrt(sq);
}

/// Scales all gradients so the global norm is at most max_norm.
/// Returns the pre-clip norm.
template <typename T>
T clip_grad_norm(const std::vector<ParamRef<T>>& params, T max_norm) {
    const T norm = global_grad_norm(params);
    if (norm > max_norm && norm > T(0)) {
        const T scale = max_norm / norm;
        for (const auto& p : params)
            for (T& g : p.param->grad.data) g *= scale;
    }
    return norm;
}

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0; // decoupled; off unless configured
    double clip_norm = 1.0;    // global-norm gradient clip, <= 0 disables
};

/// Adam with decoupled weight decay. Moments live here, keyed by the
/// position of each parameter in the registry list, so the same optimizer
/// instance must always be stepped with the same registry.
template <typename T>
class AdamW {
public:
    explicit AdamW(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    std::int64_t step_count() const { return step_; }

    /// Clips gradients in place, applies one bias-corrected update.
    /// Gradients are not cleared; call zero_grads explicitly.
    /// Returns the pre-clip global gradient norm.
    T step(const std::vector<ParamRef<T>>& params) {
        if (m_.empty()) init(params);
        T pre_clip = global_grad_norm(params);
        if (cfg_.clip_norm > 0) pre_clip = clip_grad_norm(params, static_cast<T>(cfg_.clip_norm));
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            auto& value = params[pi].param->value.data;
            auto& grad = params[pi].param->grad.data;
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (std::size_t i = 0; i < value.size(); ++i) {
                const double g = static_cast<double>(grad[i]);
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                double x = static_cast<double>(value[i]);
                if (cfg_.weight_decay > 0) x -= cfg_.lr * cfg_.weight_decay * x;
                x -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                value[i] = static_cast<T>(x);
            }
        }
        return pre_clip;
    }

private:
    void init(const std::vector<ParamRef<T>>& params) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].param->size(), 0.0);
            v_[i].assign(params[i].param->size(), 0.0);
        }
    }

    AdamConfig cfg_;
    std::int64_t step_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

} // namespace teamlens
