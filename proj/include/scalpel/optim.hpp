#pragma once

#include <cmath>
#include <vector>

#include "scalpel/common.hpp"
#include "scalpel/tensor.hpp"

namespace scalpel {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// AdamW with decoupled weight decay: the decay multiplies parameters by
// (1 - lr * wd) before the moment update, so a step with zero gradients
// shrinks weights by exactly that factor and leaves the moments untouched.
template <typename S>
class AdamW {
public:
    AdamW(std::vector<Tensor<S>> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        if (cfg_.lr <= 0) throw ConfigError("AdamW: learning rate must be positive");
        if (cfg_.beta1 < 0 || cfg_.beta1 >= 1 || cfg_.beta2 < 0 || cfg_.beta2 >= 1)
            throw ConfigError("AdamW: betas must lie in [0, 1)");
        for (auto& p : params_) {
            if (!p.requires_grad()) throw ContractError("AdamW: parameter does not require grad");
            m_.emplace_back(p.numel(), S(0));
            v_.emplace_back(p.numel(), S(0));
        }
    }

    void step() {
        ++t_;
        const S bc1 = static_cast<S>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
        const S bc2 = static_cast<S>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
        const S decay = static_cast<S>(1.0 - cfg_.lr * cfg_.weight_decay);
        const S lr = static_cast<S>(cfg_.lr);
        const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
        const S eps = static_cast<S>(cfg_.eps);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto val = params_[i].data();
            auto grd = params_[i].grad();
            S* m = m_[i].data();
            S* v = v_[i].data();
            for (std::size_t j = 0; j < val.size(); ++j) {
                if (cfg_.weight_decay != 0.0) val[j] *= decay;
                const S g = grd[j];
                m[j] = b1 * m[j] + (S(1) - b1) * g;
                v[j] = b2 * v[j] + (S(1) - b2) * g * g;
                const S mhat = m[j] / bc1;
                const S vhat = v[j] / bc2;
                val[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    i64 steps_taken() const { return t_; }

private:
    std::vector<Tensor<S>> params_;
    std::vector<std::vector<S>> m_, v_;
    AdamWConfig cfg_;
    i64 t_ = 0;
};

// Scales all gradients by max_norm / global_norm when the global L2 norm
// across every parameter exceeds max_norm. Returns the pre-clip norm.
template <typename S>
double clip_global_norm(std::vector<Tensor<S>> params, double max_norm) {
    if (max_norm <= 0) throw ConfigError("clip_global_norm: max_norm must be positive");
    double total = 0.0;
    for (auto& p : params)
        for (S g : p.grad()) total += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(total);
    if (norm > max_norm && norm > 0.0) {
        const S factor = static_cast<S>(max_norm / norm);
        for (auto& p : params)
            for (S& g : p.grad()) g *= factor;
    }
    return norm;
}

}  // namespace scalpel
