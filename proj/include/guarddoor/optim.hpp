#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "guarddoor/tensor.hpp"

namespace gd {

// named view over trainable tensors of a model
using ParamSet = std::vector<std::pair<std::string, Tensor>>;

enum class OptKind { Sgd, Adam, AdamW };

inline OptKind opt_kind_from_string(const std::string& s) {
    if (s == "sgd") return OptKind::Sgd;
    if (s == "adam") return OptKind::Adam;
    if (s == "adamw") return OptKind::AdamW;
    throw std::invalid_argument("unknown optimizer kind: " + s);
}

struct OptimizerConfig {
    OptKind kind = OptKind::Adam;
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.0f;
};

class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

    const OptimizerConfig& config() const { return cfg_; }
    int step_count() const { return step_count_; }

    void zero_grad(ParamSet& params) {
        for (auto& [name, p] : params) p.zero_grad();
    }

    void step(ParamSet& params) {
        ++step_count_;
        for (auto& [name, p] : params) {
            if (!p.has_grad())
                throw std::runtime_error("optimizer step: parameter '" + name + "' has no gradient");
            auto& w = p.data();
            const auto& g = p.grad_view();
            switch (cfg_.kind) {
                case OptKind::Sgd:
                    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg_.lr * g[i];
                    break;
                case OptKind::AdamW:
                    // decoupled weight decay, applied before the moment update
                    if (cfg_.weight_decay != 0.0f)
                        for (auto& v : w) v -= cfg_.lr * cfg_.weight_decay * v;
                    [[fallthrough]];
                case OptKind::Adam: {
                    auto& m = moment1_[name];
                    auto& v = moment2_[name];
                    if (m.size() != w.size()) m.assign(w.size(), 0.0f);
                    if (v.size() != w.size()) v.assign(w.size(), 0.0f);
                    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(step_count_));
                    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(step_count_));
                    for (std::size_t i = 0; i < w.size(); ++i) {
                        m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g[i];
                        v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g[i] * g[i];
                        const float mh = m[i] / bc1;
                        const float vh = v[i] / bc2;
                        w[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
                    }
                    break;
                }
            }
        }
    }

private:
    OptimizerConfig cfg_;
    int step_count_ = 0;
    std::unordered_map<std::string, std::vector<float>> moment1_;
    std::unordered_map<std::string, std::vector<float>> moment2_;
};

}  // namespace gd
