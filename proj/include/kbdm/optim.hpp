#pragma once

#include <cmath>
#include <vector>

#include "kbdm/tensor.hpp"

namespace kbdm {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled (AdamW); 0 gives plain Adam
};

/// Adam with decoupled weight decay. Moment buffers are keyed by position in
/// the parameter list, which must stay stable across steps.
struct Adam {
    AdamConfig cfg;
    long steps = 0;
    std::vector<Tensor> m, v;

    explicit Adam(AdamConfig c = {}) : cfg(c) {}

    void step(const std::vector<Parameter*>& params, double lr_scale = 1.0) {
        if (m.empty()) {
            for (Parameter* p : params) {
                m.push_back(Tensor::zeros(p->value.shape));
                v.push_back(Tensor::zeros(p->value.shape));
            }
        }
        ++steps;
        const double lr = cfg.lr * lr_scale;
        const double bc1 = 1.0 - std::pow(cfg.beta1, steps);
        const double bc2 = 1.0 - std::pow(cfg.beta2, steps);
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            Tensor& w = params[pi]->value;
            const Tensor& g = params[pi]->grad;
            for (std::size_t i = 0; i < w.numel(); ++i) {
                double gi = g.data[i];
                m[pi].data[i] = cfg.beta1 * m[pi].data[i] + (1.0 - cfg.beta1) * gi;
                v[pi].data[i] = cfg.beta2 * v[pi].data[i] + (1.0 - cfg.beta2) * gi * gi;
                const double mh = m[pi].data[i] / bc1;
                const double vh = v[pi].data[i] / bc2;
                if (cfg.weight_decay != 0.0) w.data[i] -= lr * cfg.weight_decay * w.data[i];
                w.data[i] -= lr * mh / (std::sqrt(vh) + cfg.eps);
            }
        }
    }
};

// Cosine decay from 1 at epoch 0 toward 0 at epoch == total.
inline double cosine_decay(int epoch, int total_epochs) {
    if (total_epochs <= 0) return 1.0;
    return 0.5 * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(epoch) /
                                 static_cast<double>(total_epochs)));
}

}  // namespace kbdm
