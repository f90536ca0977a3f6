#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sidrec/tensor.hpp"

namespace sidrec::num {

// AdamW / SGD with decoupled weight decay and global gradient-norm clipping.
struct Optimizer {
    enum class Kind { Sgd, AdamW };

    Kind kind = Kind::AdamW;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double clip_norm = 1.0;  // <= 0 disables clipping

    size_t step_count = 0;
    std::vector<Tensor> m, v;  // Adam moments

    static Kind parse_kind(const std::string& s) {
        if (s == "sgd") return Kind::Sgd;
        if (s == "adamw") return Kind::AdamW;
        throw Error("optimizer: unknown kind '" + s + "' (expected sgd|adamw)");
    }

    double grad_norm(const std::vector<Tensor>& grads) const {
        double sq = 0.0;
        for (const Tensor& g : grads)
            for (double x : g.data) sq += x * x;
        return std::sqrt(sq);
    }

    // one update; returns the pre-clip gradient norm
    double step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
        if (params.size() != grads.size()) throw Error("optimizer: params/grads size mismatch");
        if (m.empty() && kind == Kind::AdamW) {
            for (const Tensor& p : params) {
                m.push_back(Tensor::zeros(p.shape));
                v.push_back(Tensor::zeros(p.shape));
            }
        }
        double norm = grad_norm(grads);
        double scale = 1.0;
        if (clip_norm > 0.0 && norm > clip_norm) scale = clip_norm / norm;
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, double(step_count));
        double bc2 = 1.0 - std::pow(beta2, double(step_count));
        for (size_t i = 0; i < params.size(); ++i) {
            for (size_t j = 0; j < params[i].size(); ++j) {
                double g = grads[i].data[j] * scale;
                double& p = params[i].data[j];
                if (weight_decay > 0.0) p -= lr * weight_decay * p;
                if (kind == Kind::Sgd) {
                    p -= lr * g;
                } else {
                    double& mj = m[i].data[j];
                    double& vj = v[i].data[j];
                    mj = beta1 * mj + (1.0 - beta1) * g;
                    vj = beta2 * vj + (1.0 - beta2) * g * g;
                    p -= lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps);
                }
            }
        }
        return norm;
    }
};

}  // namespace sidrec::num
