#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "met/tensor.hpp"

namespace met {

struct AdamWConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Per-parameter first/second moments and the shared step counter.
template <typename Scalar>
struct OptimState {
    std::vector<Matrix<Scalar>> first;
    std::vector<Matrix<Scalar>> second;
    long step = 0;
};

/// AdamW with bias correction; weight decay is applied to the parameters
/// directly (theta -= lr * wd * theta), not through the gradient.
template <typename Scalar>
void adamw_step(const std::vector<Matrix<Scalar>*>& params, const std::vector<Matrix<Scalar>>& grads,
                OptimState<Scalar>& state, const AdamWConfig& cfg) {
    if (params.size() != grads.size()) throw std::invalid_argument("adamw_step: parameter/gradient count mismatch");
    if (state.first.empty()) {
        for (const auto* p : params) {
            state.first.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
            state.second.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
        }
    }
    if (state.first.size() != params.size()) throw std::invalid_argument("adamw_step: optimizer state does not match parameters");

    ++state.step;
    const double t = static_cast<double>(state.step);
    const Scalar b1 = Scalar(cfg.beta1), b2 = Scalar(cfg.beta2);
    const Scalar correction1 = Scalar(1.0 - std::pow(cfg.beta1, t));
    const Scalar correction2 = Scalar(1.0 - std::pow(cfg.beta2, t));
    const Scalar lr = Scalar(cfg.lr), eps = Scalar(cfg.eps), decay = Scalar(cfg.lr * cfg.weight_decay);

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& theta = *params[i];
        const auto& g = grads[i];
        if (g.rows() != theta.rows() || g.cols() != theta.cols())
            throw ShapeError("adamw_step: gradient shape does not match parameter " + std::to_string(i));
        auto& m = state.first[i];
        auto& v = state.second[i];
        m = b1 * m + (Scalar(1) - b1) * g;
        v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
        const auto m_hat = (m.array() / correction1);
        const auto v_hat = (v.array() / correction2);
        theta.array() -= decay * theta.array() + lr * m_hat / (v_hat.sqrt() + eps);
    }
}

}  // namespace met
