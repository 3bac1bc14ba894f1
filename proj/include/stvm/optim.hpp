#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "error.hpp"
#include "segnet.hpp"

namespace stvm {

/// Polynomial decay: base · (1 − iter/max_iter)^power.
inline double poly_lr(double base, long iter, long max_iter, double power) {
    if (iter < 0 || iter > max_iter || max_iter <= 0) throw RangeError("poly_lr: iteration outside [0, max_iter]");
    return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

/// SGD with Nesterov momentum and L2 weight decay folded into the gradient.
template <typename T>
struct SgdNesterov {
    double momentum = 0.9;
    double weight_decay = 5e-4;
    NetworkParams<T> velocity;

    void step(NetworkParams<T>& params, const NetworkParams<T>& grads,
              const std::function<double(ParamGroup)>& lr_for_group) {
        if (!params.same_structure(grads)) throw ShapeError("sgd: gradient structure mismatch");
        if (velocity.size() == 0) velocity = params.zeros_like();
        const T mu = static_cast<T>(momentum);
        const T wd = static_cast<T>(weight_decay);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const T lr = static_cast<T>(lr_for_group(params[i].group));
            auto& p = params[i].value;
            auto& v = velocity[i].value;
            const Matrix<T> g = grads[i].value + wd * p;
            v = mu * v + g;
            p -= lr * (g + mu * v);
        }
    }
};

/// Adam over an arbitrary list of parameter matrices.
template <typename T>
struct Adam {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long steps = 0;
    std::vector<Matrix<T>> m;
    std::vector<Matrix<T>> v;

    void step(const std::vector<Matrix<T>*>& params, const std::vector<const Matrix<T>*>& grads, double lr) {
        if (params.size() != grads.size()) throw ShapeError("adam: parameter/gradient count mismatch");
        if (m.empty()) {
            for (auto* p : params) {
                m.push_back(Matrix<T>::Zero(p->rows(), p->cols()));
                v.push_back(Matrix<T>::Zero(p->rows(), p->cols()));
            }
        }
        if (m.size() != params.size()) throw ShapeError("adam: parameter list changed between steps");
        ++steps;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
        const T step_size = static_cast<T>(lr / bc1);
        const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
        const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& g = *grads[i];
            m[i] = b1 * m[i] + (T(1) - b1) * g;
            v[i] = b2 * v[i] + (T(1) - b2) * g.cwiseProduct(g);
            const auto denom = (v[i].array().sqrt() * inv_sqrt_bc2 + static_cast<T>(eps));
            params[i]->array() -= step_size * m[i].array() / denom;
        }
    }
};

} // namespace stvm
