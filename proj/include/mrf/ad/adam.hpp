#pragma once

#include <mrf/ad/parameters.hpp>

#include <cmath>
#include <cstdint>

namespace mrf::ad {

struct AdamConfig {
    double lr = 1.5e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct AdamState {
    AdamConfig config;
    std::uint64_t t = 0;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;

    AdamState() = default;
    explicit AdamState(const AdamConfig& cfg) : config(cfg) {}
};

/// Bias-corrected Adam update using the gradients currently held in `params`.
template <class T>
void adam_step(ParameterSet<T>& params, AdamState<T>& st) {
    if (st.m.empty()) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            st.m.emplace_back(params.value(i).shape);
            st.v.emplace_back(params.value(i).shape);
        }
    }
    if (st.m.size() != params.size()) throw ShapeError("Adam state does not match the parameter set");
    ++st.t;
    const auto& c = st.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.t));
    const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
    const T step = static_cast<T>(c.lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(c.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params.value(i);
        const auto& g = params.grad(i);
        auto& m = st.m[i];
        auto& v = st.v[i];
        if (m.shape != w.shape || g.shape != w.shape) throw ShapeError("Adam shape mismatch at " + params.name(i));
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = b1 * m[k] + (T(1) - b1) * g[k];
            v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
            w[k] -= step * m[k] / (std::sqrt(v[k] * inv_bc2) + eps);
        }
    }
}

}  // namespace mrf::ad
