#pragma once

// Finite-difference check of the full CONV-ICA graph in double precision.

#include <mrf/nn/conv_ica.hpp>

namespace mrf::nn {

struct ConvIcaCheckOptions {
    std::size_t batch = 3;
    std::uint64_t seed = 0;
    ad::GradCheckOptions check{.tolerance = 1e-4, .eps = 1e-3, .max_per_tensor = 24};
};

/// Random inputs in [0, 1) and targets in [0.2, 0.8) against a freshly
/// initialized model, evaluated through the double-precision shadow.
inline ad::GradCheckReport gradient_check_conv_ica(const ConvIcaConfig& cfg, const ConvIcaCheckOptions& opt = {}) {
    const ConvIca model(cfg, opt.seed);
    auto params = model.params().cast<double>();
    auto rng = make_rng(opt.seed, 0x6C1C);
    Tensor<double> x({opt.batch, cfg.patch, cfg.patch, cfg.channels});
    for (auto& v : x.data) v = uniform01(rng);
    Tensor<double> y({opt.batch, 2});
    for (auto& v : y.data) v = uniform(rng, 0.2, 0.8);
    const ad::LossFn loss = [&](ParameterSet<double>& p, bool with_grad) {
        Tape<double> t;
        const auto out = conv_ica_forward(t, cfg, t.alias(x, "input"), param_binder(t, p));
        const auto l = t.mse(out.output, y);
        if (with_grad) t.backward(l);
        return t.value(l)[0];
    };
    auto check = opt.check;
    check.seed = opt.seed;
    return ad::gradient_check(params, loss, check);
}

}  // namespace mrf::nn
