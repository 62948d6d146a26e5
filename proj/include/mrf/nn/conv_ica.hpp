#pragma once

// CONV-ICA: channel attention (shared two-layer dense stack over max- and
// average-pooled channel descriptors, sigmoid gate) feeding four 3x3 conv
// layers and a dense regression head with two outputs (T1, T2).

#include <mrf/autodiff.hpp>
#include <mrf/rng.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

namespace mrf::nn {

using ad::ParameterSet;
using ad::Shape;
using ad::Tape;
using ad::Tensor;

struct ConvIcaConfig {
    std::size_t channels = 0;
    std::size_t patch = 4;
    std::size_t ratio = 4;
    std::array<std::size_t, 4> widths{32, 64, 128, 64};
    bool attention = true;  // false replaces the attention block by the identity
    float head_bias = 0.5f;  // middle of the normalized target range
    float head_gain = 0.1f;  // shrinks the head's init so its final ReLU starts active

    std::size_t hidden() const { return std::max<std::size_t>(1, channels / ratio); }

    void validate() const {
        if (channels == 0) throw DomainError("model needs at least one channel");
        if (patch == 0) throw DomainError("patch size must be positive");
        if (ratio == 0) throw DomainError("attention reduction ratio must be positive");
        for (auto w : widths)
            if (w == 0) throw DomainError("conv widths must be positive");
    }

    friend bool operator==(const ConvIcaConfig&, const ConvIcaConfig&) = default;
};

inline constexpr std::array<const char*, 4> conv_names{"conv1", "conv2", "conv3", "conv4"};

/// Allocates parameters in a fixed order and fills them: weights uniform in
/// +/- sqrt(6 / fan_in) (times head_gain for the head), biases zero except
/// the head bias.
inline ParameterSet<float> init_conv_ica(const ConvIcaConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParameterSet<float> p;
    auto rng = make_rng(seed, 0x1A17);
    auto weight = [&](const std::string& name, Shape shape, std::size_t fan_in, double gain = 1.0) {
        const auto i = p.add(name, std::move(shape));
        const double lim = gain * std::sqrt(6.0 / static_cast<double>(fan_in));
        for (auto& v : p.value(i).data) v = static_cast<float>(uniform(rng, -lim, lim));
    };
    auto bias = [&](const std::string& name, std::size_t n, float v) {
        const auto i = p.add(name, {n});
        std::fill(p.value(i).data.begin(), p.value(i).data.end(), v);
    };
    const std::size_t C = cfg.channels, h = cfg.hidden();
    if (cfg.attention) {
        weight("attention/dense1/w", {C, h}, C);
        bias("attention/dense1/b", h, 0.0f);
        weight("attention/dense2/w", {h, C}, h);
        bias("attention/dense2/b", C, 0.0f);
    }
    std::size_t in = C;
    for (std::size_t l = 0; l < 4; ++l) {
        weight(std::string(conv_names[l]) + "/w", {3, 3, in, cfg.widths[l]}, 9 * in);
        bias(std::string(conv_names[l]) + "/b", cfg.widths[l], 0.0f);
        in = cfg.widths[l];
    }
    const std::size_t flat = cfg.patch * cfg.patch * cfg.widths[3];
    weight("head/w", {flat, 2}, flat, cfg.head_gain);
    bias("head/b", 2, cfg.head_bias);
    return p;
}

template <class T>
struct AttentionVars {
    typename Tape<T>::Var weighted;
    typename Tape<T>::Var alpha;
};

/// `bind(name)` returns the tape variable for a named parameter.
template <class T, class Bind>
AttentionVars<T> attention_block(Tape<T>& t, typename Tape<T>::Var x, Bind&& bind) {
    const auto w1 = bind("attention/dense1/w"), b1 = bind("attention/dense1/b");
    const auto w2 = bind("attention/dense2/w"), b2 = bind("attention/dense2/b");
    auto branch = [&](typename Tape<T>::Var pooled, const char* tag) {
        const auto h = t.relu(t.dense(pooled, w1, b1, std::string("attention/dense1[") + tag + "]"));
        return t.dense(h, w2, b2, std::string("attention/dense2[") + tag + "]");
    };
    const auto mx = branch(t.global_max_pool(x, "attention/max_pool"), "max");
    const auto av = branch(t.global_avg_pool(x, "attention/avg_pool"), "avg");
    const auto alpha = t.sigmoid(t.add(mx, av, "attention/sum"), "attention/alpha");
    return {t.scale_channels(x, alpha, "attention/weighted"), alpha};
}

template <class T>
struct ConvIcaVars {
    typename Tape<T>::Var output;
    typename Tape<T>::Var alpha;  // unset without attention
};

/// x: (B, patch, patch, C) -> (B, 2).
template <class T, class Bind>
ConvIcaVars<T> conv_ica_forward(Tape<T>& t, const ConvIcaConfig& cfg, typename Tape<T>::Var x, Bind&& bind) {
    const auto& xs = t.value(x).shape;
    if (xs.size() != 4 || xs[1] != cfg.patch || xs[2] != cfg.patch || xs[3] != cfg.channels) {
        throw ShapeError("CONV-ICA input must be (B," + std::to_string(cfg.patch) + "," +
                             std::to_string(cfg.patch) + "," + std::to_string(cfg.channels) + "), got " +
                             ad::shape_str(xs));
    }
    ConvIcaVars<T> out;
    auto h = x;
    if (cfg.attention) {
        const auto a = attention_block(t, x, bind);
        h = a.weighted;
        out.alpha = a.alpha;
    }
    for (const char* name : conv_names) {
        const std::string n(name);
        h = t.relu(t.conv2d(h, bind(n + "/w"), bind(n + "/b"), n), n + "/relu");
    }
    const auto flat = t.flatten(h, "flatten");
    out.output = t.relu(t.dense(flat, bind("head/w"), bind("head/b"), "head"), "head/relu");
    return out;
}

/// Binds every parameter of `p` onto the tape, reading values and
/// accumulating gradients in place.
template <class T>
auto param_binder(Tape<T>& t, ParameterSet<T>& p) {
    return [&t, &p](const std::string& name) { return t.parameter(p, name); };
}

/// Forward-only binding: parameters enter the tape as constants.
template <class T>
auto frozen_binder(Tape<T>& t, const ParameterSet<T>& p) {
    return [&t, &p](const std::string& name) { return t.alias(p.value(name), name); };
}

class ConvIca {
public:
    ConvIca() = default;
    ConvIca(const ConvIcaConfig& cfg, std::uint64_t seed) : cfg_(cfg), params_(init_conv_ica(cfg, seed)) {}
    ConvIca(const ConvIcaConfig& cfg, ParameterSet<float> params) : cfg_(cfg), params_(std::move(params)) {
        cfg_.validate();
        const auto expected = init_conv_ica(cfg_, 0);
        if (expected.size() != params_.size()) throw ShapeError("checkpoint does not match the model layout");
        for (std::size_t i = 0; i < expected.size(); ++i) {
            if (expected.name(i) != params_.name(i) || expected.value(i).shape != params_.value(i).shape) {
                throw ShapeError("checkpoint tensor " + params_.name(i) + " " +
                                     ad::shape_str(params_.value(i).shape) + " does not match expected " +
                                     expected.name(i) + " " + ad::shape_str(expected.value(i).shape));
            }
        }
    }

    const ConvIcaConfig& config() const noexcept { return cfg_; }
    ParameterSet<float>& params() noexcept { return params_; }
    const ParameterSet<float>& params() const noexcept { return params_; }
    std::size_t parameter_count() const { return params_.count(); }

    /// Forward only; returns (B, 2).
    Tensor<float> predict(const Tensor<float>& batch) const {
        Tape<float> t;
        const auto out = conv_ica_forward(t, cfg_, t.alias(batch, "input"), frozen_binder(t, params_));
        return t.value(out.output);
    }

private:
    ConvIcaConfig cfg_;
    ParameterSet<float> params_;
};

struct AttentionResult {
    Tensor<float> weighted;
    Tensor<float> alpha;  // (B, C)
};

/// The attention block alone on a (B, P, P, C) batch.
inline AttentionResult channel_attention_forward(const Tensor<float>& input, const ConvIca& model) {
    if (!model.config().attention) throw InvalidStateError("model has no attention block");
    const auto& s = input.shape;
    if (s.size() != 4 || s[1] != model.config().patch || s[2] != model.config().patch ||
        s[3] != model.config().channels) {
        throw ShapeError("attention input must be (B,P,P,C) matching the model, got " + ad::shape_str(s));
    }
    Tape<float> t;
    const auto a = attention_block(t, t.alias(input, "input"), frozen_binder(t, model.params()));
    return {t.value(a.weighted), t.value(a.alpha)};
}

}  // namespace mrf::nn
