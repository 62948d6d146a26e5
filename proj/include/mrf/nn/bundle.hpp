#pragma once

// A trained model on disk: <dir>/model.mrfw (parameters), <dir>/model.json
// (architecture, normalization, channel reduction) and, for PCA reduction,
// <dir>/pca.mrfw.

#include <mrf/nn/conv_ica.hpp>
#include <mrf/nn/patches.hpp>
#include <mrf/nn/selection.hpp>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>

namespace mrf::nn {

enum class Reduction { None, Attention, Random, Pca };

inline const char* reduction_name(Reduction r) {
    switch (r) {
        case Reduction::None: return "none";
        case Reduction::Attention: return "attention";
        case Reduction::Random: return "random";
        case Reduction::Pca: return "pca";
    }
    return "?";
}

inline Reduction parse_reduction(const std::string& s) {
    if (s == "none") return Reduction::None;
    if (s == "attention") return Reduction::Attention;
    if (s == "random") return Reduction::Random;
    if (s == "pca") return Reduction::Pca;
    throw ConfigError("unknown channel reduction method: " + s);
}

struct ModelBundle {
    ConvIca model;
    Normalization norm;
    std::size_t input_channels = 0;  // channels of the raw image
    Reduction reduction = Reduction::None;
    std::vector<std::size_t> channels;  // kept channels for attention/random
    std::optional<Pca> pca;

    /// Raw image -> model input (channel subset or PCA projection).
    FingerprintImage prepare(const FingerprintImage& raw, std::span<const std::uint8_t> mask) const {
        if (raw.t_points != input_channels) {
            throw DomainError("image has " + std::to_string(raw.t_points) + " time points, model was trained on " +
                              std::to_string(input_channels));
        }
        switch (reduction) {
            case Reduction::None: return raw;
            case Reduction::Attention:
            case Reduction::Random: return select_image_channels(raw, channels);
            case Reduction::Pca: return pca_project_image(raw, *pca, mask);
        }
        return raw;
    }
};

inline nlohmann::json bundle_sidecar(const ModelBundle& b) {
    const auto& c = b.model.config();
    nlohmann::json j;
    j["format"] = "mrf-conv-ica";
    j["version"] = 1;
    j["channels"] = c.channels;
    j["patch"] = c.patch;
    j["ratio"] = c.ratio;
    j["widths"] = c.widths;
    j["attention"] = c.attention;
    j["head_bias"] = c.head_bias;
    j["head_gain"] = c.head_gain;
    j["anchor_offset"] = anchor_offset(c.patch);
    j["normalization"] = {{"t1_scale", b.norm.t1_scale}, {"t2_scale", b.norm.t2_scale},
                          {"input_scale", b.norm.input_scale}};
    j["input_channels"] = b.input_channels;
    j["reduction"] = {{"method", reduction_name(b.reduction)}, {"channels", b.channels}};
    return j;
}

inline void save_bundle(const ModelBundle& b, const std::string& dir) {
    std::filesystem::create_directories(dir);
    ad::save_parameters(b.model.params(), dir + "/model.mrfw");
    std::ofstream os(dir + "/model.json", std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + dir + "/model.json");
    os << bundle_sidecar(b).dump(2) << '\n';
    if (!os) throw IoError("write failed: " + dir + "/model.json");
    if (b.reduction == Reduction::Pca) {
        if (!b.pca) throw InvalidStateError("PCA reduction without a fitted basis");
        ParameterSet<float> p;
        const auto C = static_cast<std::size_t>(b.pca->components.rows());
        const auto n = static_cast<std::size_t>(b.pca->components.cols());
        const auto im = p.add("pca/mean", {C});
        const auto ic = p.add("pca/components", {C, n});
        const auto iv = p.add("pca/variances", {static_cast<std::size_t>(b.pca->variances.size())});
        const auto it = p.add("pca/total_variance", {1});
        for (std::size_t r = 0; r < C; ++r) {
            p.value(im)[r] = static_cast<float>(b.pca->mean(static_cast<Eigen::Index>(r)));
            for (std::size_t k = 0; k < n; ++k)
                p.value(ic)[r * n + k] = static_cast<float>(b.pca->components(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)));
        }
        for (Eigen::Index k = 0; k < b.pca->variances.size(); ++k)
            p.value(iv)[static_cast<std::size_t>(k)] = static_cast<float>(b.pca->variances(k));
        p.value(it)[0] = static_cast<float>(b.pca->total_variance);
        ad::save_parameters(p, dir + "/pca.mrfw");
    }
}

inline ModelBundle load_bundle(const std::string& dir) {
    const std::string side = dir + "/model.json";
    std::ifstream is(side);
    if (!is) throw IoError("cannot open for reading: " + side);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
        if (j.at("format") != "mrf-conv-ica" || j.at("version") != 1) throw FormatError("not a CONV-ICA sidecar: " + side);
        ConvIcaConfig cfg;
        cfg.channels = j.at("channels").get<std::size_t>();
        cfg.patch = j.at("patch").get<std::size_t>();
        cfg.ratio = j.at("ratio").get<std::size_t>();
        cfg.widths = j.at("widths").get<std::array<std::size_t, 4>>();
        cfg.attention = j.at("attention").get<bool>();
        cfg.head_bias = j.at("head_bias").get<float>();
        cfg.head_gain = j.at("head_gain").get<float>();
        ModelBundle b;
        b.model = ConvIca(cfg, ad::load_parameters(dir + "/model.mrfw"));
        const auto& n = j.at("normalization");
        b.norm = {n.at("t1_scale").get<double>(), n.at("t2_scale").get<double>(), n.at("input_scale").get<double>()};
        b.input_channels = j.at("input_channels").get<std::size_t>();
        b.reduction = parse_reduction(j.at("reduction").at("method").get<std::string>());
        b.channels = j.at("reduction").at("channels").get<std::vector<std::size_t>>();
        if (b.reduction == Reduction::Pca) {
            const auto p = ad::load_parameters(dir + "/pca.mrfw");
            const auto& mean = p.value("pca/mean");
            const auto& comp = p.value("pca/components");
            const auto& var = p.value("pca/variances");
            if (comp.rank() != 2 || comp.dim(0) != mean.size()) throw FormatError("inconsistent PCA tensors");
            Pca pca;
            pca.mean = Eigen::Map<const Eigen::VectorXf>(mean.ptr(), static_cast<Eigen::Index>(mean.size())).cast<double>();
            pca.components.resize(static_cast<Eigen::Index>(comp.dim(0)), static_cast<Eigen::Index>(comp.dim(1)));
            for (std::size_t r = 0; r < comp.dim(0); ++r)
                for (std::size_t k = 0; k < comp.dim(1); ++k)
                    pca.components(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = comp[r * comp.dim(1) + k];
            pca.variances = Eigen::Map<const Eigen::VectorXf>(var.ptr(), static_cast<Eigen::Index>(var.size())).cast<double>();
            pca.total_variance = p.value("pca/total_variance")[0];
            b.pca = std::move(pca);
        }
        const std::size_t expect = b.reduction == Reduction::None ? b.input_channels
                                   : b.reduction == Reduction::Pca ? b.pca->output_dim()
                                                                   : b.channels.size();
        if (expect != cfg.channels) throw FormatError("sidecar channel reduction does not match the model width");
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed sidecar " + side + ": " + e.what());
    }
}

}  // namespace mrf::nn
