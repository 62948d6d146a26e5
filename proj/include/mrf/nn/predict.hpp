#pragma once

// Map assembly from patch predictions.

#include <mrf/nn/conv_ica.hpp>
#include <mrf/nn/patches.hpp>
#include <mrf/parallel.hpp>

#include <limits>

namespace mrf::nn {

enum class Assembly {
    Anchor,        // each prediction lands on its patch's anchor pixel
    PatchAverage,  // each prediction covers the whole patch; overlaps averaged
};

inline constexpr std::size_t predict_chunk = 256;

/// Normalized (t1, t2) per origin. Chunks are fixed-size so the result does
/// not depend on the thread count.
inline std::vector<float> predict_patches(const ConvIca& model, const FingerprintImage& img,
                                          std::span<const PatchOrigin> origins, double input_scale,
                                          std::size_t threads = 1) {
    if (img.t_points != model.config().channels) {
        throw ShapeError("image has " + std::to_string(img.t_points) + " channels, model expects " +
                             std::to_string(model.config().channels));
    }
    std::vector<float> out(2 * origins.size());
    const std::size_t chunks = (origins.size() + predict_chunk - 1) / predict_chunk;
    parallel_for(chunks, threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t c = b; c < e; ++c) {
            const std::size_t lo = c * predict_chunk, n = std::min(predict_chunk, origins.size() - lo);
            const auto x = gather_batch(img, origins.subspan(lo, n), model.config().patch, input_scale);
            const auto y = model.predict(x);
            std::copy(y.data.begin(), y.data.end(), out.begin() + static_cast<std::ptrdiff_t>(2 * lo));
        }
    });
    return out;
}

/// Masked pixels that received no prediction copy the nearest one that did
/// (Euclidean distance, ties to the lowest pixel index).
inline void fill_uncovered(TissueMaps& maps, const std::vector<std::uint8_t>& covered) {
    std::vector<std::size_t> have;
    for (std::size_t i = 0; i < maps.pixels(); ++i)
        if (covered[i]) have.push_back(i);
    if (have.empty()) return;
    const auto W = maps.width;
    for (std::size_t i = 0; i < maps.pixels(); ++i) {
        if (!maps.mask[i] || covered[i]) continue;
        const auto x = static_cast<std::ptrdiff_t>(i % W), y = static_cast<std::ptrdiff_t>(i / W);
        std::size_t best = have.front();
        auto best_d = std::numeric_limits<std::ptrdiff_t>::max();
        for (auto j : have) {
            const auto dx = static_cast<std::ptrdiff_t>(j % W) - x, dy = static_cast<std::ptrdiff_t>(j / W) - y;
            const auto d = dx * dx + dy * dy;
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        maps.t1[i] = maps.t1[best];
        maps.t2[i] = maps.t2[best];
    }
}

/// `mask` marks the pixels to estimate (usually the head mask).
inline TissueMaps predict_maps(const ConvIca& model, const FingerprintImage& img, std::span<const std::uint8_t> mask,
                               std::size_t stride, const Normalization& norm, std::size_t threads = 1,
                               Assembly assembly = Assembly::Anchor) {
    const std::size_t P = model.config().patch;
    const auto origins = valid_patch_origins(img.width, img.height, mask, P, stride);
    if (origins.empty()) throw DomainError("no patch of size " + std::to_string(P) + " fits inside the mask");
    const auto pred = predict_patches(model, img, origins, norm.input_scale, threads);

    TissueMaps maps(img.width, img.height);
    maps.mask.assign(mask.begin(), mask.end());
    std::vector<double> s1(img.pixels(), 0.0), s2(img.pixels(), 0.0);
    std::vector<std::uint32_t> count(img.pixels(), 0);
    auto deposit = [&](std::size_t px, std::size_t k) {
        s1[px] += pred[2 * k] * norm.t1_scale;
        s2[px] += pred[2 * k + 1] * norm.t2_scale;
        ++count[px];
    };
    const auto off = anchor_offset(P);
    for (std::size_t k = 0; k < origins.size(); ++k) {
        const auto& o = origins[k];
        if (assembly == Assembly::Anchor) {
            deposit((o.y + off) * img.width + o.x + off, k);
        } else {
            for (std::size_t dy = 0; dy < P; ++dy)
                for (std::size_t dx = 0; dx < P; ++dx) deposit((o.y + dy) * img.width + o.x + dx, k);
        }
    }
    std::vector<std::uint8_t> covered(img.pixels(), 0);
    for (std::size_t i = 0; i < img.pixels(); ++i) {
        if (!count[i] || !mask[i]) continue;
        maps.t1[i] = s1[i] / count[i];
        maps.t2[i] = s2[i] / count[i];
        covered[i] = 1;
    }
    fill_uncovered(maps, covered);
    return maps;
}

}  // namespace mrf::nn
