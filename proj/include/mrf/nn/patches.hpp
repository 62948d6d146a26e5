#pragma once

// Overlapping square patches of a fingerprint image, each labelled with the
// normalized (T1, T2) of its anchor pixel.

#include <mrf/ad/tensor.hpp>
#include <mrf/image.hpp>
#include <mrf/phantom.hpp>
#include <mrf/rng.hpp>

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <vector>

namespace mrf::nn {

struct Normalization {
    double t1_scale = 4000.0;
    double t2_scale = 500.0;
    double input_scale = 1.0;  // multiplies every input sample

    friend bool operator==(const Normalization&, const Normalization&) = default;
};

/// Offset of the labelled pixel inside a patch: (2, 2) for 4 x 4.
inline std::size_t anchor_offset(std::size_t patch) { return patch / 2; }

struct PatchOrigin {
    std::uint32_t x = 0;
    std::uint32_t y = 0;
    friend bool operator==(const PatchOrigin&, const PatchOrigin&) = default;
};

/// Top-left corners (row-major scan, given stride) of every patch whose
/// pixels all have mask set.
inline std::vector<PatchOrigin> valid_patch_origins(std::size_t width, std::size_t height,
                                                    std::span<const std::uint8_t> mask, std::size_t patch,
                                                    std::size_t stride) {
    if (patch == 0 || stride == 0) throw DomainError("patch size and stride must be positive");
    if (mask.size() != width * height) throw DomainError("mask size does not match the image");
    std::vector<PatchOrigin> out;
    if (patch > width || patch > height) return out;
    // Summed-area table of the mask.
    std::vector<std::size_t> sat((width + 1) * (height + 1), 0);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            sat[(y + 1) * (width + 1) + x + 1] = (mask[y * width + x] ? 1 : 0) + sat[y * (width + 1) + x + 1] +
                                                 sat[(y + 1) * (width + 1) + x] - sat[y * (width + 1) + x];
    const std::size_t full = patch * patch;
    for (std::size_t y = 0; y + patch <= height; y += stride)
        for (std::size_t x = 0; x + patch <= width; x += stride) {
            const std::size_t s = sat[(y + patch) * (width + 1) + x + patch] - sat[y * (width + 1) + x + patch] -
                                  sat[(y + patch) * (width + 1) + x] + sat[y * (width + 1) + x];
            if (s == full) out.push_back({static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)});
        }
    return out;
}

struct PatchSet {
    std::shared_ptr<const FingerprintImage> image;
    std::size_t patch = 4;
    std::vector<PatchOrigin> origins;
    std::vector<float> targets;  // (t1, t2) per patch, normalized

    std::size_t size() const noexcept { return origins.size(); }
    bool empty() const noexcept { return origins.empty(); }
    std::size_t channels() const { return image ? image->t_points : 0; }

    std::size_t anchor_pixel(std::size_t i) const {
        const auto off = anchor_offset(patch);
        return (origins[i].y + off) * image->width + origins[i].x + off;
    }

    PatchSet subset(std::span<const std::size_t> idx) const {
        PatchSet s;
        s.image = image;
        s.patch = patch;
        for (auto i : idx) {
            s.origins.push_back(origins.at(i));
            s.targets.push_back(targets[2 * i]);
            s.targets.push_back(targets[2 * i + 1]);
        }
        return s;
    }
};

inline PatchSet extract_patches(std::shared_ptr<const FingerprintImage> image, const Phantom& ph, std::size_t patch,
                                std::size_t stride = 1, const Normalization& norm = {}) {
    if (!image) throw DomainError("no image");
    if (image->width != ph.width || image->height != ph.height) {
        throw DomainError("image and phantom dimensions differ");
    }
    if (patch > image->width || patch > image->height) throw DomainError("patch larger than the image");
    PatchSet set;
    set.image = std::move(image);
    set.patch = patch;
    set.origins = valid_patch_origins(ph.width, ph.height, ph.foreground_mask(), patch, stride);
    if (set.origins.empty()) throw DomainError("no patch of size " + std::to_string(patch) + " fits inside the mask");
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto a = set.anchor_pixel(i);
        set.targets.push_back(static_cast<float>(ph.t1[a] / norm.t1_scale));
        set.targets.push_back(static_cast<float>(ph.t2[a] / norm.t2_scale));
    }
    return set;
}

/// (B, patch, patch, C) input batch for the given origins.
inline ad::Tensor<float> gather_batch(const FingerprintImage& img, std::span<const PatchOrigin> origins,
                                      std::size_t patch, double input_scale) {
    const std::size_t C = img.t_points;
    ad::Tensor<float> out({origins.size(), patch, patch, C});
    const float s = static_cast<float>(input_scale);
    float* dst = out.ptr();
    for (const auto& o : origins)
        for (std::size_t dy = 0; dy < patch; ++dy)
            for (std::size_t dx = 0; dx < patch; ++dx) {
                const auto px = img.pixel(o.x + dx, o.y + dy);
                for (std::size_t c = 0; c < C; ++c) *dst++ = px[c] * s;
            }
    return out;
}

inline ad::Tensor<float> gather_batch(const PatchSet& set, std::span<const std::size_t> idx, double input_scale) {
    std::vector<PatchOrigin> o;
    o.reserve(idx.size());
    for (auto i : idx) o.push_back(set.origins.at(i));
    return gather_batch(*set.image, o, set.patch, input_scale);
}

inline ad::Tensor<float> gather_targets(const PatchSet& set, std::span<const std::size_t> idx) {
    ad::Tensor<float> out({idx.size(), 2});
    for (std::size_t k = 0; k < idx.size(); ++k) {
        out[2 * k] = set.targets[2 * idx[k]];
        out[2 * k + 1] = set.targets[2 * idx[k] + 1];
    }
    return out;
}

/// Seeded split; the validation part holds round(fraction * N) patches, at
/// least one when N >= 2.
inline std::pair<PatchSet, PatchSet> split_patches(const PatchSet& set, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw DomainError("validation fraction must lie in (0, 1)");
    if (set.size() < 2) throw DomainError("need at least two patches to split");
    std::vector<std::size_t> idx(set.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto rng = make_rng(seed, 0x5B11);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
    auto nval = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(set.size())));
    nval = std::clamp<std::size_t>(nval, 1, set.size() - 1);
    std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nval));
    std::vector<std::size_t> tr(idx.begin() + static_cast<std::ptrdiff_t>(nval), idx.end());
    std::sort(val.begin(), val.end());
    std::sort(tr.begin(), tr.end());
    return {set.subset(tr), set.subset(val)};
}

/// 1 / RMS of the masked samples.
inline double compute_input_scale(const FingerprintImage& img, std::span<const std::uint8_t> mask) {
    double ss = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < img.pixels(); ++i) {
        if (!mask[i]) continue;
        for (float v : img.pixel(i)) ss += double(v) * v;
        n += img.t_points;
    }
    if (n == 0 || !(ss > 0.0)) throw DegenerateSignalError("masked image region carries no signal");
    return 1.0 / std::sqrt(ss / static_cast<double>(n));
}

}  // namespace mrf::nn
