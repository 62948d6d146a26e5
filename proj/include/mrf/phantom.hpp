#pragma once

// Synthetic ground-truth subjects: an elliptical head mask holding a CSF
// core, a GM ring and a WM ring, each with smoothly varying T1/T2.

#include <mrf/dictionary.hpp>
#include <mrf/epg.hpp>
#include <mrf/error.hpp>
#include <mrf/image.hpp>
#include <mrf/parallel.hpp>
#include <mrf/rng.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace mrf {

enum class Region : std::uint8_t { Background = 0, GM = 1, WM = 2, CSF = 3 };

inline constexpr std::array<Region, 3> tissue_regions{Region::GM, Region::WM, Region::CSF};

inline const char* region_name(Region r) {
    switch (r) {
        case Region::Background: return "BACKGROUND";
        case Region::GM: return "GM";
        case Region::WM: return "WM";
        case Region::CSF: return "CSF";
    }
    return "?";
}

/// Nominal values are literature-typical stand-ins, not measured data.
struct RegionParams {
    TissueParams wm{800.0, 70.0};
    TissueParams gm{1300.0, 110.0};
    TissueParams csf{3500.0, 480.0};
    double variation = 0.10;  // relative amplitude of the smooth spatial variation
    double t1_max = 4000.0;   // clip so values stay inside the dictionary grid
    double t2_max = 500.0;

    const TissueParams& nominal(Region r) const {
        switch (r) {
            case Region::GM: return gm;
            case Region::WM: return wm;
            case Region::CSF: return csf;
            default: break;
        }
        throw DomainError("background has no nominal tissue values");
    }
};

struct Phantom {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> labels;  // Region codes
    std::vector<double> t1;
    std::vector<double> t2;

    std::size_t pixels() const noexcept { return width * height; }
    Region label(std::size_t i) const { return static_cast<Region>(labels[i]); }

    std::vector<std::uint8_t> foreground_mask() const {
        std::vector<std::uint8_t> m(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] != 0 ? 1 : 0;
        return m;
    }

    TissueMaps truth_maps() const {
        TissueMaps m(width, height);
        m.t1 = t1;
        m.t2 = t2;
        m.mask = foreground_mask();
        return m;
    }

    friend bool operator==(const Phantom&, const Phantom&) = default;
};

namespace detail {

// Smooth field in [-1, 1]: mean of a few random low-frequency plane waves.
class SmoothField {
public:
    SmoothField(std::mt19937_64& rng, std::size_t terms) {
        for (std::size_t i = 0; i < terms; ++i) {
            waves_.push_back({uniform(rng, -1.5, 1.5), uniform(rng, -1.5, 1.5), uniform(rng, 0.0, 2.0 * std::numbers::pi)});
        }
    }

    double operator()(double u, double v) const {
        if (waves_.empty()) return 0.0;
        double acc = 0.0;
        for (const auto& w : waves_) acc += std::cos(2.0 * std::numbers::pi * (w.kx * u + w.ky * v) + w.phase);
        return acc / static_cast<double>(waves_.size());
    }

private:
    struct Wave {
        double kx, ky, phase;
    };
    std::vector<Wave> waves_;
};

// Angular boundary wobble in [-1, 1].
class Wobble {
public:
    explicit Wobble(std::mt19937_64& rng) {
        for (int k = 2; k <= 4; ++k) terms_.push_back({k, uniform(rng, 0.0, 2.0 * std::numbers::pi)});
    }

    double operator()(double theta) const {
        double acc = 0.0;
        for (const auto& t : terms_) acc += std::cos(t.k * theta + t.phase);
        return acc / static_cast<double>(terms_.size());
    }

private:
    struct Term {
        int k;
        double phase;
    };
    std::vector<Term> terms_;
};

}  // namespace detail

inline Phantom generate_phantom(std::size_t width, std::size_t height, std::uint64_t seed,
                                const RegionParams& params = {}) {
    if (width < 8 || height < 8) throw DomainError("phantom dimensions must be at least 8 x 8");
    if (!(params.variation >= 0.0 && params.variation < 1.0)) throw DomainError("variation must lie in [0, 1)");
    auto rng = make_rng(seed, 0xFA27);
    const detail::Wobble csf_edge(rng), gm_edge(rng), skull_edge(rng);
    const detail::SmoothField t1_field(rng, 4), t2_field(rng, 4);

    Phantom ph;
    ph.width = width;
    ph.height = height;
    ph.labels.assign(width * height, 0);
    ph.t1.assign(width * height, 0.0);
    ph.t2.assign(width * height, 0.0);

    const double cx = (static_cast<double>(width) - 1.0) / 2.0;
    const double cy = (static_cast<double>(height) - 1.0) / 2.0;
    const double ax = 0.45 * static_cast<double>(width);
    const double ay = 0.40 * static_cast<double>(height);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const double dx = (static_cast<double>(x) - cx) / ax;
            const double dy = (static_cast<double>(y) - cy) / ay;
            const double r = std::hypot(dx, dy);
            const double theta = std::atan2(dy, dx);
            Region reg = Region::Background;
            if (r < 0.30 * (1.0 + 0.10 * csf_edge(theta))) {
                reg = Region::CSF;
            } else if (r < 0.62 * (1.0 + 0.06 * gm_edge(theta))) {
                reg = Region::GM;
            } else if (r < 1.0 + 0.03 * skull_edge(theta)) {
                reg = Region::WM;
            }
            const std::size_t i = y * width + x;
            ph.labels[i] = static_cast<std::uint8_t>(reg);
            if (reg == Region::Background) continue;
            const auto& nom = params.nominal(reg);
            const double u = static_cast<double>(x) / static_cast<double>(width);
            const double v = static_cast<double>(y) / static_cast<double>(height);
            const double t1 = std::min(nom.t1_ms * (1.0 + params.variation * t1_field(u, v)), params.t1_max);
            const double t2 = std::min(nom.t2_ms * (1.0 + params.variation * t2_field(u, v)), params.t2_max);
            // Rounded to single precision so the MRFM round trip is exact.
            ph.t1[i] = static_cast<double>(static_cast<float>(t1));
            ph.t2[i] = std::min(static_cast<double>(static_cast<float>(t2)), ph.t1[i]);
        }
    }
    return ph;
}

/// Replaces every foreground (T1, T2) by the nearest grid entry: nearest
/// T1 value first, then the nearest T2 available at that T1.
inline void snap_to_grid(Phantom& ph, const std::vector<TissueParams>& grid) {
    if (grid.empty()) throw DomainError("empty grid");
    std::map<double, std::vector<double>> by_t1;
    for (const auto& p : grid) by_t1[p.t1_ms].push_back(p.t2_ms);
    for (auto& [t1, t2s] : by_t1) std::sort(t2s.begin(), t2s.end());
    auto nearest = [](const std::vector<double>& sorted, double v) {
        auto it = std::lower_bound(sorted.begin(), sorted.end(), v);
        if (it == sorted.end()) return sorted.back();
        if (it == sorted.begin()) return *it;
        const double hi = *it, lo = *(it - 1);
        return (v - lo) <= (hi - v) ? lo : hi;
    };
    std::vector<double> t1_values;
    for (const auto& kv : by_t1) t1_values.push_back(kv.first);
    for (std::size_t i = 0; i < ph.pixels(); ++i) {
        if (ph.labels[i] == 0) continue;
        const double t1 = nearest(t1_values, ph.t1[i]);
        ph.t1[i] = t1;
        ph.t2[i] = nearest(by_t1.at(t1), ph.t2[i]);
    }
}

/// Per-pixel EPG simulation. Complex Gaussian noise with standard deviation
/// noise_sigma * RMS(pixel magnitude) per component is added before taking
/// the magnitude. Each pixel draws from its own seeded stream.
inline FingerprintImage synthesize_image(const Phantom& ph, const SequenceParams& seq, double noise_sigma,
                                         std::uint64_t seed, std::size_t threads = 1, const EpgOptions& opt = {}) {
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw DomainError("noise sigma must be non-negative");
    seq.validate();
    FingerprintImage img(ph.width, ph.height, seq.t_points());
    parallel_for(ph.pixels(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            if (ph.labels[i] == 0) continue;
            auto echoes = simulate_echoes(seq, {ph.t1[i], ph.t2[i]}, opt);
            if (noise_sigma > 0.0) {
                double ms = 0.0;
                for (const auto& e : echoes) ms += std::norm(e);
                const double sd = noise_sigma * std::sqrt(ms / static_cast<double>(echoes.size()));
                auto rng = make_rng(seed, i);
                for (auto& e : echoes) {
                    const double re = standard_normal(rng);
                    const double im = standard_normal(rng);
                    e += cplx{sd * re, sd * im};
                }
            }
            auto px = img.pixel(i);
            for (std::size_t t = 0; t < echoes.size(); ++t) px[t] = static_cast<float>(std::abs(echoes[t]));
        }
    });
    return img;
}

/// Writes labels.pgm, t1.mrfm and t2.mrfm into `dir`.
inline void save_phantom(const Phantom& ph, const std::string& dir) {
    std::filesystem::create_directories(dir);
    save_pgm(ph.width, ph.height, ph.labels, dir + "/labels.pgm", 3);
    save_map(ph.width, ph.height, ph.t1, dir + "/t1.mrfm");
    save_map(ph.width, ph.height, ph.t2, dir + "/t2.mrfm");
}

inline Phantom load_phantom(const std::string& dir) {
    const auto labels = load_pgm(dir + "/labels.pgm");
    const auto t1 = load_map(dir + "/t1.mrfm");
    const auto t2 = load_map(dir + "/t2.mrfm");
    if (t1.width != labels.width || t1.height != labels.height || t2.width != labels.width ||
        t2.height != labels.height) {
        throw FormatError("phantom layers have inconsistent dimensions");
    }
    Phantom ph;
    ph.width = labels.width;
    ph.height = labels.height;
    ph.labels = labels.pixels;
    for (auto l : ph.labels)
        if (l > 3) throw FormatError("label value out of range");
    ph.t1 = t1.values;
    ph.t2 = t2.values;
    return ph;
}

}  // namespace mrf
