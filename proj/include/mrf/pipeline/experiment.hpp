#pragma once

// Experiment building blocks shared by the CLI commands and the acceptance
// suite: subjects (phantom + fingerprint image), leave-one-out folds, model
// fitting with channel reduction, and evaluation.

#include <mrf/dictionary.hpp>
#include <mrf/eval.hpp>
#include <mrf/model.hpp>
#include <mrf/phantom.hpp>
#include <mrf/pipeline/config.hpp>
#include <mrf/rng.hpp>

#include <functional>
#include <memory>

namespace mrf::pipeline {

struct Subject {
    Phantom phantom;
    std::shared_ptr<const FingerprintImage> image;
};

struct Fold {
    std::size_t index = 0;
    Subject train;
    Subject test;
};

inline SequenceParams make_sequence(const RunConfig& cfg) {
    SequenceParams seq;
    seq.tr_ms = cfg.sequence.tr_ms;
    seq.te_ms = cfg.sequence.te_ms;
    if (cfg.sequence.flip_train.empty()) {
        seq.flip_train = default_flip_train(cfg.sequence.t_points, cfg.sequence.flip_seed);
    } else {
        seq.flip_train = load_flip_train_csv(cfg.sequence.flip_train);
        if (seq.flip_train.size() != cfg.sequence.t_points) {
            throw ConfigError("flip train has " + std::to_string(seq.flip_train.size()) +
                              " entries but sequence.t_points is " + std::to_string(cfg.sequence.t_points));
        }
    }
    seq.validate();
    return seq;
}

inline GridSpec make_grid_spec(const RunConfig& cfg) {
    GridSpec g = cfg.grid.preset == "full" ? full_grid() : desk_grid();
    g.filter.drop_t2_above_t1 = cfg.grid.drop_t2_above_t1;
    return g;
}

inline RegionParams region_params(const RunConfig& cfg) {
    RegionParams p;
    p.wm = cfg.phantom.wm;
    p.gm = cfg.phantom.gm;
    p.csf = cfg.phantom.csf;
    p.variation = cfg.phantom.variation;
    return p;
}

/// Phantom k of the run; its noise stream is derived from its seed.
inline Subject make_subject(const RunConfig& cfg, const SequenceParams& seq, std::size_t k) {
    const std::uint64_t seed = cfg.phantom.seed + k;
    Subject s;
    s.phantom = generate_phantom(cfg.phantom.width, cfg.phantom.height, seed, region_params(cfg));
    if (cfg.phantom.snap_to_grid) snap_to_grid(s.phantom, expand_grid(make_grid_spec(cfg)));
    s.image = std::make_shared<const FingerprintImage>(
        synthesize_image(s.phantom, seq, cfg.noise, splitmix64(seed), cfg.threads));
    return s;
}

/// One held-out subject per fold; a single fold trains on phantom 0 and
/// tests on phantom 1.
inline std::size_t subject_count(const RunConfig& cfg) { return cfg.folds == 1 ? 2 : cfg.folds; }

inline std::vector<Subject> make_subjects(const RunConfig& cfg, const SequenceParams& seq) {
    std::vector<Subject> out;
    for (std::size_t k = 0; k < subject_count(cfg); ++k) out.push_back(make_subject(cfg, seq, k));
    return out;
}

/// Side-by-side concatenation. Phantoms have a background border, so no
/// valid patch straddles two of them.
inline Subject mosaic(const std::vector<const Subject*>& parts) {
    if (parts.empty()) throw DomainError("mosaic needs at least one subject");
    if (parts.size() == 1) return *parts.front();
    const std::size_t h = parts.front()->phantom.height, t = parts.front()->image->t_points;
    std::size_t w = 0;
    for (const auto* p : parts) {
        if (p->phantom.height != h || p->image->t_points != t) throw DomainError("mosaic parts differ in shape");
        w += p->phantom.width;
    }
    Phantom ph;
    ph.width = w;
    ph.height = h;
    ph.labels.assign(w * h, 0);
    ph.t1.assign(w * h, 0.0);
    ph.t2.assign(w * h, 0.0);
    FingerprintImage img(w, h, t);
    std::size_t x0 = 0;
    for (const auto* p : parts) {
        const auto pw = p->phantom.width;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < pw; ++x) {
                const std::size_t src = y * pw + x, dst = y * w + x0 + x;
                ph.labels[dst] = p->phantom.labels[src];
                ph.t1[dst] = p->phantom.t1[src];
                ph.t2[dst] = p->phantom.t2[src];
                const auto s = p->image->pixel(src);
                std::copy(s.begin(), s.end(), img.pixel(dst).begin());
            }
        x0 += pw;
    }
    return {std::move(ph), std::make_shared<const FingerprintImage>(std::move(img))};
}

inline std::vector<Fold> make_folds(const RunConfig& cfg, const std::vector<Subject>& subjects) {
    if (subjects.size() < 2) throw DomainError("need at least two subjects");
    std::vector<Fold> folds;
    if (cfg.folds == 1) {
        folds.push_back({0, subjects[0], subjects[1]});
        return folds;
    }
    for (std::size_t f = 0; f < subjects.size(); ++f) {
        std::vector<const Subject*> rest;
        for (std::size_t k = 0; k < subjects.size(); ++k)
            if (k != f) rest.push_back(&subjects[k]);
        folds.push_back({f, mosaic(rest), subjects[f]});
    }
    return folds;
}

using EpochLog = std::function<void(const nn::EpochStats&)>;

struct FitResult {
    nn::ModelBundle bundle;
    nn::TrainHistory history;
    std::vector<double> scores;  // mean attention scores, attention reduction only
};

inline nn::TrainConfig train_config(const RunConfig& cfg, std::uint64_t seed) {
    nn::TrainConfig t;
    t.lr = cfg.train.lr;
    t.batch = cfg.train.batch;
    t.max_epochs = cfg.train.max_epochs;
    t.patience = cfg.train.patience;
    t.seed = seed;
    t.threads = cfg.threads;
    t.micro_batch = cfg.train.micro_batch;
    return t;
}

inline nn::ConvIcaConfig model_config(const RunConfig& cfg, std::size_t channels, std::size_t patch) {
    nn::ConvIcaConfig m;
    m.channels = channels;
    m.patch = patch;
    m.ratio = cfg.model.ratio;
    m.widths = cfg.model.widths;
    m.attention = cfg.model.attention;
    return m;
}

namespace detail {

inline nn::Normalization normalization(const RunConfig& cfg, const FingerprintImage& input,
                                       std::span<const std::uint8_t> mask) {
    nn::Normalization n;
    if (cfg.train.input_scaling == "rms") n.input_scale = nn::compute_input_scale(input, mask);
    return n;
}

}  // namespace detail

/// Trains CONV-ICA on `train` after reducing its channels with `method`
/// (n kept). Attention selection needs a full-channel model: `selector` if
/// given, otherwise one is trained first with the same seed.
inline FitResult fit_model(const RunConfig& cfg, const Subject& train, nn::Reduction method, std::size_t n,
                           std::size_t patch, std::uint64_t seed, const nn::ModelBundle* selector = nullptr,
                           const EpochLog& log = {}) {
    const auto mask = train.phantom.foreground_mask();
    const auto& raw = *train.image;
    FitResult res;
    auto& b = res.bundle;
    b.input_channels = raw.t_points;
    b.reduction = method;
    std::shared_ptr<const FingerprintImage> input = train.image;
    switch (method) {
        case nn::Reduction::None: break;
        case nn::Reduction::Attention: {
            FitResult own;
            if (!selector) {
                own = fit_model(cfg, train, nn::Reduction::None, 0, cfg.patch, seed, nullptr, log);
                selector = &own.bundle;
            }
            if (selector->reduction != nn::Reduction::None || !selector->model.config().attention) {
                throw InvalidStateError("attention selection needs a full-channel model with attention");
            }
            const auto set = nn::extract_patches(train.image, train.phantom, selector->model.config().patch,
                                                 cfg.train.stride, selector->norm);
            res.scores = nn::mean_attention_scores(selector->model, set, selector->norm.input_scale, cfg.threads);
            b.channels = nn::select_channels_attention(res.scores, n);
            input = std::make_shared<const FingerprintImage>(nn::select_image_channels(raw, b.channels));
            break;
        }
        case nn::Reduction::Random:
            b.channels = nn::select_channels_random(raw.t_points, n, seed);
            input = std::make_shared<const FingerprintImage>(nn::select_image_channels(raw, b.channels));
            break;
        case nn::Reduction::Pca:
            b.pca = nn::pca_fit_image(raw, mask, n);
            input = std::make_shared<const FingerprintImage>(nn::pca_project_image(raw, *b.pca, mask));
            break;
    }
    b.norm = detail::normalization(cfg, *input, mask);
    const auto set = nn::extract_patches(input, train.phantom, patch, cfg.train.stride, b.norm);
    const auto [tr, va] = nn::split_patches(set, cfg.train.val_fraction, seed);
    b.model = nn::ConvIca(model_config(cfg, input->t_points, patch), seed);
    res.history = nn::train_model(b.model, tr, va, train_config(cfg, seed), b.norm.input_scale, log);
    return res;
}

inline TissueMaps predict_subject(const RunConfig& cfg, const nn::ModelBundle& b, const Subject& s) {
    const auto mask = s.phantom.foreground_mask();
    const auto input = b.prepare(*s.image, mask);
    return nn::predict_maps(b.model, input, mask, cfg.stride, b.norm, cfg.threads, parse_assembly(cfg.predict.assembly));
}

/// Every foreground pixel of `test` gets the mean training T1 and T2.
inline TissueMaps constant_mean_maps(const Subject& train, const Subject& test) {
    double s1 = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < train.phantom.pixels(); ++i) {
        if (!train.phantom.labels[i]) continue;
        s1 += train.phantom.t1[i];
        s2 += train.phantom.t2[i];
        ++n;
    }
    if (n == 0) throw DomainError("training subject has no foreground");
    TissueMaps m(test.phantom.width, test.phantom.height);
    m.mask = test.phantom.foreground_mask();
    for (std::size_t i = 0; i < m.pixels(); ++i) {
        if (!m.mask[i]) continue;
        m.t1[i] = s1 / double(n);
        m.t2[i] = s2 / double(n);
    }
    return m;
}

}  // namespace mrf::pipeline
