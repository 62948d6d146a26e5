#pragma once

// Run configuration: a JSON document with every experiment knob. Unknown
// keys are rejected; the resolved form is written next to each run's outputs.

#include <mrf/dictionary.hpp>
#include <mrf/epg.hpp>
#include <mrf/error.hpp>
#include <mrf/nn/bundle.hpp>
#include <mrf/nn/predict.hpp>
#include <mrf/phantom.hpp>

#include <json.hpp>

#include <array>
#include <fstream>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

namespace mrf::pipeline {

using nlohmann::json;

struct SequenceConfig {
    std::size_t t_points = 200;
    double tr_ms = 4.3;
    double te_ms = 2.0;
    std::uint64_t flip_seed = 0;
    std::string flip_train;  // CSV path; overrides the generated train when set
};

struct GridConfig {
    std::string preset = "desk";  // desk | full
    bool drop_t2_above_t1 = true;
};

struct PhantomConfig {
    std::size_t width = 64;
    std::size_t height = 64;
    std::uint64_t seed = 1;  // phantom k uses seed + k
    double variation = 0.10;
    bool snap_to_grid = false;
    TissueParams wm{800.0, 70.0};
    TissueParams gm{1300.0, 110.0};
    TissueParams csf{3500.0, 480.0};
};

struct ModelConfig {
    std::size_t ratio = 4;
    std::array<std::size_t, 4> widths{32, 64, 128, 64};
    bool attention = true;
};

struct SelectionConfig {
    std::string method = "none";  // none | attention | pca | random
    std::size_t n_channels = 0;
};

struct TrainSection {
    double lr = 1.5e-3;
    std::size_t batch = 512;
    std::size_t max_epochs = 100;
    std::size_t patience = 15;
    double val_fraction = 0.1;
    std::size_t stride = 1;  // patch extraction stride
    std::size_t micro_batch = 0;
    std::string input_scaling = "raw";  // raw | rms
};

struct PredictConfig {
    std::string assembly = "anchor";  // anchor | patch-average
};

struct SweepConfig {
    std::string axis = "channels";  // channels | patch | method
    std::vector<std::string> methods{"attention", "pca", "random"};
    std::vector<std::size_t> n_values{100, 200, 300};
    std::vector<std::size_t> patch_sizes{4, 8, 12, 16, 24};
    std::size_t patch_channels = 40;
    std::string patch_method = "attention";
    std::vector<std::uint64_t> seeds;  // empty: just `seed`
};

struct BenchConfig {
    std::size_t probes = 256;
    std::size_t rank = 5;
    double noise = 0.01;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::string out = "out";
    double noise = 0.0;
    std::size_t patch = 4;
    std::size_t stride = 1;  // prediction stride
    std::size_t folds = 1;
    std::size_t svd_rank = 0;
    bool full_scale = false;
    SequenceConfig sequence;
    GridConfig grid;
    PhantomConfig phantom;
    ModelConfig model;
    SelectionConfig selection;
    TrainSection train;
    PredictConfig predict;
    SweepConfig sweep;
    BenchConfig bench;
};

namespace detail {

// Reads the known keys of one JSON object and rejects the rest.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(label() + " must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        const std::string name = label(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!it->is_boolean()) throw ConfigError(name + " must be a boolean");
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!it->is_number_unsigned()) throw ConfigError(name + " must be a non-negative integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!it->is_number()) throw ConfigError(name + " must be a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!it->is_string()) throw ConfigError(name + " must be a string");
        }
        try {
            out = it->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(name + ": " + e.what());
        }
    }

    template <class Fn>
    void section(const char* key, Fn&& fn) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        ObjectReader child(*it, label(key));
        fn(child);
        child.finish();
    }

    void tissue(const char* key, TissueParams& out) {
        section(key, [&](ObjectReader& r) {
            r.get("t1_ms", out.t1_ms);
            r.get("t2_ms", out.t2_ms);
        });
    }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) throw ConfigError("unknown config key: " + label(item.key().c_str()));
        }
    }

private:
    std::string label(const char* key = nullptr) const {
        if (!key) return where_.empty() ? "config" : where_;
        return where_.empty() ? key : where_ + "." + key;
    }

    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

inline json tissue_json(const TissueParams& t) { return {{"t1_ms", t.t1_ms}, {"t2_ms", t.t2_ms}}; }

}  // namespace detail

/// Fields absent from `j` keep their defaults.
inline RunConfig parse_config(const json& j) {
    RunConfig c;
    detail::ObjectReader r(j, "");
    r.get("seed", c.seed);
    r.get("threads", c.threads);
    r.get("out", c.out);
    r.get("noise", c.noise);
    r.get("patch", c.patch);
    r.get("stride", c.stride);
    r.get("folds", c.folds);
    r.get("svd_rank", c.svd_rank);
    r.get("full_scale", c.full_scale);
    r.section("sequence", [&](detail::ObjectReader& s) {
        s.get("t_points", c.sequence.t_points);
        s.get("tr_ms", c.sequence.tr_ms);
        s.get("te_ms", c.sequence.te_ms);
        s.get("flip_seed", c.sequence.flip_seed);
        s.get("flip_train", c.sequence.flip_train);
    });
    r.section("grid", [&](detail::ObjectReader& s) {
        s.get("preset", c.grid.preset);
        s.get("drop_t2_above_t1", c.grid.drop_t2_above_t1);
    });
    r.section("phantom", [&](detail::ObjectReader& s) {
        s.get("width", c.phantom.width);
        s.get("height", c.phantom.height);
        s.get("seed", c.phantom.seed);
        s.get("variation", c.phantom.variation);
        s.get("snap_to_grid", c.phantom.snap_to_grid);
        s.tissue("wm", c.phantom.wm);
        s.tissue("gm", c.phantom.gm);
        s.tissue("csf", c.phantom.csf);
    });
    r.section("model", [&](detail::ObjectReader& s) {
        s.get("ratio", c.model.ratio);
        s.get("widths", c.model.widths);
        s.get("attention", c.model.attention);
    });
    r.section("selection", [&](detail::ObjectReader& s) {
        s.get("method", c.selection.method);
        s.get("n_channels", c.selection.n_channels);
    });
    r.section("train", [&](detail::ObjectReader& s) {
        s.get("lr", c.train.lr);
        s.get("batch", c.train.batch);
        s.get("max_epochs", c.train.max_epochs);
        s.get("patience", c.train.patience);
        s.get("val_fraction", c.train.val_fraction);
        s.get("stride", c.train.stride);
        s.get("micro_batch", c.train.micro_batch);
        s.get("input_scaling", c.train.input_scaling);
    });
    r.section("predict", [&](detail::ObjectReader& s) { s.get("assembly", c.predict.assembly); });
    r.section("sweep", [&](detail::ObjectReader& s) {
        s.get("axis", c.sweep.axis);
        s.get("methods", c.sweep.methods);
        s.get("n_values", c.sweep.n_values);
        s.get("patch_sizes", c.sweep.patch_sizes);
        s.get("patch_channels", c.sweep.patch_channels);
        s.get("patch_method", c.sweep.patch_method);
        s.get("seeds", c.sweep.seeds);
    });
    r.section("bench", [&](detail::ObjectReader& s) {
        s.get("probes", c.bench.probes);
        s.get("rank", c.bench.rank);
        s.get("noise", c.bench.noise);
    });
    r.finish();
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open for reading: " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return parse_config(j);
}

inline json to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["out"] = c.out;
    j["noise"] = c.noise;
    j["patch"] = c.patch;
    j["stride"] = c.stride;
    j["folds"] = c.folds;
    j["svd_rank"] = c.svd_rank;
    j["full_scale"] = c.full_scale;
    j["sequence"] = {{"t_points", c.sequence.t_points},
                     {"tr_ms", c.sequence.tr_ms},
                     {"te_ms", c.sequence.te_ms},
                     {"flip_seed", c.sequence.flip_seed},
                     {"flip_train", c.sequence.flip_train}};
    j["grid"] = {{"preset", c.grid.preset}, {"drop_t2_above_t1", c.grid.drop_t2_above_t1}};
    j["phantom"] = {{"width", c.phantom.width},
                    {"height", c.phantom.height},
                    {"seed", c.phantom.seed},
                    {"variation", c.phantom.variation},
                    {"snap_to_grid", c.phantom.snap_to_grid},
                    {"wm", detail::tissue_json(c.phantom.wm)},
                    {"gm", detail::tissue_json(c.phantom.gm)},
                    {"csf", detail::tissue_json(c.phantom.csf)}};
    j["model"] = {{"ratio", c.model.ratio}, {"widths", c.model.widths}, {"attention", c.model.attention}};
    j["selection"] = {{"method", c.selection.method}, {"n_channels", c.selection.n_channels}};
    j["train"] = {{"lr", c.train.lr},
                  {"batch", c.train.batch},
                  {"max_epochs", c.train.max_epochs},
                  {"patience", c.train.patience},
                  {"val_fraction", c.train.val_fraction},
                  {"stride", c.train.stride},
                  {"micro_batch", c.train.micro_batch},
                  {"input_scaling", c.train.input_scaling}};
    j["predict"] = {{"assembly", c.predict.assembly}};
    j["sweep"] = {{"axis", c.sweep.axis},
                  {"methods", c.sweep.methods},
                  {"n_values", c.sweep.n_values},
                  {"patch_sizes", c.sweep.patch_sizes},
                  {"patch_channels", c.sweep.patch_channels},
                  {"patch_method", c.sweep.patch_method},
                  {"seeds", c.sweep.seeds}};
    j["bench"] = {{"probes", c.bench.probes}, {"rank", c.bench.rank}, {"noise", c.bench.noise}};
    return j;
}

/// Full-scale sequence length and grid.
inline void apply_full_scale(RunConfig& c) {
    c.full_scale = true;
    c.sequence.t_points = 2000;
    c.grid.preset = "full";
}

inline nn::Assembly parse_assembly(const std::string& s) {
    if (s == "anchor") return nn::Assembly::Anchor;
    if (s == "patch-average") return nn::Assembly::PatchAverage;
    throw ConfigError("unknown assembly mode: " + s);
}

inline void validate(const RunConfig& c) {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(c.threads, "threads");
    positive(c.patch, "patch");
    positive(c.stride, "stride");
    positive(c.folds, "folds");
    positive(c.sequence.t_points, "sequence.t_points");
    positive(c.model.ratio, "model.ratio");
    for (auto w : c.model.widths) positive(w, "model.widths");
    positive(c.train.batch, "train.batch");
    positive(c.train.max_epochs, "train.max_epochs");
    positive(c.train.patience, "train.patience");
    positive(c.train.stride, "train.stride");
    if (c.out.empty()) throw ConfigError("out must not be empty");
    if (!(c.noise >= 0.0) || !std::isfinite(c.noise)) throw ConfigError("noise must be non-negative");
    if (!(c.sequence.tr_ms > 0.0) || !(c.sequence.te_ms >= 0.0) || c.sequence.te_ms > c.sequence.tr_ms) {
        throw ConfigError("sequence timing must satisfy 0 <= te_ms <= tr_ms, tr_ms > 0");
    }
    if (c.grid.preset != "desk" && c.grid.preset != "full") throw ConfigError("unknown grid preset: " + c.grid.preset);
    if (c.phantom.width < 8 || c.phantom.height < 8) throw ConfigError("phantom must be at least 8 x 8");
    if (!(c.phantom.variation >= 0.0 && c.phantom.variation < 1.0)) {
        throw ConfigError("phantom.variation must lie in [0, 1)");
    }
    if (c.patch > c.phantom.width || c.patch > c.phantom.height) throw ConfigError("patch larger than the phantom");
    if (!(c.train.lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (!(c.train.val_fraction > 0.0 && c.train.val_fraction < 1.0)) {
        throw ConfigError("train.val_fraction must lie in (0, 1)");
    }
    if (c.train.input_scaling != "raw" && c.train.input_scaling != "rms") {
        throw ConfigError("unknown train.input_scaling: " + c.train.input_scaling);
    }
    parse_assembly(c.predict.assembly);
    const auto method = nn::parse_reduction(c.selection.method);
    if (method != nn::Reduction::None &&
        (c.selection.n_channels == 0 || c.selection.n_channels > c.sequence.t_points)) {
        throw ConfigError("selection.n_channels must lie in [1, t_points]");
    }
    positive(c.bench.probes, "bench.probes");
    if (c.bench.rank == 0 || c.bench.rank > c.sequence.t_points) throw ConfigError("bench.rank must lie in [1, t_points]");
    if (!(c.bench.noise >= 0.0)) throw ConfigError("bench.noise must be non-negative");
    if (c.svd_rank > c.sequence.t_points) throw ConfigError("svd_rank exceeds t_points");
}

/// Sweep fields are only checked when a sweep runs, and only those the
/// chosen axis uses, so the default channel counts constrain nothing else.
inline void validate_sweep(const RunConfig& c) {
    validate(c);
    const auto& s = c.sweep;
    if (s.axis == "channels") {
        if (s.methods.empty() || s.n_values.empty()) throw ConfigError("sweep.methods and sweep.n_values must be set");
        for (const auto& m : s.methods) {
            if (nn::parse_reduction(m) == nn::Reduction::None) throw ConfigError("sweep.methods cannot contain none");
        }
        for (auto n : s.n_values) {
            if (n == 0 || n > c.sequence.t_points) throw ConfigError("sweep.n_values must lie in [1, t_points]");
        }
    } else if (s.axis == "patch") {
        if (s.patch_sizes.empty()) throw ConfigError("sweep.patch_sizes must be set");
        for (auto p : s.patch_sizes) {
            if (p == 0 || p > c.phantom.width || p > c.phantom.height) {
                throw ConfigError("sweep.patch_sizes must lie in [1, phantom size]");
            }
        }
        if (s.patch_channels == 0 || s.patch_channels > c.sequence.t_points) {
            throw ConfigError("sweep.patch_channels must lie in [1, t_points]");
        }
        if (nn::parse_reduction(s.patch_method) == nn::Reduction::None) {
            throw ConfigError("sweep.patch_method cannot be none");
        }
    } else if (s.axis != "method") {
        throw ConfigError("unknown sweep.axis: " + s.axis);
    }
}

inline void write_config(const RunConfig& c, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << to_json(c).dump(2) << '\n';
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace mrf::pipeline
