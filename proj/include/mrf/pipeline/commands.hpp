#pragma once

// CLI commands as library calls. Each writes its artifacts and the resolved
// config into cfg.out; wall-clock times only go to run.log and bench.csv.

#include <mrf/matcher.hpp>
#include <mrf/pipeline/experiment.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace mrf::pipeline {

class RunLog {
public:
    RunLog() = default;
    RunLog(const std::string& path, bool echo) : file_(path, std::ios::app), echo_(echo) {
        if (!file_) throw IoError("cannot open for writing: " + path);
    }

    void operator()(const std::string& msg) {
        if (echo_) std::cerr << msg << '\n';
        if (!file_.is_open()) return;
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        localtime_r(&now, &tm);
        file_ << std::put_time(&tm, "%Y-%m-%d %H:%M:%S") << ' ' << msg << '\n';
        file_.flush();
    }

private:
    std::ofstream file_;
    bool echo_ = false;
};

inline std::string join(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

/// Creates the output directory and writes config.json into it.
inline void prepare_output(const RunConfig& cfg) {
    validate(cfg);
    std::filesystem::create_directories(cfg.out);
    write_config(cfg, join(cfg.out, "config.json"));
}

inline EpochLog epoch_logger(RunLog& log, const std::string& tag) {
    return [&log, tag](const nn::EpochStats& s) {
        std::ostringstream os;
        os << tag << " epoch " << s.epoch << " train " << s.train_loss << " val " << s.val_loss;
        log(os.str());
    };
}

// ---- gen-dict --------------------------------------------------------------

inline void cmd_gen_dict(const RunConfig& cfg, RunLog& log) {
    prepare_output(cfg);
    const auto seq = make_sequence(cfg);
    save_flip_train_csv(seq.flip_train, join(cfg.out, "flip_train.csv"));
    const auto grid = expand_grid(make_grid_spec(cfg));
    log("simulating " + std::to_string(grid.size()) + " entries x " + std::to_string(seq.t_points()) + " time points");
    const auto dict = build_dictionary(seq, grid, cfg.threads);
    save_dictionary(dict, join(cfg.out, "dictionary.mrfd"));
    save_dictionary_index_csv(dict.params, join(cfg.out, "dictionary_index.csv"));
    if (cfg.svd_rank > 0) {
        const auto c = compress_svd(dict, cfg.svd_rank);
        save_dictionary(c, join(cfg.out, "dictionary_svd.mrfd"));
        std::ofstream os(join(cfg.out, "svd.csv"), std::ios::trunc);
        os << "rank,energy_fraction\n" << cfg.svd_rank << ',' << std::setprecision(9) << c.energy_fraction << '\n';
        if (!os) throw IoError("write failed: " + join(cfg.out, "svd.csv"));
        log("compressed to rank " + std::to_string(cfg.svd_rank));
    }
}

// ---- phantom ---------------------------------------------------------------

inline void save_subject(const Subject& s, const std::string& dir) {
    save_phantom(s.phantom, dir);
    save_image(*s.image, join(dir, "image.mrfi"));
    save_pgm(s.phantom.width, s.phantom.height, to_preview(s.phantom.t1), join(dir, "t1.pgm"));
    save_pgm(s.phantom.width, s.phantom.height, to_preview(s.phantom.t2), join(dir, "t2.pgm"));
}

inline Subject load_subject(const std::string& dir) {
    Subject s;
    s.phantom = load_phantom(dir);
    s.image = std::make_shared<const FingerprintImage>(load_image(join(dir, "image.mrfi")));
    if (s.image->width != s.phantom.width || s.image->height != s.phantom.height) {
        throw FormatError("image and phantom in " + dir + " differ in size");
    }
    return s;
}

/// Writes phantom_<k>/ for every subject of the run.
inline void cmd_phantom(const RunConfig& cfg, RunLog& log) {
    prepare_output(cfg);
    const auto seq = make_sequence(cfg);
    save_flip_train_csv(seq.flip_train, join(cfg.out, "flip_train.csv"));
    for (std::size_t k = 0; k < subject_count(cfg); ++k) {
        save_subject(make_subject(cfg, seq, k), join(cfg.out, "phantom_" + std::to_string(k)));
        log("wrote phantom " + std::to_string(k));
    }
}

// ---- match -----------------------------------------------------------------

/// Matches every foreground pixel of the subject in `subject_dir` against
/// the dictionary file (full or compressed).
inline RegionReport cmd_match(const RunConfig& cfg, const std::string& dict_path, const std::string& subject_dir,
                              RunLog& log) {
    prepare_output(cfg);
    const auto s = load_subject(subject_dir);
    const auto mask = s.phantom.foreground_mask();
    ReconstructionResult res;
    if (is_compressed_dictionary(dict_path)) {
        const CompressedMatcher m(std::make_shared<const CompressedDictionary>(load_compressed_dictionary(dict_path)));
        res = reconstruct_maps(m, *s.image, mask, cfg.threads);
    } else {
        const FullMatcher m(std::make_shared<const Dictionary>(load_dictionary(dict_path)));
        res = reconstruct_maps(m, *s.image, mask, cfg.threads);
    }
    if (res.degenerate_pixels) log(std::to_string(res.degenerate_pixels) + " all-zero pixels left unmatched");
    save_maps(res.maps, join(cfg.out, "match"));
    write_error_maps(s.phantom, res.maps, join(cfg.out, "match"));
    const auto rep = region_report(s.phantom, res.maps);
    write_region_csv(rep, join(cfg.out, "match_report.csv"));
    return rep;
}

// ---- train / predict -------------------------------------------------------

inline void write_fit_artifacts(const FitResult& fit, const std::string& dir) {
    nn::save_bundle(fit.bundle, join(dir, "model"));
    nn::write_history_csv(fit.history, join(dir, "history.csv"));
    if (!fit.scores.empty()) nn::write_scores_csv(fit.scores, join(dir, "scores.csv"));
    if (!fit.bundle.channels.empty()) nn::write_indices_csv(fit.bundle.channels, join(dir, "selected_channels.csv"));
}

/// Trains on the first fold's training subject.
inline FitResult cmd_train(const RunConfig& cfg, RunLog& log) {
    prepare_output(cfg);
    const auto seq = make_sequence(cfg);
    const auto subjects = make_subjects(cfg, seq);
    const auto folds = make_folds(cfg, subjects);
    const auto method = nn::parse_reduction(cfg.selection.method);
    auto fit = fit_model(cfg, folds.front().train, method, cfg.selection.n_channels, cfg.patch, cfg.seed, nullptr,
                         epoch_logger(log, "train"));
    write_fit_artifacts(fit, cfg.out);
    log("best epoch " + std::to_string(fit.history.best_epoch));
    return fit;
}

/// The first fold's held-out subject, rebuilt from the config.
inline Subject default_test_subject(const RunConfig& cfg) {
    return make_subject(cfg, make_sequence(cfg), cfg.folds == 1 ? 1 : 0);
}

/// Predicts maps for `subject_dir` (or the config's held-out subject when
/// empty) and writes maps, error maps and the region report.
inline RegionReport cmd_predict(const RunConfig& cfg, const std::string& model_dir, const std::string& subject_dir,
                                RunLog& log) {
    prepare_output(cfg);
    const auto bundle = nn::load_bundle(model_dir);
    const auto s = subject_dir.empty() ? default_test_subject(cfg) : load_subject(subject_dir);
    const auto maps = predict_subject(cfg, bundle, s);
    save_maps(maps, join(cfg.out, "pred"));
    write_error_maps(s.phantom, maps, join(cfg.out, "pred"));
    const auto rep = region_report(s.phantom, maps);
    write_region_csv(rep, join(cfg.out, "report.csv"));
    const auto& ss = rep.row("SKULL-STRIPPED");
    log("skull-stripped MAE% T1 " + format_pct(ss.t1_mae_pct) + " T2 " + format_pct(ss.t2_mae_pct));
    return rep;
}

// ---- select-channels -------------------------------------------------------

inline void write_pca_csv(const nn::Pca& pca, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "component,variance,cumulative_fraction\n" << std::setprecision(9);
    for (std::size_t k = 0; k < pca.output_dim(); ++k) {
        os << k << ',' << pca.variances(static_cast<Eigen::Index>(k)) << ',' << pca.explained_fraction(k + 1) << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

/// Attention: scores from `model_dir` (or a freshly trained full model) over
/// the training subject. Random: seeded indices. PCA: component variances.
inline void cmd_select_channels(const RunConfig& cfg, const std::string& model_dir, RunLog& log) {
    prepare_output(cfg);
    const auto method = nn::parse_reduction(cfg.selection.method);
    if (method == nn::Reduction::None) throw ConfigError("select-channels needs a selection method");
    const auto seq = make_sequence(cfg);
    const auto subjects = make_subjects(cfg, seq);
    const auto train = make_folds(cfg, subjects).front().train;
    const std::size_t n = cfg.selection.n_channels;
    switch (method) {
        case nn::Reduction::Attention: {
            FitResult sel;
            if (model_dir.empty()) {
                sel = fit_model(cfg, train, nn::Reduction::None, 0, cfg.patch, cfg.seed, nullptr,
                                epoch_logger(log, "selector"));
            } else {
                sel.bundle = nn::load_bundle(model_dir);
            }
            if (sel.bundle.reduction != nn::Reduction::None || !sel.bundle.model.config().attention) {
                throw InvalidStateError("attention selection needs a full-channel model with attention");
            }
            const auto set = nn::extract_patches(train.image, train.phantom, sel.bundle.model.config().patch,
                                                 cfg.train.stride, sel.bundle.norm);
            const auto scores = nn::mean_attention_scores(sel.bundle.model, set, sel.bundle.norm.input_scale, cfg.threads);
            nn::write_scores_csv(scores, join(cfg.out, "scores.csv"));
            nn::write_indices_csv(nn::select_channels_attention(scores, n), join(cfg.out, "selected_channels.csv"));
            break;
        }
        case nn::Reduction::Random:
            nn::write_indices_csv(nn::select_channels_random(train.image->t_points, n, cfg.seed),
                                  join(cfg.out, "selected_channels.csv"));
            break;
        case nn::Reduction::Pca:
            write_pca_csv(nn::pca_fit_image(*train.image, train.phantom.foreground_mask(), n),
                          join(cfg.out, "pca_variance.csv"));
            break;
        case nn::Reduction::None: break;
    }
}

// ---- sweep -----------------------------------------------------------------

struct SweepRun {
    std::string method;
    std::string key;
    std::uint64_t seed = 0;
    std::size_t fold = 0;
    double t1_mae_pct = 0.0;
    double t2_mae_pct = 0.0;
};

struct SweepResult {
    std::string key_name;
    std::vector<MethodRow> rows;  // means over seeds and folds
    std::vector<SweepRun> runs;
};

inline std::vector<std::uint64_t> sweep_seeds(const RunConfig& cfg) {
    return cfg.sweep.seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : cfg.sweep.seeds;
}

namespace detail {

inline void add_run(SweepResult& r, SweepRun run) {
    r.runs.push_back(run);
    auto it = std::find_if(r.rows.begin(), r.rows.end(),
                           [&](const MethodRow& m) { return m.method == run.method && m.n == run.key; });
    if (it == r.rows.end()) {
        r.rows.push_back({run.method, run.key, 0.0, 0.0});
        it = r.rows.end() - 1;
    }
    it->t1_mae_pct += run.t1_mae_pct;
    it->t2_mae_pct += run.t2_mae_pct;
}

inline void finish_means(SweepResult& r) {
    for (auto& row : r.rows) {
        const auto n = std::count_if(r.runs.begin(), r.runs.end(),
                                     [&](const SweepRun& s) { return s.method == row.method && s.key == row.n; });
        row.t1_mae_pct /= static_cast<double>(n);
        row.t2_mae_pct /= static_cast<double>(n);
    }
}

inline SweepRun scored(std::string method, std::string key, std::uint64_t seed, std::size_t fold,
                       const Subject& test, const TissueMaps& maps) {
    const auto m = skull_stripped_mae(test.phantom, maps);
    return {std::move(method), std::move(key), seed, fold, m.t1_mae_pct, m.t2_mae_pct};
}

}  // namespace detail

/// Channel-reduction methods x channel counts, or patch sizes after a
/// fixed reduction, or dictionary matching vs SVD vs CONV-ICA; every cell is
/// the mean skull-stripped MAE% over seeds and leave-one-out folds.
inline SweepResult run_sweep(const RunConfig& cfg, RunLog& log) {
    validate_sweep(cfg);
    const auto seq = make_sequence(cfg);
    const auto subjects = make_subjects(cfg, seq);
    const auto folds = make_folds(cfg, subjects);
    SweepResult res;
    const auto& sw = cfg.sweep;
    auto note = [&](const SweepRun& r) {
        log(r.method + " " + res.key_name + "=" + r.key + " seed " + std::to_string(r.seed) + " fold " +
            std::to_string(r.fold) + ": T1 " + format_pct(r.t1_mae_pct) + " T2 " + format_pct(r.t2_mae_pct));
    };
    if (sw.axis == "channels" || sw.axis == "patch") {
        res.key_name = sw.axis == "channels" ? "n" : "patch";
        for (auto seed : sweep_seeds(cfg)) {
            for (const auto& fold : folds) {
                std::optional<FitResult> selector;
                auto selector_for = [&](nn::Reduction m) -> const nn::ModelBundle* {
                    if (m != nn::Reduction::Attention) return nullptr;
                    if (!selector) {
                        selector = fit_model(cfg, fold.train, nn::Reduction::None, 0, cfg.patch, seed, nullptr,
                                             epoch_logger(log, "selector"));
                    }
                    return &selector->bundle;
                };
                auto run = [&](const std::string& method, std::size_t n, std::size_t patch, const std::string& key) {
                    const auto m = nn::parse_reduction(method);
                    const auto fit = fit_model(cfg, fold.train, m, n, patch, seed, selector_for(m));
                    const auto r = detail::scored(method, key, seed, fold.index, fold.test,
                                                  predict_subject(cfg, fit.bundle, fold.test));
                    note(r);
                    detail::add_run(res, r);
                };
                if (sw.axis == "channels") {
                    for (const auto& method : sw.methods)
                        for (auto n : sw.n_values) run(method, n, cfg.patch, std::to_string(n));
                } else {
                    for (auto p : sw.patch_sizes) run(sw.patch_method, sw.patch_channels, p, std::to_string(p));
                }
            }
        }
    } else {
        res.key_name = "n";
        const auto grid = expand_grid(make_grid_spec(cfg));
        const auto dict = std::make_shared<const Dictionary>(build_dictionary(seq, grid, cfg.threads));
        const std::size_t rank = cfg.svd_rank ? cfg.svd_rank : cfg.bench.rank;
        const FullMatcher full(dict);
        const CompressedMatcher comp(std::make_shared<const CompressedDictionary>(compress_svd(*dict, rank)));
        for (const auto& fold : folds) {
            const auto mask = fold.test.phantom.foreground_mask();
            auto add = [&](const std::string& name, const std::string& key, std::uint64_t seed, const TissueMaps& maps) {
                const auto r = detail::scored(name, key, seed, fold.index, fold.test, maps);
                note(r);
                detail::add_run(res, r);
            };
            add("dictionary", std::to_string(seq.t_points()), 0,
                reconstruct_maps(full, *fold.test.image, mask, cfg.threads).maps);
            add("svd", std::to_string(rank), 0, reconstruct_maps(comp, *fold.test.image, mask, cfg.threads).maps);
            add("constant-mean", "", 0, constant_mean_maps(fold.train, fold.test));
            for (auto seed : sweep_seeds(cfg)) {
                const auto fit = fit_model(cfg, fold.train, nn::Reduction::None, 0, cfg.patch, seed);
                add("conv-ica", std::to_string(seq.t_points()), seed, predict_subject(cfg, fit.bundle, fold.test));
            }
        }
    }
    detail::finish_means(res);
    return res;
}

inline void write_sweep_runs_csv(const SweepResult& r, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "method," << r.key_name << ",seed,fold,t1_mae_pct,t2_mae_pct\n";
    for (const auto& s : r.runs) {
        os << s.method << ',' << s.key << ',' << s.seed << ',' << s.fold << ',' << format_pct(s.t1_mae_pct) << ','
           << format_pct(s.t2_mae_pct) << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

/// sweep_<axis>.csv (means) and sweep_<axis>_runs.csv (every seed and fold).
inline SweepResult cmd_sweep(const RunConfig& cfg, RunLog& log) {
    validate_sweep(cfg);
    prepare_output(cfg);
    auto res = run_sweep(cfg, log);
    write_method_csv(res.rows, res.key_name, join(cfg.out, "sweep_" + cfg.sweep.axis + ".csv"));
    write_sweep_runs_csv(res, join(cfg.out, "sweep_" + cfg.sweep.axis + "_runs.csv"));
    return res;
}

// ---- gradcheck -------------------------------------------------------------

struct GradcheckCase {
    std::string name;
    nn::ConvIcaConfig model;
};

inline std::vector<GradcheckCase> gradcheck_cases() {
    std::vector<GradcheckCase> cases;
    cases.push_back({"conv-ica-c8-p4", nn::ConvIcaConfig{.channels = 8, .patch = 4}});
    cases.push_back({"conv-ica-c8-p4-no-attention", nn::ConvIcaConfig{.channels = 8, .patch = 4, .attention = false}});
    cases.push_back({"conv-ica-c6-p3-r2", nn::ConvIcaConfig{.channels = 6, .patch = 3, .ratio = 2}});
    return cases;
}

/// Writes gradcheck.csv; returns true when every case passes.
inline bool cmd_gradcheck(const RunConfig& cfg, RunLog& log) {
    prepare_output(cfg);
    const std::string path = join(cfg.out, "gradcheck.csv");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "case,parameter,checked,max_rel_error,passed\n" << std::setprecision(6);
    bool ok = true;
    for (const auto& c : gradcheck_cases()) {
        nn::ConvIcaCheckOptions opt;
        opt.seed = cfg.seed;
        const auto rep = nn::gradient_check_conv_ica(c.model, opt);
        for (const auto& e : rep.entries) {
            os << c.name << ',' << e.name << ',' << e.checked << ',' << e.max_rel_error << ','
               << (e.max_rel_error < rep.tolerance ? 1 : 0) << '\n';
        }
        std::ostringstream msg;
        msg << c.name << ": max rel error " << rep.max_rel_error() << (rep.passed() ? " pass" : " FAIL");
        log(msg.str());
        ok = ok && rep.passed();
    }
    if (!os) throw IoError("write failed: " + path);
    return ok;
}

// ---- bench -----------------------------------------------------------------

/// Entries built from a few smooth temporal modes with random weights;
/// stands in for EPG output at sizes where simulation would dominate.
inline Dictionary synthetic_dictionary(std::size_t entries, std::size_t t_points, std::uint64_t seed) {
    constexpr std::size_t modes = 12;
    auto rng = make_rng(seed, 0x5A7D);
    Dictionary d;
    d.t_points = t_points;
    d.params.resize(entries);
    d.signals.resize(entries * t_points);
    std::vector<double> w(modes), rate(modes);
    for (std::size_t i = 0; i < entries; ++i) {
        d.params[i] = {double(i + 1), 1.0};
        for (std::size_t m = 0; m < modes; ++m) {
            w[m] = standard_normal(rng) / double(m + 1);
            rate[m] = uniform(rng, 0.5, 4.0);
        }
        float* out = d.signals.data() + i * t_points;
        for (std::size_t t = 0; t < t_points; ++t) {
            const double x = double(t) / double(t_points);
            double v = 0.0;
            for (std::size_t m = 0; m < modes; ++m) v += w[m] * std::cos(std::numbers::pi * double(m) * x) * std::exp(-rate[m] * x);
            out[t] = static_cast<float>(v);
        }
    }
    d.recompute_norms();
    return d;
}

struct BenchResult {
    std::size_t entries = 0;
    std::size_t t_points = 0;
    std::size_t rank = 0;
    std::size_t probes = 0;
    double full_seconds = 0.0;
    double compressed_seconds = 0.0;
    double compress_seconds = 0.0;  // one-off SVD cost, excluded from throughput
    double agreement = 0.0;         // fraction of probes with the same match

    double full_throughput() const { return double(probes) / full_seconds; }
    double compressed_throughput() const { return double(probes) / compressed_seconds; }
    double speedup() const { return full_seconds / compressed_seconds; }
};

/// Times full and rank-r matching on noisy copies of random entries.
inline BenchResult bench_matchers(std::shared_ptr<const Dictionary> dict, std::size_t rank, std::size_t probes,
                                  double noise, std::uint64_t seed, const SvdOptions& svd = {}) {
    using clock = std::chrono::steady_clock;
    const auto t_points = dict->t_points;
    auto rng = make_rng(seed, 0xBE7C);
    std::vector<std::vector<double>> data(probes, std::vector<double>(t_points));
    for (auto& p : data) {
        const auto src = dict->signal(uniform_index(rng, dict->size()));
        double rms = 0.0;
        for (float v : src) rms += double(v) * v;
        const double sd = noise * std::sqrt(rms / double(t_points));
        for (std::size_t t = 0; t < t_points; ++t) p[t] = src[t] + sd * standard_normal(rng);
    }
    std::vector<std::span<const double>> spans(data.begin(), data.end());

    BenchResult r;
    r.entries = dict->size();
    r.t_points = t_points;
    r.rank = rank;
    r.probes = probes;
    auto t0 = clock::now();
    const CompressedMatcher comp(std::make_shared<const CompressedDictionary>(compress_svd(*dict, rank, svd)));
    r.compress_seconds = std::chrono::duration<double>(clock::now() - t0).count();

    const FullMatcher full(dict);
    constexpr std::size_t chunk = 64;
    std::vector<std::optional<MatchResult>> a, b;
    t0 = clock::now();
    for (std::size_t s = 0; s < probes; s += chunk) {
        const std::vector<std::span<const double>> part(spans.begin() + s, spans.begin() + std::min(probes, s + chunk));
        auto got = full.match_batch(part);
        a.insert(a.end(), got.begin(), got.end());
    }
    r.full_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    t0 = clock::now();
    for (std::size_t s = 0; s < probes; s += chunk) {
        const std::vector<std::span<const double>> part(spans.begin() + s, spans.begin() + std::min(probes, s + chunk));
        auto got = comp.match_batch(part);
        b.insert(b.end(), got.begin(), got.end());
    }
    r.compressed_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    std::size_t same = 0;
    for (std::size_t i = 0; i < probes; ++i) same += (a[i] && b[i] && a[i]->entry_index == b[i]->entry_index) ? 1 : 0;
    r.agreement = double(same) / double(probes);
    return r;
}

/// Benchmarks the dictionary at `dict_path`, or one simulated from the
/// config when empty. bench.csv holds timings and is not reproducible.
inline BenchResult cmd_bench(const RunConfig& cfg, const std::string& dict_path, RunLog& log) {
    prepare_output(cfg);
    std::shared_ptr<const Dictionary> dict;
    if (dict_path.empty()) {
        dict = std::make_shared<const Dictionary>(
            build_dictionary(make_sequence(cfg), expand_grid(make_grid_spec(cfg)), cfg.threads));
    } else {
        dict = std::make_shared<const Dictionary>(load_dictionary(dict_path));
    }
    const std::size_t rank = cfg.svd_rank ? cfg.svd_rank : cfg.bench.rank;
    const auto r = bench_matchers(dict, rank, cfg.bench.probes, cfg.bench.noise, cfg.seed);
    const std::string path = join(cfg.out, "bench.csv");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "method,entries,t_points,rank,probes,seconds,probes_per_second\n" << std::setprecision(6);
    os << "full," << r.entries << ',' << r.t_points << ',' << r.t_points << ',' << r.probes << ',' << r.full_seconds
       << ',' << r.full_throughput() << '\n';
    os << "svd," << r.entries << ',' << r.t_points << ',' << r.rank << ',' << r.probes << ',' << r.compressed_seconds
       << ',' << r.compressed_throughput() << '\n';
    if (!os) throw IoError("write failed: " + path);
    std::ostringstream msg;
    msg << "speedup " << r.speedup() << "x, agreement " << r.agreement << ", svd fit " << r.compress_seconds << " s";
    log(msg.str());
    return r;
}

}  // namespace mrf::pipeline
