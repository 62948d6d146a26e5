// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned
// below. Exit status is the number of failed criteria (0 = all pass).

#include <mrf/pipeline.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <unistd.h>

using namespace mrf;
using namespace mrf::pipeline;

namespace {

namespace fs = std::filesystem;

// Pinned thresholds.
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 60.0;
constexpr double kEpgRelTol = 1e-9;
constexpr double kLoopSeconds = 300.0;
constexpr double kSelfMatchFraction = 0.99;
constexpr double kAlphaTol = 1e-7;
constexpr double kBaselineRatio = 0.5;
constexpr double kTrainSeconds = 1800.0;
constexpr double kMaeTol = 1e-10;
constexpr double kSpeedup = 5.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

SequenceParams desk_sequence(std::size_t t) {
    SequenceParams s;
    s.flip_train = default_flip_train(t, 0);
    return s;
}

Outcome gradient_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    nn::ConvIcaConfig cfg;
    cfg.channels = 8;
    cfg.patch = 4;
    nn::ConvIcaCheckOptions opt;
    opt.check.tolerance = kGradTol;
    const auto rep = nn::gradient_check_conv_ica(cfg, opt);
    const double secs = seconds_since(t0);
    std::size_t checked = 0;
    for (const auto& e : rep.entries) checked += e.checked;
    return {rep.passed() && secs < kGradSeconds, "max rel error " + fmt(rep.max_rel_error()) + " over " +
                                                     std::to_string(checked) + " entries, " + fmt(secs, 3) + " s"};
}

Outcome epg_analytic() {
    constexpr std::size_t T = 100;
    SequenceParams seq;
    seq.flip_train.assign(T, 0.0);
    seq.flip_train[0] = 90.0;
    EpgOptions opt;
    opt.dephasing = false;
    auto rng = make_rng(2024);
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
        const double t1 = uniform(rng, 100.0, 4000.0);
        const double t2 = uniform(rng, 10.0, std::min(t1, 500.0));
        const auto fp = simulate_fingerprint(seq, {t1, t2}, opt);
        for (std::size_t t = 0; t < T; ++t) {
            const double want = std::exp(-(double(t) * seq.tr_ms + seq.te_ms) / t2);
            worst = std::max(worst, std::abs(fp.signal[t] / want - 1.0));
        }
    }
    return {worst <= kEpgRelTol, "max rel deviation " + fmt(worst)};
}

Outcome loop_closure() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto seq = desk_sequence(200);
    const auto grid = expand_grid(desk_grid());
    auto dict = std::make_shared<const Dictionary>(build_dictionary(seq, grid, 1));
    auto ph = generate_phantom(64, 64, 1);
    snap_to_grid(ph, grid);
    const auto img = synthesize_image(ph, seq, 0.0, 0);
    const auto res = reconstruct_maps(FullMatcher(dict), img, ph.foreground_mask());
    const auto mae = skull_stripped_mae(ph, res.maps);
    const double secs = seconds_since(t0);
    return {mae.t1_mae_pct == 0.0 && mae.t2_mae_pct == 0.0 && secs < kLoopSeconds,
            "T1 " + fmt(mae.t1_mae_pct) + "%, T2 " + fmt(mae.t2_mae_pct) + "%, " + fmt(secs, 3) + " s"};
}

// Rank of `v` in the sorted unique values of one grid axis.
std::ptrdiff_t axis_rank(const std::vector<double>& axis, double v) {
    return std::lower_bound(axis.begin(), axis.end(), v - 1e-9) - axis.begin();
}

Outcome svd_self_match() {
    const auto grid = expand_grid(desk_grid());
    const auto dict = std::make_shared<const Dictionary>(build_dictionary(desk_sequence(200), grid, 1));
    std::vector<double> t1s, t2s;
    for (const auto& p : grid) {
        t1s.push_back(p.t1_ms);
        t2s.push_back(p.t2_ms);
    }
    for (auto* v : {&t1s, &t2s}) {
        std::sort(v->begin(), v->end());
        v->erase(std::unique(v->begin(), v->end()), v->end());
    }
    CompressedMatcher m(std::make_shared<const CompressedDictionary>(compress_svd(*dict, 5)));
    std::size_t exact = 0, near = 0;
    std::vector<double> probe(dict->t_points);
    for (std::size_t i = 0; i < dict->size(); ++i) {
        const auto s = dict->signal(i);
        std::copy(s.begin(), s.end(), probe.begin());
        const auto r = m.match(probe);
        if (r.entry_index == i) {
            ++exact;
            continue;
        }
        const auto& want = dict->params[i];
        if (std::abs(axis_rank(t1s, want.t1_ms) - axis_rank(t1s, r.t1_ms)) <= 1 &&
            std::abs(axis_rank(t2s, want.t2_ms) - axis_rank(t2s, r.t2_ms)) <= 1)
            ++near;
    }
    const double frac = double(exact) / double(dict->size());
    return {frac >= kSelfMatchFraction && exact + near == dict->size(),
            std::to_string(exact) + "/" + std::to_string(dict->size()) + " exact (" + fmt(100.0 * frac) + "%), " +
                std::to_string(dict->size() - exact - near) + " beyond one grid step"};
}

Outcome attention_identity() {
    constexpr std::size_t B = 3, P = 4, C = 8;
    auto rng = make_rng(5);
    ad::Tensor<float> x({B, P, P, C});
    for (auto& v : x.data) v = float(uniform01(rng));

    ad::Tape<float> t;
    const auto y = t.scale_channels(t.constant(x), t.constant(ad::Tensor<float>({B, C}, 1.0f)));
    const bool identity = t.value(y) == x;

    nn::ConvIcaConfig cfg;
    cfg.channels = C;
    cfg.patch = P;
    nn::ConvIca model(cfg, 1);
    for (std::size_t i = 0; i < model.params().size(); ++i) std::ranges::fill(model.params().value(i).data, 0.0f);
    const auto r = nn::channel_attention_forward(x, model);
    double worst = 0.0;
    for (float a : r.alpha.data) worst = std::max(worst, std::abs(double(a) - 0.5));
    return {identity && worst <= kAlphaTol, std::string("unit alpha ") + (identity ? "exact" : "NOT exact") +
                                                ", zero-parameter |alpha - 0.5| <= " + fmt(worst)};
}

RunConfig training_config() {
    RunConfig c;
    c.noise = 0.02;
    c.folds = 1;
    c.train.max_epochs = 20;
    c.sequence.t_points = 200;
    return c;
}

Outcome training_viability() {
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = training_config();
    const auto seq = make_sequence(cfg);
    const auto folds = make_folds(cfg, make_subjects(cfg, seq));
    const auto& f = folds.front();
    const auto base = skull_stripped_mae(f.test.phantom, constant_mean_maps(f.train, f.test));
    int good = 0;
    std::ostringstream os;
    os << "baseline T1 " << fmt(base.t1_mae_pct) << " T2 " << fmt(base.t2_mae_pct) << ";";
    for (std::uint64_t seed : {0, 1, 2}) {
        const auto fit = fit_model(cfg, f.train, nn::Reduction::None, 0, cfg.patch, seed);
        const auto m = skull_stripped_mae(f.test.phantom, predict_subject(cfg, fit.bundle, f.test));
        const double r1 = m.t1_mae_pct / base.t1_mae_pct, r2 = m.t2_mae_pct / base.t2_mae_pct;
        if (r1 <= kBaselineRatio && r2 <= kBaselineRatio) ++good;
        os << " seed " << seed << " ratio " << fmt(r1, 3) << "/" << fmt(r2, 3) << ";";
    }
    const double secs = seconds_since(t0);
    os << ' ' << good << "/3 seeds within " << kBaselineRatio << ", " << fmt(secs, 4) << " s";
    return {good >= 2 && secs < kTrainSeconds, os.str()};
}

Outcome selection_trend() {
    auto cfg = training_config();
    cfg.sequence.t_points = 400;
    constexpr std::size_t n = 200;
    const auto seq = make_sequence(cfg);
    const auto folds = make_folds(cfg, make_subjects(cfg, seq));
    const auto& f = folds.front();
    double att = 0.0, pca = 0.0, rnd = 0.0;
    const std::vector<std::uint64_t> seeds{0, 1, 2};
    for (auto seed : seeds) {
        const auto selector = fit_model(cfg, f.train, nn::Reduction::None, 0, cfg.patch, seed);
        auto t2 = [&](nn::Reduction r) {
            const auto fit = fit_model(cfg, f.train, r, n, cfg.patch, seed, &selector.bundle);
            return skull_stripped_mae(f.test.phantom, predict_subject(cfg, fit.bundle, f.test)).t2_mae_pct;
        };
        att += t2(nn::Reduction::Attention);
        pca += t2(nn::Reduction::Pca);
        rnd += t2(nn::Reduction::Random);
    }
    const double k = double(seeds.size());
    att /= k;
    pca /= k;
    rnd /= k;
    return {att <= pca, "mean T2 MAE% attention " + fmt(att) + " vs pca " + fmt(pca) + " (random " + fmt(rnd) +
                            ", not gated)"};
}

Outcome metric_exactness() {
    struct Case {
        std::vector<double> truth, pred;
        std::vector<std::uint8_t> mask;
        double want;
    };
    const std::vector<Case> cases{
        {{1000, 2000}, {900, 2000}, {1, 1}, 2.5},
        {{10, 20, 40}, {10, 20, 40}, {1, 1, 1}, 0.0},
        {{10, 20, 40}, {14, 18, 40}, {1, 1, 1}, 5.0},
        {{50, 100, 1000}, {40, 100, 0}, {1, 1, 0}, 5.0},
        {{0, 4}, {1, 4}, {1, 1}, 12.5},
        {{200, 400, 800, 1600}, {100, 500, 800, 1200}, {1, 1, 1, 1}, 9.375},
    };
    double worst = 0.0;
    for (const auto& c : cases) worst = std::max(worst, std::abs(mae_percent(c.truth, c.pred, c.mask) - c.want));
    return {worst <= kMaeTol, std::to_string(cases.size()) + " cases, max deviation " + fmt(worst)};
}

Outcome throughput() {
    const auto dict = std::make_shared<const Dictionary>(synthetic_dictionary(100'000, 2000, 7));
    SvdOptions svd;
    svd.fit_stride = 10;
    const auto r = bench_matchers(dict, 5, 256, 0.01, 3, svd);
    return {r.speedup() >= kSpeedup, "full " + fmt(r.full_throughput()) + " probes/s, rank 5 " +
                                         fmt(r.compressed_throughput()) + " probes/s, speedup " + fmt(r.speedup(), 3) +
                                         "x, agreement " + fmt(r.agreement, 3)};
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

Outcome determinism() {
    const auto root = fs::temp_directory_path() / ("mrf_acceptance_" + std::to_string(::getpid()));
    auto run = [&](const std::string& tag) {
        RunConfig c;
        c.sequence.t_points = 100;
        c.phantom.width = c.phantom.height = 32;
        c.noise = 0.02;
        c.train.max_epochs = 3;
        c.selection.method = "random";
        c.selection.n_channels = 40;
        c.seed = 11;
        c.out = (root / tag).string();
        RunLog log;
        cmd_train(c, log);
        cmd_predict(c, join(c.out, "model"), "", log);
        return c.out;
    };
    const auto a = run("a"), b = run("b");
    std::size_t compared = 0, differing = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        if (e.path().extension() != ".csv") continue;
        ++compared;
        if (slurp(e.path().string()) != slurp(join(b, e.path().filename().string()))) ++differing;
    }
    fs::remove_all(root);
    return {compared > 0 && differing == 0,
            std::to_string(compared) + " CSV reports compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient oracle (CONV-ICA C=8 patch 4)", gradient_oracle},
        {"EPG single-pulse free decay", epg_analytic},
        {"loop closure (64x64, T=200)", loop_closure},
        {"rank-5 SVD self-match (T=200)", svd_self_match},
        {"attention identity and sigmoid(0)", attention_identity},
        {"training viability vs constant mean", training_viability},
        {"selection trend: attention <= PCA on T2 (n=200)", selection_trend},
        {"MAE% exactness", metric_exactness},
        {"compressed matching throughput (N=100k, T=2000)", throughput},
        {"train + predict determinism", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto& [name, fn] = criteria[i];
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::cout << (o.pass ? "PASS" : "FAIL") << ' ' << (i + 1) << ' ' << name << ": " << o.detail << std::endl;
    }
    return failed;
}
