// mrf: command-line front end for dictionary generation, matching, CONV-ICA
// training/prediction, channel selection, sweeps, gradient checks and
// matching benchmarks.
//
// Exit codes: 0 success, 1 other failure (including a failed gradcheck),
// 2 configuration error, 3 I/O or file-format error, 4 training diverged.

#include <mrf/pipeline/commands.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kDiverged = 4 };

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::optional<std::string> out;
    std::optional<std::size_t> svd_rank;
    std::optional<std::size_t> patch;
    std::optional<std::size_t> stride;
    std::optional<std::string> select;
    std::optional<std::size_t> n_channels;
    std::optional<std::size_t> folds;
    std::optional<double> noise;
    bool full_scale = false;
    bool quiet = false;
};

mrf::pipeline::RunConfig resolve(const Overrides& o) {
    using namespace mrf::pipeline;
    RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
    if (o.full_scale) apply_full_scale(c);
    if (o.seed) c.seed = *o.seed;
    if (o.threads) {
        c.threads = *o.threads;
    } else if (const char* env = std::getenv("MRF_THREADS"); env && *env) {
        try {
            c.threads = std::stoul(env);
        } catch (const std::exception&) {
            throw mrf::ConfigError(std::string("MRF_THREADS is not a number: ") + env);
        }
    }
    if (o.out) c.out = *o.out;
    if (o.svd_rank) c.svd_rank = *o.svd_rank;
    if (o.patch) c.patch = *o.patch;
    if (o.stride) c.stride = *o.stride;
    if (o.select) c.selection.method = *o.select;
    if (o.n_channels) c.selection.n_channels = *o.n_channels;
    if (o.folds) c.folds = *o.folds;
    if (o.noise) c.noise = *o.noise;
    validate(c);
    return c;
}

void add_common(CLI::App* app, Overrides& o) {
    app->add_option("--config", o.config, "JSON run configuration");
    app->add_option("--seed", o.seed, "training / selection seed");
    app->add_option("--threads", o.threads, "worker threads (fallback: MRF_THREADS)");
    app->add_option("--out", o.out, "output directory");
    app->add_option("--svd-rank", o.svd_rank, "SVD rank for compressed matching");
    app->add_option("--patch", o.patch, "patch size");
    app->add_option("--stride", o.stride, "prediction stride");
    app->add_option("--select", o.select, "channel selection method")
        ->check(CLI::IsMember({"none", "attention", "pca", "random"}));
    app->add_option("--n-channels", o.n_channels, "channels kept by selection");
    app->add_option("--folds", o.folds, "leave-one-phantom-out folds");
    app->add_option("--noise", o.noise, "noise sigma relative to signal RMS");
    app->add_flag("--full-scale", o.full_scale, "full-scale sequence length and grid");
    app->add_flag("-q,--quiet", o.quiet, "log to run.log only");
}

}  // namespace

int main(int argc, char** argv) {
    using namespace mrf::pipeline;
    CLI::App app{"MR fingerprinting toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    Overrides o;
    std::string dict_path, subject_dir, model_dir, axis;

    auto* gen = app.add_subcommand("gen-dict", "simulate and save the dictionary");
    auto* phantom = app.add_subcommand("phantom", "generate phantoms and fingerprint images");
    auto* match = app.add_subcommand("match", "dictionary matching of a phantom image");
    match->add_option("--dict", dict_path, "dictionary file")->required();
    match->add_option("--phantom", subject_dir, "phantom directory with image.mrfi")->required();
    auto* train = app.add_subcommand("train", "train CONV-ICA");
    auto* predict = app.add_subcommand("predict", "predict maps with a trained model");
    predict->add_option("--model", model_dir, "model directory")->required();
    predict->add_option("--phantom", subject_dir, "phantom directory (default: held-out phantom from the config)");
    auto* select = app.add_subcommand("select-channels", "channel scores and selected indices");
    select->add_option("--model", model_dir, "full-channel model for attention scores");
    auto* sweep = app.add_subcommand("sweep", "method / channel / patch-size grids");
    sweep->add_option("--axis", axis, "sweep axis")->check(CLI::IsMember({"channels", "patch", "method"}));
    auto* grad = app.add_subcommand("gradcheck", "autodiff gradient checks");
    auto* bench = app.add_subcommand("bench", "full vs compressed matching throughput");
    bench->add_option("--dict", dict_path, "dictionary file (default: simulate from the config)");
    for (auto* sub : {gen, phantom, match, train, predict, select, sweep, grad, bench}) add_common(sub, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        auto cfg = resolve(o);
        if (!axis.empty()) cfg.sweep.axis = axis;
        std::filesystem::create_directories(cfg.out);
        RunLog log(join(cfg.out, "run.log"), !o.quiet);
        log(std::string("mrf ") + app.get_subcommands().front()->get_name());
        if (gen->parsed()) cmd_gen_dict(cfg, log);
        if (phantom->parsed()) cmd_phantom(cfg, log);
        if (match->parsed()) {
            const auto rep = cmd_match(cfg, dict_path, subject_dir, log);
            const auto& ss = rep.row("SKULL-STRIPPED");
            std::cout << "T1 MAE% " << mrf::format_pct(ss.t1_mae_pct) << "  T2 MAE% " << mrf::format_pct(ss.t2_mae_pct)
                      << '\n';
        }
        if (train->parsed()) cmd_train(cfg, log);
        if (predict->parsed()) {
            const auto rep = cmd_predict(cfg, model_dir, subject_dir, log);
            const auto& ss = rep.row("SKULL-STRIPPED");
            std::cout << "T1 MAE% " << mrf::format_pct(ss.t1_mae_pct) << "  T2 MAE% " << mrf::format_pct(ss.t2_mae_pct)
                      << '\n';
        }
        if (select->parsed()) cmd_select_channels(cfg, model_dir, log);
        if (sweep->parsed()) {
            const auto res = cmd_sweep(cfg, log);
            std::cout << "method," << res.key_name << ",t1_mae_pct,t2_mae_pct\n";
            for (const auto& r : res.rows) {
                std::cout << r.method << ',' << r.n << ',' << mrf::format_pct(r.t1_mae_pct) << ','
                          << mrf::format_pct(r.t2_mae_pct) << '\n';
            }
        }
        if (grad->parsed() && !cmd_gradcheck(cfg, log)) {
            std::cerr << "gradient check failed\n";
            return kFailure;
        }
        if (bench->parsed()) {
            const auto r = cmd_bench(cfg, dict_path, log);
            std::cout << "full " << r.full_throughput() << " probes/s, rank " << r.rank << ' '
                      << r.compressed_throughput() << " probes/s (" << r.speedup() << "x)\n";
        }
    } catch (const mrf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const mrf::IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kIo;
    } catch (const mrf::FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return kIo;
    } catch (const mrf::TrainingDivergedError& e) {
        std::cerr << "training diverged: " << e.what() << '\n';
        return kDiverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kOk;
}
