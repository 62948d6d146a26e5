#include <mrf/pipeline.hpp>

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>

using namespace mrf;
using namespace mrf::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("mrf_pipeline_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    EXPECT_TRUE(is) << p;
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::size_t csv_rows(const fs::path& p) {
    const auto s = slurp(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')) - 1;  // minus header
}

// Small enough to train in a second or two.
RunConfig tiny(const fs::path& out, std::size_t t_points = 24) {
    RunConfig c;
    c.out = out.string();
    c.noise = 0.02;
    c.sequence.t_points = t_points;
    c.phantom.width = 24;
    c.phantom.height = 24;
    c.model.widths = {4, 4, 4, 4};
    c.train.max_epochs = 2;
    c.train.batch = 64;
    c.train.stride = 2;
    return c;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(MRF_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream os(p);
    os << text;
}

}  // namespace

// ---- config ----------------------------------------------------------------

TEST(Config, DefaultsRoundTrip) {
    const RunConfig c;
    const auto j = to_json(c);
    EXPECT_EQ(to_json(parse_config(j)), j);
    EXPECT_EQ(to_json(parse_config(json::object())), j);
}

TEST(Config, OverridesNestedFields) {
    const auto c = parse_config(json::parse(R"({"seed": 7, "sequence": {"t_points": 300},
        "phantom": {"wm": {"t1_ms": 900}}, "sweep": {"n_values": [10, 20]}})"));
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.sequence.t_points, 300u);
    EXPECT_EQ(c.phantom.wm.t1_ms, 900.0);
    EXPECT_EQ(c.phantom.wm.t2_ms, 70.0);
    EXPECT_EQ(c.sweep.n_values, (std::vector<std::size_t>{10, 20}));
}

TEST(Config, UnknownKeysRejected) {
    EXPECT_THROW(parse_config(json::parse(R"({"sed": 1})")), ConfigError);
    EXPECT_THROW(parse_config(json::parse(R"({"train": {"epochs": 3}})")), ConfigError);
    EXPECT_THROW(parse_config(json::parse(R"({"phantom": {"gm": {"t3_ms": 1}}})")), ConfigError);
    try {
        parse_config(json::parse(R"({"train": {"epochs": 3}})"));
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("train.epochs"), std::string::npos);
    }
}

TEST(Config, TypeErrors) {
    EXPECT_THROW(parse_config(json::parse(R"({"seed": -1})")), ConfigError);
    EXPECT_THROW(parse_config(json::parse(R"({"noise": "high"})")), ConfigError);
    EXPECT_THROW(parse_config(json::parse(R"({"full_scale": 1})")), ConfigError);
    EXPECT_THROW(parse_config(json::parse(R"({"train": 3})")), ConfigError);
    EXPECT_THROW(parse_config(json::parse(R"({"model": {"widths": [1, 2]}})")), ConfigError);
    EXPECT_THROW(parse_config(json::parse(R"([1, 2])")), ConfigError);
}

TEST(Config, Validation) {
    RunConfig c;
    EXPECT_NO_THROW(validate(c));
    c.selection.method = "attention";
    EXPECT_THROW(validate(c), ConfigError);  // n_channels = 0
    c.selection.n_channels = 201;
    EXPECT_THROW(validate(c), ConfigError);
    c.selection.n_channels = 50;
    EXPECT_NO_THROW(validate(c));
    c.selection.method = "lda";
    EXPECT_THROW(validate(c), ConfigError);
    c = RunConfig{};
    c.grid.preset = "huge";
    EXPECT_THROW(validate(c), ConfigError);
    c = RunConfig{};
    c.predict.assembly = "median";
    EXPECT_THROW(validate(c), ConfigError);
    c = RunConfig{};
    c.train.val_fraction = 1.0;
    EXPECT_THROW(validate(c), ConfigError);
    c = RunConfig{};
    c.patch = 100;
    EXPECT_THROW(validate(c), ConfigError);
}

TEST(Config, SweepValidatedSeparately) {
    RunConfig c;  // T = 200, default n_values reach 300
    EXPECT_NO_THROW(validate(c));
    EXPECT_THROW(validate_sweep(c), ConfigError);
    c.sequence.t_points = 300;
    EXPECT_NO_THROW(validate_sweep(c));
    c.sweep.methods = {"none"};
    EXPECT_THROW(validate_sweep(c), ConfigError);
    c.sweep.axis = "patch";
    EXPECT_NO_THROW(validate_sweep(c));
    c.sweep.patch_sizes = {4, 80};
    EXPECT_THROW(validate_sweep(c), ConfigError);
    c.sweep.axis = "diagonal";
    EXPECT_THROW(validate_sweep(c), ConfigError);
}

TEST(Config, FullScale) {
    RunConfig c;
    apply_full_scale(c);
    EXPECT_EQ(c.sequence.t_points, 2000u);
    EXPECT_EQ(c.grid.preset, "full");
    EXPECT_EQ(grid_counts(make_grid_spec(c)).raw_pairs, 491u * 301u);
}

TEST(Config, FileErrors) {
    const auto dir = scratch("config_files");
    EXPECT_THROW(load_config((dir / "missing.json").string()), IoError);
    write_text(dir / "bad.json", "{\"seed\": ");
    EXPECT_THROW(load_config((dir / "bad.json").string()), ConfigError);
    write_text(dir / "ok.json", R"({"seed": 3})");
    EXPECT_EQ(load_config((dir / "ok.json").string()).seed, 3u);
}

TEST(Config, FlipTrainFile) {
    const auto dir = scratch("flip");
    save_flip_train_csv({10.0, 20.0, 30.0}, (dir / "flip.csv").string());
    RunConfig c;
    c.sequence.flip_train = (dir / "flip.csv").string();
    c.sequence.t_points = 3;
    EXPECT_EQ(make_sequence(c).flip_train, (std::vector<double>{10.0, 20.0, 30.0}));
    c.sequence.t_points = 4;
    EXPECT_THROW(make_sequence(c), ConfigError);
}

// ---- subjects and folds ----------------------------------------------------

TEST(Subjects, DeterministicAndDistinct) {
    const auto c = tiny(scratch("subjects"));
    const auto seq = make_sequence(c);
    const auto a = make_subject(c, seq, 0), b = make_subject(c, seq, 0), d = make_subject(c, seq, 1);
    EXPECT_EQ(*a.image, *b.image);
    EXPECT_EQ(a.phantom.t1, b.phantom.t1);
    EXPECT_NE(a.phantom.t1, d.phantom.t1);
    EXPECT_EQ(subject_count(c), 2u);
}

TEST(Subjects, MosaicKeepsPatchesInsideParts) {
    const auto c = tiny(scratch("mosaic"));
    const auto seq = make_sequence(c);
    const auto a = make_subject(c, seq, 0), b = make_subject(c, seq, 1);
    const auto m = mosaic({&a, &b});
    EXPECT_EQ(m.phantom.width, 48u);
    EXPECT_EQ(m.image->width, 48u);
    EXPECT_EQ(m.phantom.t1[5 * 48 + 24 + 7], b.phantom.t1[5 * 24 + 7]);
    const auto pa = m.image->pixel(24 + 7, 5), pb = b.image->pixel(7, 5);
    EXPECT_TRUE(std::equal(pa.begin(), pa.end(), pb.begin()));
    for (std::size_t p : {2u, 4u}) {
        const auto n = [&](const Phantom& ph) {
            return nn::valid_patch_origins(ph.width, ph.height, ph.foreground_mask(), p, 1).size();
        };
        EXPECT_EQ(n(m.phantom), n(a.phantom) + n(b.phantom));
    }
}

TEST(Subjects, LeaveOneOutFolds) {
    auto c = tiny(scratch("folds"));
    c.folds = 3;
    const auto seq = make_sequence(c);
    const auto subjects = make_subjects(c, seq);
    ASSERT_EQ(subjects.size(), 3u);
    const auto folds = make_folds(c, subjects);
    ASSERT_EQ(folds.size(), 3u);
    for (std::size_t f = 0; f < 3; ++f) {
        EXPECT_EQ(folds[f].index, f);
        EXPECT_EQ(*folds[f].test.image, *subjects[f].image);
        EXPECT_EQ(folds[f].train.phantom.width, 48u);
    }
    EXPECT_EQ(folds[1].train.phantom.t1[24 + 12 * 48], subjects[2].phantom.t1[12 * 24]);

    c.folds = 1;
    const auto single = make_folds(c, make_subjects(c, seq));
    ASSERT_EQ(single.size(), 1u);
    EXPECT_EQ(*single[0].train.image, *subjects[0].image);
    EXPECT_EQ(*single[0].test.image, *subjects[1].image);
}

TEST(Subjects, ConstantMeanBaseline) {
    const auto c = tiny(scratch("baseline"));
    const auto seq = make_sequence(c);
    const auto a = make_subject(c, seq, 0), b = make_subject(c, seq, 1);
    const auto m = constant_mean_maps(a, b);
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.phantom.pixels(); ++i)
        if (a.phantom.labels[i]) {
            s += a.phantom.t1[i];
            ++n;
        }
    for (std::size_t i = 0; i < m.pixels(); ++i) {
        if (b.phantom.labels[i]) {
            EXPECT_DOUBLE_EQ(m.t1[i], s / double(n));
        } else {
            EXPECT_EQ(m.t1[i], 0.0);
        }
    }
}

// ---- fitting ---------------------------------------------------------------

TEST(Fit, ReductionsProduceMatchingBundles) {
    const auto c = tiny(scratch("fit"));
    const auto seq = make_sequence(c);
    const auto s = make_subject(c, seq, 0);

    const auto full = fit_model(c, s, nn::Reduction::None, 0, 4, 5);
    EXPECT_EQ(full.bundle.model.config().channels, 24u);
    EXPECT_EQ(full.history.epochs.size(), 2u);
    EXPECT_TRUE(full.scores.empty());

    const auto rnd = fit_model(c, s, nn::Reduction::Random, 6, 4, 5);
    EXPECT_EQ(rnd.bundle.channels, nn::select_channels_random(24, 6, 5));
    EXPECT_EQ(rnd.bundle.model.config().channels, 6u);

    const auto pca = fit_model(c, s, nn::Reduction::Pca, 5, 4, 5);
    ASSERT_TRUE(pca.bundle.pca.has_value());
    EXPECT_EQ(pca.bundle.pca->output_dim(), 5u);
    EXPECT_EQ(pca.bundle.model.config().channels, 5u);

    const auto att = fit_model(c, s, nn::Reduction::Attention, 7, 4, 5, &full.bundle);
    ASSERT_EQ(att.scores.size(), 24u);
    EXPECT_EQ(att.bundle.channels, nn::select_channels_attention(att.scores, 7));
    EXPECT_EQ(att.bundle.model.config().channels, 7u);

    // Without a selector the same full model is trained internally.
    const auto own = fit_model(c, s, nn::Reduction::Attention, 7, 4, 5);
    EXPECT_EQ(own.scores, att.scores);
    EXPECT_EQ(own.bundle.channels, att.bundle.channels);

    for (const auto* f : {&full, &rnd, &pca, &att}) {
        const auto maps = predict_subject(c, f->bundle, s);
        EXPECT_EQ(maps.mask, s.phantom.foreground_mask());
    }
}

TEST(Fit, AttentionSelectionNeedsFullModel) {
    const auto c = tiny(scratch("fit_sel"));
    const auto s = make_subject(c, make_sequence(c), 0);
    const auto rnd = fit_model(c, s, nn::Reduction::Random, 6, 4, 5);
    EXPECT_THROW(fit_model(c, s, nn::Reduction::Attention, 3, 4, 5, &rnd.bundle), InvalidStateError);
}

TEST(Fit, RmsInputScaling) {
    auto c = tiny(scratch("fit_rms"));
    c.train.input_scaling = "rms";
    const auto s = make_subject(c, make_sequence(c), 0);
    const auto f = fit_model(c, s, nn::Reduction::None, 0, 4, 1);
    EXPECT_DOUBLE_EQ(f.bundle.norm.input_scale, nn::compute_input_scale(*s.image, s.phantom.foreground_mask()));
}

// ---- commands --------------------------------------------------------------

TEST(Commands, LoopClosureThroughFiles) {
    const auto dir = scratch("loop");
    RunConfig c;
    c.phantom.snap_to_grid = true;
    RunLog log;
    c.out = (dir / "dict").string();
    cmd_gen_dict(c, log);
    c.out = (dir / "phantom").string();
    cmd_phantom(c, log);
    c.out = (dir / "match").string();
    const auto rep = cmd_match(c, (dir / "dict" / "dictionary.mrfd").string(), (dir / "phantom" / "phantom_0").string(), log);
    for (const auto& r : rep.rows) {
        EXPECT_EQ(r.t1_mae_pct, 0.0) << r.name;
        EXPECT_EQ(r.t2_mae_pct, 0.0) << r.name;
    }
    EXPECT_TRUE(fs::exists(dir / "match" / "config.json"));
    EXPECT_TRUE(fs::exists(dir / "match" / "match_t1_error.pgm"));
    EXPECT_EQ(parse_config(json::parse(slurp(dir / "match" / "config.json"))).phantom.snap_to_grid, true);
}

TEST(Commands, TrainPredictByteIdentical) {
    const auto dir = scratch("determinism");
    RunLog log;
    for (const char* run : {"a", "b"}) {
        auto c = tiny(dir / run);
        c.selection = {"random", 8};
        cmd_train(c, log);
        c.out = (dir / run / "pred").string();
        cmd_predict(c, (dir / run / "model").string(), "", log);
    }
    for (const char* f : {"history.csv", "selected_channels.csv", "model/model.mrfw", "model/model.json",
                          "pred/report.csv", "pred/pred_t1.mrfm"}) {
        EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    }
}

TEST(Commands, SelectChannels) {
    const auto dir = scratch("select");
    RunLog log;
    auto c = tiny(dir / "att");
    c.selection = {"attention", 5};
    cmd_select_channels(c, "", log);
    EXPECT_EQ(csv_rows(dir / "att" / "scores.csv"), 24u);
    EXPECT_EQ(csv_rows(dir / "att" / "selected_channels.csv"), 5u);

    c = tiny(dir / "pca");
    c.selection = {"pca", 4};
    cmd_select_channels(c, "", log);
    EXPECT_EQ(csv_rows(dir / "pca" / "pca_variance.csv"), 4u);

    c = tiny(dir / "none");
    EXPECT_THROW(cmd_select_channels(c, "", log), ConfigError);
}

TEST(Commands, ChannelSweepHasNineRows) {
    const auto dir = scratch("sweep_channels");
    auto c = tiny(dir, 300);
    c.train.max_epochs = 1;
    c.train.stride = 4;
    RunLog log;
    const auto res = cmd_sweep(c, log);
    ASSERT_EQ(res.rows.size(), 9u);
    EXPECT_EQ(csv_rows(dir / "sweep_channels.csv"), 9u);
    EXPECT_EQ(slurp(dir / "sweep_channels.csv").substr(0, 31), "method,n,t1_mae_pct,t2_mae_pct\n");
    EXPECT_EQ(res.rows[0].method, "attention");
    EXPECT_EQ(res.rows[0].n, "100");
    EXPECT_EQ(res.rows[8].method, "random");
    EXPECT_EQ(res.rows[8].n, "300");
    for (const auto& r : res.rows) {
        EXPECT_GT(r.t1_mae_pct, 0.0);
        EXPECT_TRUE(std::isfinite(r.t2_mae_pct));
    }
}

TEST(Commands, PatchSweepHasFiveRows) {
    const auto dir = scratch("sweep_patch");
    auto c = tiny(dir, 48);
    c.phantom.width = c.phantom.height = 56;
    c.sweep.axis = "patch";
    c.train.max_epochs = 1;
    c.train.stride = 4;
    RunLog log;
    const auto res = cmd_sweep(c, log);
    ASSERT_EQ(res.rows.size(), 5u);
    EXPECT_EQ(csv_rows(dir / "sweep_patch.csv"), 5u);
    EXPECT_EQ(slurp(dir / "sweep_patch.csv").substr(0, 35), "method,patch,t1_mae_pct,t2_mae_pct\n");
    const std::vector<std::string> sizes{"4", "8", "12", "16", "24"};
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(res.rows[i].n, sizes[i]);
}

TEST(Commands, MethodSweepAveragesFolds) {
    const auto dir = scratch("sweep_method");
    auto c = tiny(dir, 200);
    c.noise = 0.0;
    c.phantom.snap_to_grid = true;
    c.folds = 2;
    c.sweep.axis = "method";
    c.sweep.seeds = {1, 2};
    c.train.max_epochs = 1;
    RunLog log;
    const auto res = cmd_sweep(c, log);
    ASSERT_EQ(res.rows.size(), 4u);
    EXPECT_EQ(res.rows[0].method, "dictionary");
    EXPECT_EQ(res.rows[0].t1_mae_pct, 0.0);
    EXPECT_EQ(res.rows[0].t2_mae_pct, 0.0);
    EXPECT_EQ(res.rows[3].method, "conv-ica");
    // 2 folds x (3 fixed rows + 2 seeds).
    EXPECT_EQ(res.runs.size(), 10u);
    double mean = 0.0;
    for (const auto& r : res.runs)
        if (r.method == "conv-ica") mean += r.t1_mae_pct / 4.0;
    EXPECT_NEAR(res.rows[3].t1_mae_pct, mean, 1e-12);
    EXPECT_EQ(csv_rows(dir / "sweep_method_runs.csv"), 10u);
}

TEST(Commands, Gradcheck) {
    const auto dir = scratch("gradcheck");
    RunConfig c;
    c.out = dir.string();
    RunLog log;
    EXPECT_TRUE(cmd_gradcheck(c, log));
    EXPECT_GT(csv_rows(dir / "gradcheck.csv"), 20u);
}

TEST(Commands, BenchOnSyntheticDictionary) {
    const auto dict = std::make_shared<const Dictionary>(synthetic_dictionary(3000, 120, 4));
    EXPECT_EQ(*dict, synthetic_dictionary(3000, 120, 4));
    const auto r = bench_matchers(dict, 8, 64, 0.0, 1);
    EXPECT_EQ(r.entries, 3000u);
    EXPECT_EQ(r.probes, 64u);
    EXPECT_GT(r.full_seconds, 0.0);
    EXPECT_GT(r.compressed_seconds, 0.0);
    EXPECT_GE(r.agreement, 0.9);
}

// ---- executable ------------------------------------------------------------

TEST(Cli, ExitCodes) {
    const auto dir = scratch("cli");
    EXPECT_EQ(run_cli("--help"), 0);
    EXPECT_EQ(run_cli(""), 2);
    EXPECT_EQ(run_cli("frobnicate"), 2);
    write_text(dir / "unknown.json", R"({"sequence": {"tpoints": 10}})");
    EXPECT_EQ(run_cli("phantom --config " + (dir / "unknown.json").string() + " --out " + (dir / "x").string()), 2);
    EXPECT_EQ(run_cli("phantom --noise -1 --out " + (dir / "x").string()), 2);
    EXPECT_EQ(run_cli("phantom --config " + (dir / "missing.json").string()), 3);
    EXPECT_EQ(run_cli("predict --model " + (dir / "nope").string() + " --out " + (dir / "y").string()), 3);
    EXPECT_EQ(run_cli("gradcheck -q --out " + (dir / "g").string()), 0);

    write_text(dir / "blowup.json", R"({"sequence": {"t_points": 16}, "phantom": {"width": 16, "height": 16},
        "model": {"widths": [4, 4, 4, 4]}, "train": {"lr": 1e30, "max_epochs": 3, "batch": 8}})");
    EXPECT_EQ(run_cli("train -q --config " + (dir / "blowup.json").string() + " --out " + (dir / "z").string()), 4);
}

TEST(Cli, ResolvedConfigWrittenBesideOutputs) {
    const auto dir = scratch("cli_config");
    write_text(dir / "c.json", R"({"sequence": {"t_points": 16}, "phantom": {"width": 16, "height": 16}})");
    ASSERT_EQ(run_cli("phantom -q --config " + (dir / "c.json").string() + " --seed 9 --folds 3 --out " +
                      (dir / "o").string()),
              0);
    const auto c = load_config((dir / "o" / "config.json").string());
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.folds, 3u);
    EXPECT_EQ(c.sequence.t_points, 16u);
    EXPECT_EQ(c.out, (dir / "o").string());
    for (int k = 0; k < 3; ++k) EXPECT_TRUE(fs::exists(dir / "o" / ("phantom_" + std::to_string(k)) / "image.mrfi"));
    EXPECT_TRUE(fs::exists(dir / "o" / "run.log"));
}
