#include <mrf/phantom.hpp>

#include <gtest/gtest.h>

#include <filesystem>

using namespace mrf;

namespace {

SequenceParams short_sequence(std::size_t t = 120) {
    SequenceParams s;
    s.flip_train = default_flip_train(t, 1);
    return s;
}

std::string temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("mrf_phantom_" + name);
    std::filesystem::remove_all(p);
    return p.string();
}

}  // namespace

TEST(Phantom, SameSeedSameBytes) {
    const auto a = generate_phantom(48, 40, 9);
    const auto b = generate_phantom(48, 40, 9);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, generate_phantom(48, 40, 10));
}

TEST(Phantom, TooSmallIsDomainError) {
    EXPECT_THROW(generate_phantom(7, 32, 1), DomainError);
    EXPECT_THROW(generate_phantom(32, 0, 1), DomainError);
    RegionParams p;
    p.variation = 1.5;
    EXPECT_THROW(generate_phantom(32, 32, 1, p), DomainError);
}

TEST(Phantom, AllRegionsPresentAndBackgroundIsZero) {
    const auto ph = generate_phantom(64, 64, 3);
    std::array<std::size_t, 4> counts{};
    for (std::size_t i = 0; i < ph.pixels(); ++i) {
        ++counts[ph.labels[i]];
        if (ph.labels[i] == 0) {
            EXPECT_EQ(ph.t1[i], 0.0);
            EXPECT_EQ(ph.t2[i], 0.0);
        }
    }
    for (auto c : counts) EXPECT_GT(c, 50u);
    // Corners lie outside the ellipse.
    EXPECT_EQ(ph.labels[0], 0);
    EXPECT_EQ(ph.labels[ph.pixels() - 1], 0);
    // The centre is CSF.
    EXPECT_EQ(ph.label(32 * 64 + 32), Region::CSF);
}

TEST(Phantom, ZeroVariationIsPiecewiseConstant) {
    RegionParams p;
    p.variation = 0.0;
    const auto ph = generate_phantom(40, 40, 5, p);
    for (std::size_t i = 0; i < ph.pixels(); ++i) {
        if (ph.labels[i] == 0) continue;
        const auto& nom = p.nominal(ph.label(i));
        EXPECT_EQ(ph.t1[i], nom.t1_ms);
        EXPECT_EQ(ph.t2[i], nom.t2_ms);
    }
}

TEST(Phantom, T2NeverExceedsT1) {
    RegionParams p;
    p.wm = {100.0, 95.0};  // variation can push T2 above T1 unless clamped
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto ph = generate_phantom(32, 32, seed, p);
        for (std::size_t i = 0; i < ph.pixels(); ++i) {
            if (ph.labels[i] == 0) continue;
            EXPECT_GT(ph.t2[i], 0.0);
            EXPECT_LE(ph.t2[i], ph.t1[i]);
        }
    }
}

TEST(Phantom, ValuesStayWithinRegionRange) {
    const RegionParams p;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const auto ph = generate_phantom(64, 64, seed, p);
        for (std::size_t i = 0; i < ph.pixels(); ++i) {
            if (ph.labels[i] == 0) continue;
            const auto& nom = p.nominal(ph.label(i));
            const double tol = 1e-4;  // f32 rounding
            EXPECT_GE(ph.t1[i], nom.t1_ms * (1 - p.variation) - tol);
            EXPECT_LE(ph.t1[i], std::min(nom.t1_ms * (1 + p.variation), p.t1_max) + tol);
            EXPECT_GE(ph.t2[i], nom.t2_ms * (1 - p.variation) - tol);
            EXPECT_LE(ph.t2[i], std::min(nom.t2_ms * (1 + p.variation), p.t2_max) + tol);
        }
    }
}

TEST(Phantom, SnapToGridLandsOnGridEntries) {
    auto ph = generate_phantom(32, 32, 2);
    const auto grid = expand_grid(desk_grid());
    snap_to_grid(ph, grid);
    for (std::size_t i = 0; i < ph.pixels(); ++i) {
        if (ph.labels[i] == 0) continue;
        const TissueParams tp{ph.t1[i], ph.t2[i]};
        EXPECT_NE(std::find(grid.begin(), grid.end(), tp), grid.end()) << tp.t1_ms << "/" << tp.t2_ms;
    }
}

TEST(Synthesis, NoiselessPixelEqualsSimulation) {
    const auto ph = generate_phantom(16, 16, 4);
    const auto seq = short_sequence();
    const auto img = synthesize_image(ph, seq, 0.0, 1);
    for (std::size_t i = 0; i < ph.pixels(); ++i) {
        const auto px = img.pixel(i);
        if (ph.labels[i] == 0) {
            for (float v : px) EXPECT_EQ(v, 0.0f);
            continue;
        }
        const auto fp = simulate_fingerprint(seq, {ph.t1[i], ph.t2[i]});
        for (std::size_t t = 0; t < px.size(); ++t) ASSERT_EQ(px[t], static_cast<float>(fp.signal[t]));
    }
}

TEST(Synthesis, NoiselessSameTissueSameSignal) {
    RegionParams p;
    p.variation = 0.0;
    const auto ph = generate_phantom(24, 24, 4, p);
    const auto img = synthesize_image(ph, short_sequence(), 0.0, 1);
    const std::size_t a = 12 * 24 + 12, b = 12 * 24 + 11;
    ASSERT_EQ(ph.labels[a], ph.labels[b]);
    const auto pa = img.pixel(a), pb = img.pixel(b);
    EXPECT_TRUE(std::equal(pa.begin(), pa.end(), pb.begin()));
}

TEST(Synthesis, ThreadCountDoesNotChangeOutput) {
    const auto ph = generate_phantom(24, 24, 4);
    const auto seq = short_sequence();
    EXPECT_EQ(synthesize_image(ph, seq, 0.05, 7, 1).data, synthesize_image(ph, seq, 0.05, 7, 3).data);
}

TEST(Synthesis, NegativeNoiseIsDomainError) {
    const auto ph = generate_phantom(8, 8, 1);
    EXPECT_THROW(synthesize_image(ph, short_sequence(), -0.1, 1), DomainError);
}

// Per-sample mean of the noisy magnitude over 100 seeds against the
// noiseless value, in units of the empirical standard error. The magnitude
// is Rician, so a small bias remains where the signal is weak relative to
// the noise; the rule is therefore a fraction of samples, not all.
TEST(Synthesis, MonteCarloMeanApproachesNoiseless) {
    const auto ph = generate_phantom(8, 8, 6);
    const auto seq = short_sequence(100);
    const auto clean = synthesize_image(ph, seq, 0.0, 0);
    EXPECT_NE(synthesize_image(ph, seq, 0.05, 1).data, synthesize_image(ph, seq, 0.05, 2).data);
    const std::size_t runs = 100;
    const std::size_t n = clean.data.size();
    std::vector<double> sum(n, 0.0), sum2(n, 0.0);
    for (std::size_t s = 0; s < runs; ++s) {
        const auto noisy = synthesize_image(ph, seq, 0.05, 1000 + s);
        for (std::size_t k = 0; k < n; ++k) {
            sum[k] += noisy.data[k];
            sum2[k] += double(noisy.data[k]) * noisy.data[k];
        }
    }
    std::size_t inside = 0, considered = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (clean.data[k] == 0.0f) continue;
        const double mean = sum[k] / runs;
        const double var = (sum2[k] - runs * mean * mean) / (runs - 1);
        const double se = std::sqrt(std::max(var, 0.0) / runs);
        ++considered;
        if (std::abs(mean - clean.data[k]) <= 3.0 * se) ++inside;
    }
    ASSERT_GT(considered, 500u);
    EXPECT_GE(double(inside) / double(considered), 0.97) << inside << "/" << considered;
}

TEST(PhantomIo, RoundTrip) {
    const auto ph = generate_phantom(33, 20, 8);
    const auto dir = temp_dir("rt");
    save_phantom(ph, dir);
    EXPECT_EQ(load_phantom(dir), ph);
    std::filesystem::remove_all(dir);
}

TEST(PhantomIo, InconsistentLayersRejected) {
    const auto dir = temp_dir("bad");
    save_phantom(generate_phantom(16, 16, 1), dir);
    const auto other = generate_phantom(16, 12, 1);
    save_map(other.width, other.height, other.t1, dir + "/t1.mrfm");
    EXPECT_THROW(load_phantom(dir), FormatError);
    std::filesystem::remove_all(dir);
}

TEST(PhantomIo, MissingDirectoryIsIoError) {
    EXPECT_THROW(load_phantom(temp_dir("missing")), IoError);
}
