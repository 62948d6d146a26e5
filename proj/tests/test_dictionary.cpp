#include <mrf/dictionary.hpp>

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

using namespace mrf;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

SequenceParams desk_sequence(std::size_t t = 200, std::uint64_t seed = 1) {
    SequenceParams s;
    s.flip_train = default_flip_train(t, seed);
    return s;
}

// Small grid (~50 entries) for fast tests.
GridSpec small_grid() {
    return GridSpec{{{300, 150, 1500}}, {{20, 20, 200}}, {}};
}

// Energy fraction from the eigenvalues of an explicitly accumulated Gram matrix.
double gram_energy_fraction(const Dictionary& d, std::size_t rank) {
    const auto t = static_cast<Eigen::Index>(d.t_points);
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(t, t);
    std::vector<double> row(d.t_points);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto s = d.signal(i);
        double n = 0.0;
        for (float v : s) n += double(v) * double(v);
        n = std::sqrt(n);
        for (std::size_t k = 0; k < d.t_points; ++k) row[k] = double(s[k]) / n;
        for (Eigen::Index a = 0; a < t; ++a)
            for (Eigen::Index b = 0; b < t; ++b) g(a, b) += row[a] * row[b];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g);
    const auto ev = eig.eigenvalues();
    double top = 0.0, total = 0.0;
    for (Eigen::Index i = 0; i < t; ++i) {
        total += ev(i);
        if (i >= t - static_cast<Eigen::Index>(rank)) top += ev(i);
    }
    return top / total;
}

}  // namespace

TEST(ExpandGrid, FullRangesCountUniqueValues) {
    // Independent enumeration of the published ranges on integers.
    std::set<int> t1, t2;
    for (int v = 0; v <= 500; v += 2) t1.insert(v);
    for (int v = 500; v <= 1000; v += 5) t1.insert(v);
    for (int v = 1000; v <= 2000; v += 10) t1.insert(v);
    for (int v = 2000; v <= 4000; v += 50) t1.insert(v);
    for (int v = 0; v <= 100; v += 1) t2.insert(v);
    for (int v = 100; v <= 500; v += 2) t2.insert(v);
    ASSERT_EQ(t1.size(), 491u);
    ASSERT_EQ(t2.size(), 301u);

    const auto counts = grid_counts(full_grid());
    EXPECT_EQ(counts.t1_values, 491u);
    EXPECT_EQ(counts.t2_values, 301u);
    EXPECT_EQ(counts.raw_pairs, 147791u);

    std::size_t kept = 0;
    for (int a : t1)
        for (int b : t2) kept += (a > 0 && b > 0 && b <= a) ? 1 : 0;
    EXPECT_EQ(counts.kept_pairs, kept);
    EXPECT_EQ(expand_grid(full_grid()).size(), kept);
}

TEST(ExpandGrid, DegenerateRangeIsSinglePair) {
    const GridSpec g{{{100, 100, 100}}, {{50, 50, 50}}, {}};
    const auto out = expand_grid(g);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0], (TissueParams{100, 50}));
}

TEST(ExpandGrid, SortedUniqueAndFiltered) {
    const auto out = expand_grid(desk_grid());
    for (std::size_t i = 1; i < out.size(); ++i) EXPECT_LT(out[i - 1], out[i]);
    for (const auto& p : out) {
        EXPECT_GT(p.t1_ms, 0.0);
        EXPECT_GT(p.t2_ms, 0.0);
        EXPECT_LE(p.t2_ms, p.t1_ms);
    }
}

TEST(ExpandGrid, FilterCanBeDisabled) {
    GridSpec g{{{0, 10, 20}}, {{0, 15, 30}}, {false, false}};
    EXPECT_EQ(expand_grid(g).size(), 9u);
    g.filter.drop_nonpositive = true;
    EXPECT_EQ(expand_grid(g).size(), 4u);
    g.filter.drop_t2_above_t1 = true;
    EXPECT_EQ(expand_grid(g).size(), 1u);  // only (20, 15) has T2 <= T1
}

TEST(ExpandGrid, EmptyExpansionIsAnError) {
    const GridSpec g{{{0, 1, 0}}, {{0, 1, 0}}, {}};
    EXPECT_THROW(expand_grid(g), DomainError);
    const GridSpec bad{{{0, 0, 10}}, {{1, 1, 2}}, {}};
    EXPECT_THROW(expand_grid(bad), DomainError);
}

TEST(ExpandGrid, StableUnderReExpansion) {
    const auto once = expand_grid(desk_grid());
    auto shuffled = once;
    std::reverse(shuffled.begin(), shuffled.end());
    std::sort(shuffled.begin(), shuffled.end());
    EXPECT_EQ(once, shuffled);
}

TEST(BuildDictionary, SingleEntryEqualsSimulation) {
    const auto seq = desk_sequence(120);
    const std::vector<TissueParams> grid{{900, 65}};
    const auto d = build_dictionary(seq, grid);
    ASSERT_EQ(d.size(), 1u);
    const auto fp = simulate_fingerprint(seq, grid[0]);
    for (std::size_t t = 0; t < 120; ++t) EXPECT_EQ(d.signal(0)[t], static_cast<float>(fp.signal[t]));
}

TEST(BuildDictionary, ParallelEqualsSerial) {
    const auto seq = desk_sequence(150);
    auto grid = expand_grid(small_grid());
    grid.resize(std::min<std::size_t>(grid.size(), 100));
    const auto serial = build_dictionary(seq, grid, 1);
    const auto parallel = build_dictionary(seq, grid, 4);
    EXPECT_EQ(serial, parallel);
    EXPECT_EQ(serial.norms, parallel.norms);
}

TEST(BuildDictionary, DeskGridEntryCountMatchesExpansion) {
    const auto grid = expand_grid(desk_grid());
    const auto d = build_dictionary(desk_sequence(200), grid);
    EXPECT_EQ(d.size(), grid.size());
    EXPECT_EQ(d.signals.size(), grid.size() * 200);
}

TEST(BuildDictionary, DomainErrorNamesOffendingEntry) {
    const std::vector<TissueParams> grid{{100, 10}, {0, 10}};
    try {
        build_dictionary(desk_sequence(10), grid);
        FAIL() << "expected DomainError";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("T1=0"), std::string::npos) << e.what();
    }
}

TEST(BuildDictionary, RejectsDuplicates) {
    const std::vector<TissueParams> grid{{100, 10}, {100, 10}};
    EXPECT_THROW(build_dictionary(desk_sequence(10), grid), DomainError);
}

TEST(CompressSvd, FullRankReproducesNormalizedFingerprints) {
    const auto d = build_dictionary(desk_sequence(30), expand_grid(small_grid()));
    ASSERT_GE(d.size(), 30u);
    const auto c = compress_svd(d, 30);
    for (std::size_t i = 0; i < d.size(); ++i) {
        Eigen::VectorXd coord(30);
        for (std::size_t k = 0; k < 30; ++k) coord(k) = c.coord(i)[k];
        const Eigen::VectorXd rec = c.basis * coord;
        for (std::size_t t = 0; t < 30; ++t) EXPECT_NEAR(rec(t), double(d.signal(i)[t]) / d.norms[i], 1e-8);
    }
    EXPECT_NEAR(c.energy_fraction, 1.0, 1e-12);
}

TEST(CompressSvd, IdenticalFingerprintsHaveRankOneEnergy) {
    Dictionary d;
    d.t_points = 16;
    for (int i = 0; i < 12; ++i) {
        d.params.push_back({100.0 + i, 10.0});
        for (int t = 0; t < 16; ++t) d.signals.push_back(0.1f * float(t + 1) * float(i + 1));
    }
    d.recompute_norms();
    const auto c = compress_svd(d, 1);
    EXPECT_NEAR(c.energy_fraction, 1.0, 1e-12);
}

TEST(CompressSvd, EnergyMatchesGramOracle) {
    auto grid = expand_grid(desk_grid());
    // 1000 entries spread over the grid.
    std::vector<TissueParams> pick;
    for (std::size_t i = 0; i < 1000; ++i) pick.push_back(grid[i * grid.size() / 1000]);
    const auto d = build_dictionary(desk_sequence(200), pick);
    const auto c = compress_svd(d, 5);
    EXPECT_NEAR(c.energy_fraction, gram_energy_fraction(d, 5), 1e-6);
}

TEST(CompressSvd, GramAndDirectRoutesAgree) {
    const auto d = build_dictionary(desk_sequence(80), expand_grid(small_grid()));
    const auto a = compress_svd(d, 4, {linalg::SvdRoute::Direct});
    const auto b = compress_svd(d, 4, {linalg::SvdRoute::Gram});
    EXPECT_NEAR(a.energy_fraction, b.energy_fraction, 1e-10);
    // Same subspace: |<a_k, b_k>| = 1 and identical sign convention.
    for (Eigen::Index k = 0; k < 4; ++k) EXPECT_NEAR(a.basis.col(k).dot(b.basis.col(k)), 1.0, 1e-6);
}

TEST(CompressSvd, BasisOrthonormalAndProjectionContracts) {
    const auto d = build_dictionary(desk_sequence(100), expand_grid(small_grid()));
    for (std::size_t r : {1u, 5u, 20u}) {
        const auto c = compress_svd(d, r);
        const Eigen::MatrixXd gram = c.basis.transpose() * c.basis;
        EXPECT_LT((gram - Eigen::MatrixXd::Identity(r, r)).cwiseAbs().maxCoeff(), 1e-10);
        for (std::size_t i = 0; i < c.size(); ++i) {
            double n = 0.0;
            for (double v : c.coord(i)) n += v * v;
            EXPECT_LE(std::sqrt(n), 1.0 + 1e-10);
        }
        // Sign convention: first nonzero basis component positive.
        for (Eigen::Index k = 0; k < c.basis.cols(); ++k) {
            for (Eigen::Index t = 0; t < c.basis.rows(); ++t) {
                if (std::abs(c.basis(t, k)) > 1e-12) {
                    EXPECT_GT(c.basis(t, k), 0.0);
                    break;
                }
            }
        }
    }
}

TEST(CompressSvd, RankOutOfRange) {
    const auto d = build_dictionary(desk_sequence(20), expand_grid(small_grid()));
    EXPECT_THROW(compress_svd(d, 0), DomainError);
    EXPECT_THROW(compress_svd(d, 21), DomainError);
}

TEST(DictionaryFile, RoundTripIsExact) {
    const auto d = build_dictionary(desk_sequence(64), expand_grid(small_grid()));
    const auto path = temp_path("mrf_dict_roundtrip.mrfd");
    save_dictionary(d, path);
    const auto back = load_dictionary(path);
    EXPECT_EQ(back, d);
    EXPECT_EQ(back.norms, d.norms);
    EXPECT_FALSE(is_compressed_dictionary(path));
    std::filesystem::remove(path);
}

TEST(DictionaryFile, CompressedRoundTripIsStable) {
    const auto d = build_dictionary(desk_sequence(64), expand_grid(small_grid()));
    const auto c = compress_svd(d, 5);
    const auto a = temp_path("mrf_cdict_a.mrfd");
    const auto b = temp_path("mrf_cdict_b.mrfd");
    save_dictionary(c, a);
    ASSERT_TRUE(is_compressed_dictionary(a));
    const auto back = load_compressed_dictionary(a);
    EXPECT_EQ(back.basis, c.basis);
    EXPECT_EQ(back.params, c.params);
    for (std::size_t i = 0; i < c.coords.size(); ++i) EXPECT_EQ(back.coords[i], double(float(c.coords[i])));
    save_dictionary(back, b);
    EXPECT_EQ(load_compressed_dictionary(b), back);
    std::filesystem::remove(a);
    std::filesystem::remove(b);
}

TEST(DictionaryFile, TruncatedFileIsFormatError) {
    const auto d = build_dictionary(desk_sequence(32), expand_grid(small_grid()));
    const auto path = temp_path("mrf_dict_trunc.mrfd");
    save_dictionary(d, path);
    const auto size = std::filesystem::file_size(path);
    for (auto cut : {size - 1, size / 2, std::uintmax_t{22}, std::uintmax_t{6}, std::uintmax_t{0}}) {
        std::filesystem::resize_file(path, cut);
        EXPECT_THROW(load_dictionary(path), FormatError) << "cut=" << cut;
        save_dictionary(d, path);
    }
    std::filesystem::remove(path);
}

TEST(DictionaryFile, WrongMagicIsReported) {
    const auto path = temp_path("mrf_dict_magic.mrfd");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE and some more bytes to read";
    }
    try {
        load_dictionary(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST(DictionaryFile, KindMismatchIsFormatError) {
    const auto d = build_dictionary(desk_sequence(16), expand_grid(small_grid()));
    const auto path = temp_path("mrf_dict_kind.mrfd");
    save_dictionary(d, path);
    EXPECT_THROW(load_compressed_dictionary(path), FormatError);
    save_dictionary(compress_svd(d, 2), path);
    EXPECT_THROW(load_dictionary(path), FormatError);
    std::filesystem::remove(path);
}
