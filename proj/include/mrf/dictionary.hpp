#pragma once

// T1/T2 grid expansion, dictionary simulation, SVD compression and the
// binary "MRFD" dictionary format.

#include <mrf/binary_io.hpp>
#include <mrf/epg.hpp>
#include <mrf/error.hpp>
#include <mrf/linalg.hpp>
#include <mrf/parallel.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace mrf {

/// Inclusive arithmetic range start, start+step, ..., <= end.
struct GridSegment {
    double start = 0.0;
    double step = 1.0;
    double end = 0.0;
};

struct GridFilter {
    bool drop_nonpositive = true;   // T1 = 0 or T2 = 0 cannot be simulated
    bool drop_t2_above_t1 = true;   // T2 > T1 is unphysical
};

struct GridSpec {
    std::vector<GridSegment> t1_segments;
    std::vector<GridSegment> t2_segments;
    GridFilter filter;
};

/// The full-resolution relaxation grid (ms).
inline GridSpec full_grid() {
    return GridSpec{{{0, 2, 500}, {500, 5, 1000}, {1000, 10, 2000}, {2000, 50, 4000}},
                    {{0, 1, 100}, {100, 2, 500}},
                    {}};
}

/// full_grid() with every step multiplied by 5.
inline GridSpec desk_grid() {
    GridSpec g = full_grid();
    for (auto& s : g.t1_segments) s.step *= 5.0;
    for (auto& s : g.t2_segments) s.step *= 5.0;
    return g;
}

/// Sorted, de-duplicated union of all segment values.
inline std::vector<double> expand_values(const std::vector<GridSegment>& segments) {
    std::vector<double> values;
    for (const auto& s : segments) {
        if (!(s.step > 0.0) || !std::isfinite(s.start) || !std::isfinite(s.end)) {
            throw DomainError("grid segment step must be positive and bounds finite");
        }
        if (s.end < s.start) continue;
        const auto count = static_cast<std::size_t>(std::floor((s.end - s.start) / s.step + 1e-9)) + 1;
        for (std::size_t k = 0; k < count; ++k) values.push_back(s.start + static_cast<double>(k) * s.step);
    }
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end(),
                             [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)); }),
                 values.end());
    return values;
}

struct GridCounts {
    std::size_t t1_values = 0;
    std::size_t t2_values = 0;
    std::size_t raw_pairs = 0;
    std::size_t kept_pairs = 0;
};

inline bool keep_pair(const GridFilter& f, double t1, double t2) {
    if (f.drop_nonpositive && (t1 <= 0.0 || t2 <= 0.0)) return false;
    if (f.drop_t2_above_t1 && t2 > t1) return false;
    return true;
}

/// Cartesian product T1 x T2 in (T1, T2) lexicographic order, filtered.
inline std::vector<TissueParams> expand_grid(const GridSpec& spec) {
    const auto t1 = expand_values(spec.t1_segments);
    const auto t2 = expand_values(spec.t2_segments);
    std::vector<TissueParams> out;
    for (double a : t1) {
        for (double b : t2) {
            if (keep_pair(spec.filter, a, b)) out.push_back({a, b});
        }
    }
    if (out.empty()) throw DomainError("empty grid: no (T1, T2) pair survives expansion and filtering");
    return out;
}

inline GridCounts grid_counts(const GridSpec& spec) {
    GridCounts c;
    const auto t1 = expand_values(spec.t1_segments);
    const auto t2 = expand_values(spec.t2_segments);
    c.t1_values = t1.size();
    c.t2_values = t2.size();
    c.raw_pairs = t1.size() * t2.size();
    for (double a : t1)
        for (double b : t2) c.kept_pairs += keep_pair(spec.filter, a, b) ? 1 : 0;
    return c;
}

/// Simulated fingerprints. Samples are stored unnormalized in single
/// precision; per-entry L2 norms are cached in double.
struct Dictionary {
    std::size_t t_points = 0;
    std::vector<TissueParams> params;
    std::vector<float> signals;  // N x T row-major
    std::vector<double> norms;

    std::size_t size() const noexcept { return params.size(); }

    std::span<const float> signal(std::size_t i) const {
        return {signals.data() + i * t_points, t_points};
    }

    void recompute_norms() {
        norms.resize(size());
        for (std::size_t i = 0; i < size(); ++i) {
            double acc = 0.0;
            for (float v : signal(i)) acc += static_cast<double>(v) * static_cast<double>(v);
            norms[i] = std::sqrt(acc);
        }
    }

    friend bool operator==(const Dictionary& a, const Dictionary& b) {
        return a.t_points == b.t_points && a.params == b.params && a.signals == b.signals;
    }
};

inline void check_unique_params(const std::vector<TissueParams>& grid) {
    auto sorted = grid;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw DomainError("grid contains duplicate (T1, T2) pairs");
    }
}

/// One fingerprint per grid entry, in grid order. Output is identical for
/// any thread count since every entry owns its output slice.
inline Dictionary build_dictionary(const SequenceParams& seq, const std::vector<TissueParams>& grid,
                                   std::size_t threads = 1, const EpgOptions& opt = {}) {
    seq.validate();
    if (grid.empty()) throw DomainError("empty grid");
    check_unique_params(grid);
    Dictionary dict;
    dict.t_points = seq.t_points();
    dict.params = grid;
    dict.signals.resize(grid.size() * dict.t_points);
    parallel_for(grid.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            Fingerprint fp;
            try {
                fp = simulate_fingerprint(seq, grid[i], opt);
            } catch (const DomainError& e) {
                std::ostringstream msg;
                msg << "dictionary entry " << i << " (T1=" << grid[i].t1_ms << " ms, T2=" << grid[i].t2_ms
                    << " ms): " << e.what();
                throw DomainError(msg.str());
            }
            float* out = dict.signals.data() + i * dict.t_points;
            for (std::size_t t = 0; t < dict.t_points; ++t) out[t] = static_cast<float>(fp.signal[t]);
        }
    });
    dict.recompute_norms();
    return dict;
}

/// Dictionary projected onto a rank-r orthonormal temporal basis.
struct CompressedDictionary {
    std::size_t t_points = 0;
    std::size_t rank = 0;
    Eigen::MatrixXd basis;  // T x r
    // N x r row-major, normalized fingerprint times basis. Held in double;
    // the file stores single precision, so loaded coordinates are f32-rounded.
    std::vector<double> coords;
    std::vector<TissueParams> params;
    /// Fraction of normalized-dictionary energy captured by the basis; NaN when unknown (e.g. loaded from disk).
    double energy_fraction = std::numeric_limits<double>::quiet_NaN();

    std::size_t size() const noexcept { return params.size(); }

    std::span<const double> coord(std::size_t i) const { return {coords.data() + i * rank, rank}; }

    friend bool operator==(const CompressedDictionary& a, const CompressedDictionary& b) {
        return a.t_points == b.t_points && a.rank == b.rank && a.basis == b.basis && a.coords == b.coords &&
               a.params == b.params;
    }
};

namespace detail {

inline void normalized_row(const Dictionary& dict, std::size_t i, std::span<double> out) {
    const auto s = dict.signal(i);
    const double inv = dict.norms[i] > 0.0 ? 1.0 / dict.norms[i] : 0.0;
    for (std::size_t t = 0; t < s.size(); ++t) out[t] = static_cast<double>(s[t]) * inv;
}

}  // namespace detail

/// Projects every normalized entry onto an existing T x r basis.
inline CompressedDictionary compress_with_basis(const Dictionary& dict, const Eigen::MatrixXd& basis) {
    if (static_cast<std::size_t>(basis.rows()) != dict.t_points || basis.cols() < 1) {
        throw DomainError("basis row count must equal the dictionary's time points");
    }
    CompressedDictionary c;
    c.t_points = dict.t_points;
    c.rank = static_cast<std::size_t>(basis.cols());
    c.basis = basis;
    c.params = dict.params;
    c.coords.resize(dict.size() * c.rank);
    const Eigen::MatrixXd bt = basis.transpose();
    Eigen::VectorXd row(static_cast<Eigen::Index>(dict.t_points));
    for (std::size_t i = 0; i < dict.size(); ++i) {
        detail::normalized_row(dict, i, std::span<double>(row.data(), dict.t_points));
        const Eigen::VectorXd p = bt * row;
        for (std::size_t k = 0; k < c.rank; ++k) c.coords[i * c.rank + k] = p(static_cast<Eigen::Index>(k));
    }
    return c;
}

struct SvdOptions {
    linalg::SvdRoute route = linalg::SvdRoute::Automatic;
    /// Fit the basis on every k-th entry only (1 = all entries).
    std::size_t fit_stride = 1;
};

/// Rank-r compression onto the top right singular vectors of the N x T
/// matrix of L2-normalized fingerprints.
inline CompressedDictionary compress_svd(const Dictionary& dict, std::size_t rank, const SvdOptions& opt = {}) {
    const std::size_t stride = std::max<std::size_t>(1, opt.fit_stride);
    const std::size_t rows = (dict.size() + stride - 1) / stride;
    if (rank < 1 || rank > std::min(rows, dict.t_points)) {
        throw DomainError("SVD rank " + std::to_string(rank) + " out of range [1, " +
                          std::to_string(std::min(rows, dict.t_points)) + "]");
    }
    const auto svd = linalg::truncated_svd(
        rows, dict.t_points, [&](std::size_t i, std::span<double> out) { detail::normalized_row(dict, i * stride, out); },
        rank, opt.route);
    auto c = compress_with_basis(dict, svd.basis);
    c.energy_fraction = svd.energy_fraction(rank);
    return c;
}

// ---------------------------------------------------------------------------
// MRFD binary format (little-endian):
//   "MRFD" | u32 version=1 | u64 N | u32 T | u32 flags (bit0 = compressed)
//   raw:        N x (f64 t1, f64 t2) | N x T f32 samples
//   compressed: u32 rank | T x r f64 basis (row-major) | N x r f32 coords | N x (f64 t1, f64 t2)

inline constexpr std::uint32_t dictionary_format_version = 1;
inline constexpr std::uint32_t dictionary_flag_compressed = 1u;

namespace detail {

struct DictHeader {
    std::uint64_t n = 0;
    std::uint32_t t = 0;
    std::uint32_t flags = 0;
};

inline void write_dict_header(std::ostream& os, std::uint64_t n, std::uint32_t t, std::uint32_t flags) {
    io::write_magic(os, "MRFD");
    io::write_le<std::uint32_t>(os, dictionary_format_version);
    io::write_le<std::uint64_t>(os, n);
    io::write_le<std::uint32_t>(os, t);
    io::write_le<std::uint32_t>(os, flags);
}

inline std::uint64_t remaining_bytes(std::istream& is) {
    const auto here = is.tellg();
    is.seekg(0, std::ios::end);
    const auto end = is.tellg();
    is.seekg(here);
    return static_cast<std::uint64_t>(end - here);
}

// Guards allocations against corrupted headers: fails before reading when
// fewer than `bytes` remain for `field`.
inline void require_bytes(std::uint64_t& budget, std::uint64_t bytes, const char* field) {
    if (budget < bytes) throw FormatError(std::string("truncated file while reading ") + field);
    budget -= bytes;
}

inline DictHeader read_dict_header(std::istream& is) {
    io::expect_magic(is, "MRFD");
    const auto version = io::read_le<std::uint32_t>(is, "version");
    if (version != dictionary_format_version) {
        throw FormatError("unsupported version " + std::to_string(version));
    }
    DictHeader h;
    h.n = io::read_le<std::uint64_t>(is, "entry count");
    h.t = io::read_le<std::uint32_t>(is, "time points");
    h.flags = io::read_le<std::uint32_t>(is, "flags");
    if (h.n == 0) throw FormatError("entry count is zero");
    if (h.n > (std::uint64_t{1} << 40)) throw FormatError("entry count is implausibly large");
    if (h.t == 0) throw FormatError("time points is zero");
    if ((h.flags & ~dictionary_flag_compressed) != 0) throw FormatError("unknown flags");
    return h;
}

inline void read_params(std::istream& is, std::vector<TissueParams>& params, std::uint64_t n) {
    params.resize(n);
    std::vector<double> raw(2 * n);
    io::read_le_array<double>(is, raw, "tissue parameters");
    for (std::uint64_t i = 0; i < n; ++i) params[i] = {raw[2 * i], raw[2 * i + 1]};
}

inline void write_params(std::ostream& os, const std::vector<TissueParams>& params) {
    for (const auto& p : params) {
        io::write_le(os, p.t1_ms);
        io::write_le(os, p.t2_ms);
    }
}

}  // namespace detail

inline void save_dictionary(const Dictionary& dict, const std::string& path) {
    auto os = io::open_out(path);
    detail::write_dict_header(os, dict.size(), static_cast<std::uint32_t>(dict.t_points), 0);
    detail::write_params(os, dict.params);
    io::write_le_array<float>(os, dict.signals);
    io::finish_write(os, path);
}

inline void save_dictionary(const CompressedDictionary& dict, const std::string& path) {
    auto os = io::open_out(path);
    detail::write_dict_header(os, dict.size(), static_cast<std::uint32_t>(dict.t_points), dictionary_flag_compressed);
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dict.rank));
    for (Eigen::Index r = 0; r < dict.basis.rows(); ++r)
        for (Eigen::Index c = 0; c < dict.basis.cols(); ++c) io::write_le(os, dict.basis(r, c));
    for (double v : dict.coords) io::write_le<float>(os, static_cast<float>(v));
    detail::write_params(os, dict.params);
    io::finish_write(os, path);
}

/// True when the file at `path` carries the compressed flag.
inline bool is_compressed_dictionary(const std::string& path) {
    auto is = io::open_in(path);
    return (detail::read_dict_header(is).flags & dictionary_flag_compressed) != 0;
}

inline Dictionary load_dictionary(const std::string& path) {
    auto is = io::open_in(path);
    const auto h = detail::read_dict_header(is);
    if (h.flags & dictionary_flag_compressed) throw FormatError("flags: expected a raw dictionary, found compressed");
    auto budget = detail::remaining_bytes(is);
    detail::require_bytes(budget, h.n * 16, "tissue parameters");
    detail::require_bytes(budget, h.n * h.t * 4, "signal samples");
    Dictionary dict;
    dict.t_points = h.t;
    detail::read_params(is, dict.params, h.n);
    dict.signals.resize(h.n * h.t);
    io::read_le_array<float>(is, dict.signals, "signal samples");
    io::expect_eof(is, "signal samples");
    dict.recompute_norms();
    return dict;
}

inline CompressedDictionary load_compressed_dictionary(const std::string& path) {
    auto is = io::open_in(path);
    const auto h = detail::read_dict_header(is);
    if (!(h.flags & dictionary_flag_compressed)) throw FormatError("flags: expected a compressed dictionary, found raw");
    CompressedDictionary c;
    c.t_points = h.t;
    c.rank = io::read_le<std::uint32_t>(is, "rank");
    if (c.rank == 0 || c.rank > h.t) throw FormatError("rank out of range");
    auto budget = detail::remaining_bytes(is);
    detail::require_bytes(budget, std::uint64_t{h.t} * c.rank * 8, "basis");
    detail::require_bytes(budget, h.n * c.rank * 4, "coordinates");
    detail::require_bytes(budget, h.n * 16, "tissue parameters");
    c.basis.resize(h.t, static_cast<Eigen::Index>(c.rank));
    for (Eigen::Index r = 0; r < c.basis.rows(); ++r)
        for (Eigen::Index k = 0; k < c.basis.cols(); ++k) c.basis(r, k) = io::read_le<double>(is, "basis");
    std::vector<float> coords(h.n * c.rank);
    io::read_le_array<float>(is, coords, "coordinates");
    c.coords.assign(coords.begin(), coords.end());
    detail::read_params(is, c.params, h.n);
    io::expect_eof(is, "tissue parameters");
    return c;
}

/// "index,t1_ms,t2_ms" rows, one per entry.
inline void save_dictionary_index_csv(const std::vector<TissueParams>& params, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "index,t1_ms,t2_ms\n";
    os.precision(10);
    for (std::size_t i = 0; i < params.size(); ++i) os << i << ',' << params[i].t1_ms << ',' << params[i].t2_ms << '\n';
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace mrf
