#pragma once

// Reconstruction metrics: mean absolute error in percent of the map
// maximum, per-region breakdowns, and absolute error maps.

#include <mrf/error.hpp>
#include <mrf/image.hpp>
#include <mrf/phantom.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace mrf {

struct MaeAccumulator {
    double sum_abs = 0.0;
    double max_truth = 0.0;
    std::size_t count = 0;

    double percent() const {
        if (count == 0) throw DomainError("MAE over an empty mask");
        if (!(max_truth > 0.0)) throw DomainError("MAE normalizer max(truth) is zero");
        return sum_abs / static_cast<double>(count) / max_truth * 100.0;
    }
};

inline MaeAccumulator mae_accumulate(std::span<const double> truth, std::span<const double> pred,
                                     std::span<const std::uint8_t> mask) {
    if (truth.size() != pred.size() || truth.size() != mask.size()) throw DomainError("map shapes differ");
    MaeAccumulator acc;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!mask[i]) continue;
        acc.sum_abs += std::abs(truth[i] - pred[i]);
        acc.max_truth = std::max(acc.max_truth, truth[i]);
        ++acc.count;
    }
    return acc;
}

/// (1/N) * sum_i |truth_i - pred_i| / max(truth) * 100 over masked pixels,
/// max taken over the masked truth.
inline double mae_percent(std::span<const double> truth, std::span<const double> pred,
                          std::span<const std::uint8_t> mask) {
    return mae_accumulate(truth, pred, mask).percent();
}

struct RegionRow {
    std::string name;
    bool present = false;
    std::size_t pixels = 0;
    double t1_mae_pct = 0.0;
    double t2_mae_pct = 0.0;
    double t1_sum_abs = 0.0;
    double t2_sum_abs = 0.0;
};

/// Rows: SKULL-STRIPPED (all foreground), GM, WM, CSF.
struct RegionReport {
    std::vector<RegionRow> rows;

    const RegionRow& row(const std::string& name) const {
        for (const auto& r : rows)
            if (r.name == name) return r;
        throw DomainError("no region row named " + name);
    }
};

inline RegionReport region_report(const Phantom& ph, const TissueMaps& pred) {
    if (pred.width != ph.width || pred.height != ph.height) throw DomainError("prediction and phantom dimensions differ");
    auto make_row = [&](const std::string& name, auto&& member) {
        std::vector<std::uint8_t> mask(ph.pixels());
        for (std::size_t i = 0; i < ph.pixels(); ++i) mask[i] = member(ph.label(i)) ? 1 : 0;
        RegionRow row;
        row.name = name;
        const auto a1 = mae_accumulate(ph.t1, pred.t1, mask);
        const auto a2 = mae_accumulate(ph.t2, pred.t2, mask);
        row.pixels = a1.count;
        row.present = a1.count > 0;
        row.t1_sum_abs = a1.sum_abs;
        row.t2_sum_abs = a2.sum_abs;
        if (row.present) {
            row.t1_mae_pct = a1.percent();
            row.t2_mae_pct = a2.percent();
        }
        return row;
    };
    RegionReport rep;
    rep.rows.push_back(make_row("SKULL-STRIPPED", [](Region r) { return r != Region::Background; }));
    for (Region reg : tissue_regions) rep.rows.push_back(make_row(region_name(reg), [reg](Region r) { return r == reg; }));
    return rep;
}

/// |truth - pred| where mask is set, 0 elsewhere.
inline std::vector<double> error_map(std::span<const double> truth, std::span<const double> pred,
                                     std::span<const std::uint8_t> mask) {
    if (truth.size() != pred.size() || truth.size() != mask.size()) throw DomainError("map shapes differ");
    std::vector<double> out(truth.size(), 0.0);
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (mask[i]) out[i] = std::abs(truth[i] - pred[i]);
    return out;
}

struct MaeSummary {
    double t1_mae_pct = 0.0;
    double t2_mae_pct = 0.0;
};

/// Skull-stripped T1/T2 MAE% of `pred` against the phantom.
inline MaeSummary skull_stripped_mae(const Phantom& ph, const TissueMaps& pred) {
    const auto mask = ph.foreground_mask();
    return {mae_percent(ph.t1, pred.t1, mask), mae_percent(ph.t2, pred.t2, mask)};
}

inline std::string format_pct(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << v;
    return os.str();
}

struct MethodRow {
    std::string method;
    std::string n;  // channel count, patch size, etc.; may be empty
    double t1_mae_pct = 0.0;
    double t2_mae_pct = 0.0;
};

inline void write_method_csv(const std::vector<MethodRow>& rows, const std::string& key_name, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "method," << key_name << ",t1_mae_pct,t2_mae_pct\n";
    for (const auto& r : rows) {
        os << r.method << ',' << r.n << ',' << format_pct(r.t1_mae_pct) << ',' << format_pct(r.t2_mae_pct) << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

inline void write_region_csv(const RegionReport& rep, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "region,t1_mae_pct,t2_mae_pct,pixels\n";
    for (const auto& r : rep.rows) {
        if (!r.present) {
            os << r.name << ",absent,absent,0\n";
            continue;
        }
        os << r.name << ',' << format_pct(r.t1_mae_pct) << ',' << format_pct(r.t2_mae_pct) << ',' << r.pixels << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

/// Error maps in MRFM plus 8-bit previews: <prefix>_t1_error.{mrfm,pgm}, same for t2.
inline void write_error_maps(const Phantom& ph, const TissueMaps& pred, const std::string& prefix) {
    const auto mask = ph.foreground_mask();
    const auto e1 = error_map(ph.t1, pred.t1, mask);
    const auto e2 = error_map(ph.t2, pred.t2, mask);
    save_map(ph.width, ph.height, e1, prefix + "_t1_error.mrfm");
    save_map(ph.width, ph.height, e2, prefix + "_t2_error.mrfm");
    save_pgm(ph.width, ph.height, to_preview(e1), prefix + "_t1_error.pgm");
    save_pgm(ph.width, ph.height, to_preview(e2), prefix + "_t2_error.pgm");
}

inline void save_maps(const TissueMaps& maps, const std::string& prefix) {
    save_map(maps.width, maps.height, maps.t1, prefix + "_t1.mrfm");
    save_map(maps.width, maps.height, maps.t2, prefix + "_t2.mrfm");
    save_pgm(maps.width, maps.height, to_preview(maps.t1), prefix + "_t1.pgm");
    save_pgm(maps.width, maps.height, to_preview(maps.t2), prefix + "_t2.pgm");
}

}  // namespace mrf
