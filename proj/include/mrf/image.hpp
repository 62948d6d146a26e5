#pragma once

// Spatial containers and their on-disk formats:
//   MRFI  fingerprint image  "MRFI" | u32 w | u32 h | u32 T | f32 samples, pixel-major
//   MRFM  parameter map      "MRFM" | u32 w | u32 h | u32 reserved | f32 values, row-major
//   PGM   8-bit binary (P5) label maps and previews

#include <mrf/binary_io.hpp>
#include <mrf/error.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mrf {

/// H x W grid of T-sample magnitude signals, pixel (x, y) at index y*W + x.
struct FingerprintImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t t_points = 0;
    std::vector<float> data;

    FingerprintImage() = default;
    FingerprintImage(std::size_t w, std::size_t h, std::size_t t)
        : width(w), height(h), t_points(t), data(w * h * t, 0.0f) {}

    std::size_t pixels() const noexcept { return width * height; }

    std::span<float> pixel(std::size_t i) { return {data.data() + i * t_points, t_points}; }
    std::span<const float> pixel(std::size_t i) const { return {data.data() + i * t_points, t_points}; }
    std::span<const float> pixel(std::size_t x, std::size_t y) const { return pixel(y * width + x); }

    friend bool operator==(const FingerprintImage&, const FingerprintImage&) = default;
};

/// Per-pixel T1/T2 estimates in ms; pixels with mask == 0 hold 0.
struct TissueMaps {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> t1;
    std::vector<double> t2;
    std::vector<std::uint8_t> mask;

    TissueMaps() = default;
    TissueMaps(std::size_t w, std::size_t h) : width(w), height(h), t1(w * h, 0.0), t2(w * h, 0.0), mask(w * h, 0) {}

    std::size_t pixels() const noexcept { return width * height; }

    friend bool operator==(const TissueMaps&, const TissueMaps&) = default;
};

inline void save_image(const FingerprintImage& img, const std::string& path) {
    auto os = io::open_out(path);
    io::write_magic(os, "MRFI");
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(img.width));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(img.height));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(img.t_points));
    io::write_le_array<float>(os, img.data);
    io::finish_write(os, path);
}

inline FingerprintImage load_image(const std::string& path) {
    auto is = io::open_in(path);
    io::expect_magic(is, "MRFI");
    const auto w = io::read_le<std::uint32_t>(is, "width");
    const auto h = io::read_le<std::uint32_t>(is, "height");
    const auto t = io::read_le<std::uint32_t>(is, "time points");
    if (w == 0 || h == 0 || t == 0) throw FormatError("image header has a zero dimension");
    const auto here = is.tellg();
    is.seekg(0, std::ios::end);
    const auto avail = static_cast<std::uint64_t>(is.tellg() - here);
    is.seekg(here);
    if (avail < std::uint64_t{w} * h * t * 4) throw FormatError("truncated file while reading samples");
    FingerprintImage img(w, h, t);
    io::read_le_array<float>(is, img.data, "samples");
    io::expect_eof(is, "samples");
    return img;
}

inline void save_map(std::size_t width, std::size_t height, std::span<const double> values, const std::string& path) {
    if (values.size() != width * height) throw DomainError("map size does not match dimensions");
    auto os = io::open_out(path);
    io::write_magic(os, "MRFM");
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(width));
    io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(height));
    io::write_le<std::uint32_t>(os, 0);
    for (double v : values) io::write_le<float>(os, static_cast<float>(v));
    io::finish_write(os, path);
}

struct LoadedMap {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> values;
};

inline LoadedMap load_map(const std::string& path) {
    auto is = io::open_in(path);
    io::expect_magic(is, "MRFM");
    LoadedMap m;
    m.width = io::read_le<std::uint32_t>(is, "width");
    m.height = io::read_le<std::uint32_t>(is, "height");
    (void)io::read_le<std::uint32_t>(is, "reserved");
    if (m.width == 0 || m.height == 0) throw FormatError("map header has a zero dimension");
    std::vector<float> raw(m.width * m.height);
    io::read_le_array<float>(is, raw, "map values");
    io::expect_eof(is, "map values");
    m.values.assign(raw.begin(), raw.end());
    return m;
}

inline void save_pgm(std::size_t width, std::size_t height, std::span<const std::uint8_t> pixels,
                     const std::string& path, unsigned maxval = 255) {
    if (pixels.size() != width * height) throw DomainError("PGM size does not match dimensions");
    auto os = io::open_out(path);
    os << "P5\n" << width << ' ' << height << '\n' << maxval << '\n';
    os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    io::finish_write(os, path);
}

struct LoadedPgm {
    std::size_t width = 0;
    std::size_t height = 0;
    unsigned maxval = 0;
    std::vector<std::uint8_t> pixels;
};

inline LoadedPgm load_pgm(const std::string& path) {
    auto is = io::open_in(path);
    std::string magic;
    LoadedPgm p;
    if (!(is >> magic) || magic != "P5") throw FormatError("bad magic: expected P5 PGM");
    if (!(is >> p.width >> p.height >> p.maxval)) throw FormatError("truncated PGM header");
    if (p.maxval == 0 || p.maxval > 255) throw FormatError("PGM maxval must be in [1, 255]");
    is.get();
    p.pixels.resize(p.width * p.height);
    if (!is.read(reinterpret_cast<char*>(p.pixels.data()), static_cast<std::streamsize>(p.pixels.size()))) {
        throw FormatError("truncated file while reading PGM pixels");
    }
    return p;
}

/// Linear preview: 0 -> 0, max -> 255.
inline std::vector<std::uint8_t> to_preview(std::span<const double> values) {
    double hi = 0.0;
    for (double v : values) hi = std::max(hi, std::abs(v));
    std::vector<std::uint8_t> out(values.size(), 0);
    if (hi <= 0.0) return out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(std::abs(values[i]) / hi, 0.0, 1.0) * 255.0));
    }
    return out;
}

}  // namespace mrf
