#pragma once

// Channel (time point) reduction: by mean attention score, at random, or by
// projection onto principal components.

#include <mrf/linalg.hpp>
#include <mrf/nn/conv_ica.hpp>
#include <mrf/nn/patches.hpp>
#include <mrf/parallel.hpp>

#include <fstream>
#include <iomanip>
#include <numeric>

namespace mrf::nn {

/// Per-channel attention score averaged over every patch of `set`.
inline std::vector<double> mean_attention_scores(const ConvIca& model, const PatchSet& set, double input_scale,
                                                 std::size_t threads = 1) {
    if (set.empty()) throw DomainError("empty patch set");
    const std::size_t C = model.config().channels;
    const std::size_t chunk = 256, chunks = (set.size() + chunk - 1) / chunk;
    std::vector<std::vector<double>> partial(chunks, std::vector<double>(C, 0.0));
    parallel_for(chunks, threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t c = b; c < e; ++c) {
            std::vector<std::size_t> idx(std::min(chunk, set.size() - c * chunk));
            std::iota(idx.begin(), idx.end(), c * chunk);
            const auto r = channel_attention_forward(gather_batch(set, idx, input_scale), model);
            for (std::size_t k = 0; k < idx.size(); ++k)
                for (std::size_t ch = 0; ch < C; ++ch) partial[c][ch] += r.alpha[k * C + ch];
        }
    });
    std::vector<double> mean(C, 0.0);
    for (const auto& p : partial)
        for (std::size_t ch = 0; ch < C; ++ch) mean[ch] += p[ch];
    for (auto& v : mean) v /= static_cast<double>(set.size());
    return mean;
}

/// Indices of the n largest scores (ties to the lower index), ascending.
inline std::vector<std::size_t> select_channels_attention(std::span<const double> scores, std::size_t n) {
    if (n == 0 || n > scores.size()) {
        throw DomainError("cannot select " + std::to_string(n) + " of " + std::to_string(scores.size()) + " channels");
    }
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Uniform sample without replacement, ascending.
inline std::vector<std::size_t> select_channels_random(std::size_t channels, std::size_t n, std::uint64_t seed) {
    if (n == 0 || n > channels) {
        throw DomainError("cannot select " + std::to_string(n) + " of " + std::to_string(channels) + " channels");
    }
    std::vector<std::size_t> idx(channels);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto rng = make_rng(seed, 0x5E1EC7);
    for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + uniform_index(rng, channels - i)]);
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline FingerprintImage select_image_channels(const FingerprintImage& img, std::span<const std::size_t> channels) {
    for (auto c : channels)
        if (c >= img.t_points) throw DomainError("channel index " + std::to_string(c) + " out of range");
    FingerprintImage out(img.width, img.height, channels.size());
    for (std::size_t i = 0; i < img.pixels(); ++i) {
        const auto src = img.pixel(i);
        auto dst = out.pixel(i);
        for (std::size_t k = 0; k < channels.size(); ++k) dst[k] = src[channels[k]];
    }
    return out;
}

struct Pca {
    Eigen::VectorXd mean;        // C
    Eigen::MatrixXd components;  // C x n, orthonormal columns
    Eigen::VectorXd variances;   // all component variances, descending
    double total_variance = 0.0;

    std::size_t input_dim() const { return static_cast<std::size_t>(components.rows()); }
    std::size_t output_dim() const { return static_cast<std::size_t>(components.cols()); }

    double explained_fraction(std::size_t k) const {
        if (total_variance <= 0.0) return 1.0;
        return variances.head(static_cast<Eigen::Index>(std::min<std::size_t>(k, variances.size()))).sum() /
               total_variance;
    }

    Eigen::VectorXd project(std::span<const float> x) const {
        Eigen::VectorXd v(mean.size());
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = x[static_cast<std::size_t>(i)] - mean(i);
        return components.transpose() * v;
    }
};

/// Principal components of the rows (each of length `cols`), centered on
/// the per-channel mean.
inline Pca pca_fit(std::size_t rows, std::size_t cols, const linalg::RowFn& row_fn, std::size_t n) {
    if (n == 0 || n > cols) {
        throw DomainError("cannot keep " + std::to_string(n) + " of " + std::to_string(cols) + " components");
    }
    if (rows < 2) throw DomainError("PCA needs at least two samples");
    Pca pca;
    pca.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cols));
    std::vector<double> buf(cols);
    for (std::size_t r = 0; r < rows; ++r) {
        row_fn(r, buf);
        for (std::size_t c = 0; c < cols; ++c) pca.mean(static_cast<Eigen::Index>(c)) += buf[c];
    }
    pca.mean /= static_cast<double>(rows);
    const auto centered = [&](std::size_t r, std::span<double> out) {
        row_fn(r, out);
        for (std::size_t c = 0; c < cols; ++c) out[c] -= pca.mean(static_cast<Eigen::Index>(c));
    };
    const auto svd = linalg::truncated_svd(rows, cols, centered, n);
    pca.components = svd.basis;
    const double dof = static_cast<double>(rows - 1);
    pca.variances = svd.singular_values.array().square() / dof;
    pca.total_variance = svd.total_energy / dof;
    return pca;
}

/// PCA over the masked pixels of an image.
inline Pca pca_fit_image(const FingerprintImage& img, std::span<const std::uint8_t> mask, std::size_t n) {
    std::vector<std::size_t> px;
    for (std::size_t i = 0; i < img.pixels(); ++i)
        if (mask[i]) px.push_back(i);
    return pca_fit(px.size(), img.t_points,
                   [&](std::size_t r, std::span<double> out) {
                       const auto s = img.pixel(px[r]);
                       std::copy(s.begin(), s.end(), out.begin());
                   },
                   n);
}

/// Projects masked pixels; others stay zero.
inline FingerprintImage pca_project_image(const FingerprintImage& img, const Pca& pca,
                                          std::span<const std::uint8_t> mask) {
    if (img.t_points != pca.input_dim()) throw DomainError("PCA input dimension does not match the image");
    FingerprintImage out(img.width, img.height, pca.output_dim());
    for (std::size_t i = 0; i < img.pixels(); ++i) {
        if (!mask[i]) continue;
        const auto v = pca.project(img.pixel(i));
        auto dst = out.pixel(i);
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<float>(v(static_cast<Eigen::Index>(k)));
    }
    return out;
}

inline void write_scores_csv(std::span<const double> scores, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "channel,mean_score\n" << std::setprecision(9);
    for (std::size_t i = 0; i < scores.size(); ++i) os << i << ',' << scores[i] << '\n';
    if (!os) throw IoError("write failed: " + path);
}

inline void write_indices_csv(std::span<const std::size_t> idx, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "channel\n";
    for (auto i : idx) os << i << '\n';
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace mrf::nn
