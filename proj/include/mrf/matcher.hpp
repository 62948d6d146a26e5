#pragma once

// Exhaustive normalized-correlation dictionary matching.
//
// Full matching screens every entry with a single-precision blocked GEMM,
// keeps the entries whose screened score lies within the f32 error bound of
// the running best, and rescores those candidates in double precision. The
// winner is therefore the double-precision argmax regardless of blocking or
// batch shape, and ties go to the lowest entry index.

#include <mrf/dictionary.hpp>
#include <mrf/error.hpp>
#include <mrf/image.hpp>
#include <mrf/parallel.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace mrf {

struct MatchResult {
    double t1_ms = 0.0;
    double t2_ms = 0.0;
    double score = 0.0;
    std::size_t entry_index = 0;

    friend bool operator==(const MatchResult&, const MatchResult&) = default;
};

/// Background threshold on the probe L2 norm.
inline constexpr double degenerate_norm = 1e-12;

namespace detail {

template <class T>
double l2_norm(std::span<const T> v) {
    double acc = 0.0;
    for (T x : v) acc += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(acc);
}

using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace detail

class FullMatcher {
public:
    explicit FullMatcher(std::shared_ptr<const Dictionary> dict) : dict_(std::move(dict)) {
        if (!dict_ || dict_->size() == 0) throw DomainError("matcher needs a non-empty dictionary");
        inv_norms_.resize(dict_->size());
        for (std::size_t i = 0; i < dict_->size(); ++i) {
            inv_norms_[i] = dict_->norms[i] > 0.0 ? static_cast<float>(1.0 / dict_->norms[i]) : 0.0f;
        }
        const double u = std::ldexp(1.0, -24);
        slack_ = 2.0 * static_cast<double>(dict_->t_points + 8) * u + 1e-7;
    }

    const Dictionary& dictionary() const noexcept { return *dict_; }
    std::size_t t_points() const noexcept { return dict_->t_points; }

    MatchResult match(std::span<const double> probe) const {
        auto r = match_batch(std::vector<std::span<const double>>{probe});
        if (!r[0]) throw DegenerateSignalError("probe signal is all zero");
        return *r[0];
    }

    /// One result per probe; std::nullopt marks a degenerate (all-zero) probe.
    std::vector<std::optional<MatchResult>> match_batch(const std::vector<std::span<const double>>& probes) const {
        const std::size_t t = dict_->t_points;
        const std::size_t nb = probes.size();
        std::vector<std::optional<MatchResult>> out(nb);
        if (nb == 0) return out;

        // Normalized probes: double for rescoring, float for screening.
        std::vector<std::vector<double>> unit(nb);
        detail::RowMajorF screen(static_cast<Eigen::Index>(nb), static_cast<Eigen::Index>(t));
        std::vector<char> valid(nb, 0);
        for (std::size_t b = 0; b < nb; ++b) {
            if (probes[b].size() != t) throw DomainError("probe length does not match dictionary time points");
            const double n = detail::l2_norm(probes[b]);
            if (!(n >= degenerate_norm) || !std::isfinite(n)) {
                screen.row(static_cast<Eigen::Index>(b)).setZero();
                continue;
            }
            valid[b] = 1;
            unit[b].resize(t);
            for (std::size_t k = 0; k < t; ++k) {
                unit[b][k] = probes[b][k] / n;
                screen(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k)) = static_cast<float>(unit[b][k]);
            }
        }

        struct Candidate {
            std::size_t index;
            float score;
        };
        std::vector<std::vector<Candidate>> cands(nb);
        std::vector<float> best(nb, -1.0f);
        const auto slack = static_cast<float>(slack_);

        const std::size_t n_entries = dict_->size();
        constexpr std::size_t block = 1024;
        Eigen::MatrixXf scores;
        for (std::size_t start = 0; start < n_entries; start += block) {
            const std::size_t rows = std::min(block, n_entries - start);
            Eigen::Map<const detail::RowMajorF> d(dict_->signals.data() + start * t, static_cast<Eigen::Index>(rows),
                                                  static_cast<Eigen::Index>(t));
            scores.noalias() = d * screen.transpose();  // rows x nb
            for (std::size_t b = 0; b < nb; ++b) {
                if (!valid[b]) continue;
                auto& list = cands[b];
                float& top = best[b];
                for (std::size_t r = 0; r < rows; ++r) {
                    const float s = std::abs(scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(b))) *
                                    inv_norms_[start + r];
                    if (s < top - slack) continue;
                    if (s > top) {
                        top = s;
                        std::erase_if(list, [&](const Candidate& c) { return c.score < top - slack; });
                    }
                    list.push_back({start + r, s});
                }
            }
        }

        for (std::size_t b = 0; b < nb; ++b) {
            if (!valid[b]) continue;
            double best_score = -1.0;
            std::size_t best_index = 0;
            for (const auto& c : cands[b]) {
                if (c.score < best[b] - slack) continue;
                const double s = exact_score(c.index, unit[b]);
                if (s > best_score) {  // candidates are in index order, so ties keep the lowest index
                    best_score = s;
                    best_index = c.index;
                }
            }
            const auto& p = dict_->params[best_index];
            out[b] = MatchResult{p.t1_ms, p.t2_ms, std::clamp(best_score, 0.0, 1.0), best_index};
        }
        return out;
    }

    /// Double-precision |<unit probe, entry / ||entry||>|.
    double exact_score(std::size_t index, std::span<const double> unit_probe) const {
        const auto s = dict_->signal(index);
        double acc = 0.0;
        for (std::size_t k = 0; k < s.size(); ++k) acc += static_cast<double>(s[k]) * unit_probe[k];
        const double n = dict_->norms[index];
        return n > 0.0 ? std::abs(acc) / n : 0.0;
    }

private:
    std::shared_ptr<const Dictionary> dict_;
    std::vector<float> inv_norms_;
    double slack_ = 0.0;
};

/// Matching in the r-dimensional SVD subspace: the normalized probe is
/// projected by the basis and compared by cosine with every stored coordinate row.
class CompressedMatcher {
public:
    explicit CompressedMatcher(std::shared_ptr<const CompressedDictionary> dict) : dict_(std::move(dict)) {
        if (!dict_ || dict_->size() == 0) throw DomainError("matcher needs a non-empty dictionary");
        const std::size_t r = dict_->rank;
        coords_.resize(dict_->size() * r);
        for (std::size_t i = 0; i < dict_->size(); ++i) {
            const auto c = dict_->coord(i);
            const double n = detail::l2_norm(c);
            const double inv = n > 0.0 ? 1.0 / n : 0.0;
            for (std::size_t k = 0; k < r; ++k) coords_[i * r + k] = static_cast<double>(c[k]) * inv;
        }
        basis_t_ = dict_->basis.transpose();
    }

    const CompressedDictionary& dictionary() const noexcept { return *dict_; }
    std::size_t t_points() const noexcept { return dict_->t_points; }

    MatchResult match(std::span<const double> probe) const {
        auto r = match_batch(std::vector<std::span<const double>>{probe});
        if (!r[0]) throw DegenerateSignalError("probe signal is all zero");
        return *r[0];
    }

    std::vector<std::optional<MatchResult>> match_batch(const std::vector<std::span<const double>>& probes) const {
        const std::size_t t = dict_->t_points;
        const std::size_t r = dict_->rank;
        std::vector<std::optional<MatchResult>> out(probes.size());
        Eigen::VectorXd p(static_cast<Eigen::Index>(t));
        for (std::size_t b = 0; b < probes.size(); ++b) {
            if (probes[b].size() != t) throw DomainError("probe length does not match dictionary time points");
            const double n = detail::l2_norm(probes[b]);
            if (!(n >= degenerate_norm) || !std::isfinite(n)) continue;
            for (std::size_t k = 0; k < t; ++k) p(static_cast<Eigen::Index>(k)) = probes[b][k] / n;
            Eigen::VectorXd q = basis_t_ * p;
            const double qn = q.norm();
            if (!(qn > 0.0)) continue;
            q /= qn;
            double best_score = -1.0;
            std::size_t best_index = 0;
            const double* c = coords_.data();
            for (std::size_t i = 0; i < dict_->size(); ++i, c += r) {
                double acc = 0.0;
                for (std::size_t k = 0; k < r; ++k) acc += c[k] * q(static_cast<Eigen::Index>(k));
                acc = std::abs(acc);
                if (acc > best_score) {
                    best_score = acc;
                    best_index = i;
                }
            }
            const auto& pr = dict_->params[best_index];
            out[b] = MatchResult{pr.t1_ms, pr.t2_ms, std::clamp(best_score, 0.0, 1.0), best_index};
        }
        return out;
    }

private:
    std::shared_ptr<const CompressedDictionary> dict_;
    std::vector<double> coords_;  // unit-normalized rows
    Eigen::MatrixXd basis_t_;
};

inline MatchResult match_full(const Dictionary& dict, std::span<const double> signal) {
    FullMatcher m(std::shared_ptr<const Dictionary>(&dict, [](const Dictionary*) {}));
    return m.match(signal);
}

inline MatchResult match_compressed(const CompressedDictionary& dict, std::span<const double> signal) {
    CompressedMatcher m(std::shared_ptr<const CompressedDictionary>(&dict, [](const CompressedDictionary*) {}));
    return m.match(signal);
}

struct ReconstructionResult {
    TissueMaps maps;
    std::vector<std::size_t> entry_index;  // per pixel; meaningful where maps.mask != 0
    std::size_t degenerate_pixels = 0;      // requested by the mask but all-zero, hence masked out
};

/// Per-pixel matching over `mask` (empty mask = every pixel). Pixels with
/// norm below degenerate_norm are masked out automatically; those that an
/// explicit mask asked for are counted in degenerate_pixels.
template <class Matcher>
ReconstructionResult reconstruct_maps(const Matcher& matcher, const FingerprintImage& image,
                                      std::span<const std::uint8_t> mask = {}, std::size_t threads = 1) {
    if (image.t_points != matcher.t_points()) throw DomainError("image channels do not match dictionary time points");
    if (!mask.empty() && mask.size() != image.pixels()) throw DomainError("mask size does not match image");
    ReconstructionResult res;
    res.maps = TissueMaps(image.width, image.height);
    res.entry_index.assign(image.pixels(), 0);

    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < image.pixels(); ++i)
        if (mask.empty() || mask[i]) todo.push_back(i);

    std::vector<char> degenerate(image.pixels(), 0);
    constexpr std::size_t batch = 64;
    const std::size_t n_batches = (todo.size() + batch - 1) / batch;
    parallel_for(n_batches, threads, [&](std::size_t bb, std::size_t be) {
        std::vector<std::vector<double>> buf(batch, std::vector<double>(image.t_points));
        for (std::size_t bi = bb; bi < be; ++bi) {
            const std::size_t start = bi * batch;
            const std::size_t count = std::min(batch, todo.size() - start);
            std::vector<std::span<const double>> probes;
            for (std::size_t j = 0; j < count; ++j) {
                const auto px = image.pixel(todo[start + j]);
                std::copy(px.begin(), px.end(), buf[j].begin());
                probes.emplace_back(buf[j]);
            }
            const auto results = matcher.match_batch(probes);
            for (std::size_t j = 0; j < count; ++j) {
                const std::size_t pix = todo[start + j];
                if (!results[j]) {
                    degenerate[pix] = 1;
                    continue;
                }
                res.maps.t1[pix] = results[j]->t1_ms;
                res.maps.t2[pix] = results[j]->t2_ms;
                res.maps.mask[pix] = 1;
                res.entry_index[pix] = results[j]->entry_index;
            }
        }
    });
    if (!mask.empty()) {
        for (std::size_t i : todo) res.degenerate_pixels += degenerate[i] ? 1 : 0;
    }
    return res;
}

}  // namespace mrf
