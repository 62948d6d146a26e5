#pragma once

// Truncated SVD of tall data matrices, shared by dictionary compression and
// PCA channel reduction.

#include <mrf/error.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>

namespace mrf::linalg {

struct TruncatedSvd {
    Eigen::MatrixXd basis;            // cols x rank, orthonormal columns (right singular vectors)
    Eigen::VectorXd singular_values;  // all min(rows, cols) values, descending
    double total_energy = 0.0;        // squared Frobenius norm

    double energy_fraction(std::size_t rank) const {
        if (total_energy <= 0.0) return 1.0;
        return singular_values.head(static_cast<Eigen::Index>(rank)).squaredNorm() / total_energy;
    }
};

enum class SvdRoute { Automatic, Direct, Gram };

/// Row source for the streaming route: fills `row` (length cols) for index i.
using RowFn = std::function<void(std::size_t i, std::span<double> row)>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

// First nonzero component of every basis vector made positive.
inline void fix_signs(Eigen::MatrixXd& basis) {
    for (Eigen::Index c = 0; c < basis.cols(); ++c) {
        for (Eigen::Index r = 0; r < basis.rows(); ++r) {
            const double v = basis(r, c);
            if (std::abs(v) > 1e-12) {
                if (v < 0.0) basis.col(c) *= -1.0;
                break;
            }
        }
    }
}

inline TruncatedSvd from_gram(const Eigen::MatrixXd& gram, std::size_t rows, std::size_t rank) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    if (eig.info() != Eigen::Success) throw DomainError("eigendecomposition failed");
    const Eigen::Index n = gram.rows();
    const Eigen::Index kept = std::min<Eigen::Index>(n, static_cast<Eigen::Index>(rows));
    TruncatedSvd out;
    out.singular_values.resize(kept);
    // Eigen returns ascending eigenvalues.
    for (Eigen::Index i = 0; i < kept; ++i) {
        out.singular_values(i) = std::sqrt(std::max(0.0, eig.eigenvalues()(n - 1 - i)));
    }
    out.basis.resize(n, static_cast<Eigen::Index>(rank));
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(rank); ++c) {
        out.basis.col(c) = eig.eigenvectors().col(n - 1 - c);
    }
    out.total_energy = gram.trace();
    return out;
}

}  // namespace detail

/// Direct route: Householder QR of the tall matrix, then a divide-and-conquer
/// SVD of the small triangular factor.
inline TruncatedSvd truncated_svd_direct(const Eigen::MatrixXd& a, std::size_t rank) {
    const auto rows = static_cast<std::size_t>(a.rows());
    const auto cols = static_cast<std::size_t>(a.cols());
    if (rank < 1 || rank > std::min(rows, cols)) throw DomainError("SVD rank out of range");
    Eigen::MatrixXd small;
    if (a.rows() > a.cols()) {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
        small = qr.matrixQR().topRows(a.cols()).triangularView<Eigen::Upper>();
    } else {
        small = a;
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(small, Eigen::ComputeThinV);
    TruncatedSvd out;
    out.singular_values = svd.singularValues();
    out.basis = svd.matrixV().leftCols(static_cast<Eigen::Index>(rank));
    out.total_energy = a.squaredNorm();
    detail::fix_signs(out.basis);
    return out;
}

/// Streaming route: accumulates the cols x cols Gram matrix row block by row
/// block, so the full matrix is never materialized in double precision.
inline TruncatedSvd truncated_svd_gram(std::size_t rows, std::size_t cols, const RowFn& row_fn,
                                       std::size_t rank) {
    if (rank < 1 || rank > std::min(rows, cols)) throw DomainError("SVD rank out of range");
    constexpr std::size_t block = 512;
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cols), static_cast<Eigen::Index>(cols));
    RowMatrix buf(static_cast<Eigen::Index>(block), static_cast<Eigen::Index>(cols));
    for (std::size_t start = 0; start < rows; start += block) {
        const std::size_t count = std::min(block, rows - start);
        for (std::size_t i = 0; i < count; ++i) {
            row_fn(start + i, std::span<double>(buf.row(static_cast<Eigen::Index>(i)).data(), cols));
        }
        auto chunk = buf.topRows(static_cast<Eigen::Index>(count));
        gram.selfadjointView<Eigen::Lower>().rankUpdate(chunk.transpose());
    }
    gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
    auto out = detail::from_gram(gram, rows, rank);
    detail::fix_signs(out.basis);
    return out;
}

inline constexpr std::size_t direct_route_limit = 20'000'000;  // rows*cols doubles

inline TruncatedSvd truncated_svd(std::size_t rows, std::size_t cols, const RowFn& row_fn, std::size_t rank,
                                  SvdRoute route = SvdRoute::Automatic) {
    if (route == SvdRoute::Automatic) route = rows * cols <= direct_route_limit ? SvdRoute::Direct : SvdRoute::Gram;
    if (route == SvdRoute::Gram) return truncated_svd_gram(rows, cols, row_fn, rank);
    RowMatrix a(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows; ++i) row_fn(i, std::span<double>(a.row(static_cast<Eigen::Index>(i)).data(), cols));
    return truncated_svd_direct(a, rank);
}

}  // namespace mrf::linalg
