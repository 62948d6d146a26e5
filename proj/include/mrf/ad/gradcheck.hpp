#pragma once

// Central finite differences in double precision against the analytic
// gradients produced by backward().

#include <mrf/ad/parameters.hpp>
#include <mrf/rng.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace mrf::ad {

/// Evaluates the loss at the current parameter values. When `with_grad` is
/// set it must also leave d(loss)/d(param) in the parameter gradients.
using LossFn = std::function<double(ParameterSet<double>&, bool with_grad)>;

struct GradCheckOptions {
    double tolerance = 1e-4;
    double eps = 1e-3;
    std::size_t max_per_tensor = 0;  // 0 checks every entry
    std::uint64_t seed = 0;
    double denom_floor = 1e-8;
    int retries = 3;  // extra attempts at eps / 10, eps / 100, ...
};

struct GradCheckEntry {
    std::string name;
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;

    double max_rel_error() const {
        double m = 0.0;
        for (const auto& e : entries) m = std::max(m, e.max_rel_error);
        return m;
    }
    bool passed() const { return max_rel_error() < tolerance; }
};

namespace detail {

inline double rel_error(double a, double n, double floor) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

}  // namespace detail

/// An entry that misses the tolerance at eps is retried at eps / 10,
/// eps / 100, ... and keeps its best agreement: a ReLU or max-pool switch inside
/// [w - eps, w + eps] spoils one step size, a wrong backward rule spoils all.
inline GradCheckReport gradient_check(ParameterSet<double>& params, const LossFn& loss,
                                      const GradCheckOptions& opt = {}) {
    params.zero_grad();
    loss(params, true);
    std::vector<Tensor<double>> analytic;
    for (std::size_t i = 0; i < params.size(); ++i) analytic.push_back(params.grad(i));

    GradCheckReport rep;
    rep.tolerance = opt.tolerance;
    auto rng = make_rng(opt.seed, 0x6C);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params.value(i);
        std::vector<std::size_t> idx(w.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (opt.max_per_tensor > 0 && idx.size() > opt.max_per_tensor) {
            for (std::size_t k = 0; k < opt.max_per_tensor; ++k) {
                std::swap(idx[k], idx[k + uniform_index(rng, idx.size() - k)]);
            }
            idx.resize(opt.max_per_tensor);
            std::sort(idx.begin(), idx.end());
        }
        GradCheckEntry e;
        e.name = params.name(i);
        for (std::size_t k : idx) {
            const double orig = w[k];
            const double a = analytic[i][k];
            double best_rel = 0.0, best_num = 0.0;
            double eps = opt.eps;
            for (int attempt = 0; attempt <= opt.retries; ++attempt, eps /= 10.0) {
                w[k] = orig + eps;
                const double fp = loss(params, false);
                w[k] = orig - eps;
                const double fm = loss(params, false);
                w[k] = orig;
                const double num = (fp - fm) / (2.0 * eps);
                const double rel = detail::rel_error(a, num, opt.denom_floor);
                if (attempt == 0 || rel < best_rel) {
                    best_rel = rel;
                    best_num = num;
                }
                if (rel < opt.tolerance) break;
            }
            ++e.checked;
            if (e.checked == 1 || best_rel > e.max_rel_error) {
                e.max_rel_error = best_rel;
                e.worst_index = k;
                e.analytic = a;
                e.numeric = best_num;
            }
        }
        rep.entries.push_back(e);
    }
    return rep;
}

}  // namespace mrf::ad
