#pragma once

// Define-by-run reverse-mode autodiff over the small operator set the
// CONV-ICA network needs. Every op evaluates eagerly and records its node;
// backward() walks the nodes in reverse creation order.

#include <mrf/ad/parameters.hpp>
#include <mrf/ad/tensor.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace mrf::ad {

template <class T>
class Tape {
public:
    struct Var {
        std::size_t id = static_cast<std::size_t>(-1);
    };
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Var constant(Tensor<T> value, std::string label = "constant") {
        Node n;
        n.label = std::move(label);
        n.value = std::move(value);
        return push(std::move(n));
    }

    /// Constant that refers to `value` without copying; no gradient flows to it.
    Var alias(const Tensor<T>& value, std::string label) {
        Node n;
        n.label = std::move(label);
        n.ext_value = &value;
        return push(std::move(n));
    }

    /// The node aliases the parameter's value and accumulates into its gradient.
    Var parameter(ParameterSet<T>& params, std::size_t index) {
        Node n;
        n.label = params.name(index);
        n.ext_value = &params.value(index);
        n.ext_grad = &params.grad(index);
        n.needs_grad = true;
        return push(std::move(n));
    }

    Var parameter(ParameterSet<T>& params, const std::string& name) { return parameter(params, params.index(name)); }

    /// Reads `value`, accumulates into `grad` (used for per-shard gradient buffers).
    Var parameter(const Tensor<T>& value, Tensor<T>& grad, std::string label) {
        if (grad.shape != value.shape) throw ShapeError("gradient buffer for '" + label + "' has the wrong shape");
        Node n;
        n.label = std::move(label);
        n.ext_value = &value;
        n.ext_grad = &grad;
        n.needs_grad = true;
        return push(std::move(n));
    }

    const Tensor<T>& value(Var v) const {
        const Node& n = nodes_.at(v.id);
        return n.ext_value ? *n.ext_value : n.value;
    }

    const std::string& label(Var v) const { return nodes_.at(v.id).label; }
    std::size_t size() const noexcept { return nodes_.size(); }
    bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

    /// Gradient of the last backward() target with respect to `v` (zeros if unreached).
    Tensor<T>& grad(Var v) { return grad_of(v.id); }

    /// Arbitrary op with a caller-supplied backward rule.
    Var custom(std::string label, std::vector<Var> inputs, Tensor<T> value, BackwardFn backward) {
        return make(std::move(label), inputs, std::move(value), std::move(backward));
    }

    // ---- operators -------------------------------------------------------

    /// 3x3, stride 1, zero "same" padding. x: (B,H,W,Ci), w: (3,3,Ci,Co), b: (Co).
    Var conv2d(Var x, Var w, Var b, std::string label = "conv2d") {
        const auto& xs = value(x).shape;
        const auto& ws = value(w).shape;
        if (xs.size() != 4) shape_fail(label, "input must be (B,H,W,C), got " + shape_str(xs));
        if (ws.size() != 4 || ws[0] != 3 || ws[1] != 3 || ws[2] != xs[3]) {
            shape_fail(label, "kernel must be (3,3," + std::to_string(xs[3]) + ",Co), got " + shape_str(ws));
        }
        if (value(b).shape != Shape{ws[3]}) shape_fail(label, "bias must be (" + std::to_string(ws[3]) + ")");
        const std::size_t B = xs[0], H = xs[1], W = xs[2], Ci = xs[3], Co = ws[3];
        const std::size_t M = B * H * W, K = 9 * Ci;
        AlignedVector<T> col(M * K);
        im2col(value(x).ptr(), B, H, W, Ci, col.data());
        Tensor<T> out({B, H, W, Co});
        MapM(out.ptr(), M, Co).noalias() = CMapM(col.data(), M, K) * CMapM(value(w).ptr(), K, Co);
        MapM(out.ptr(), M, Co).rowwise() += CMapR(value(b).ptr(), Co);
        return make(std::move(label), {x, w, b}, std::move(out), [=](Tape& t, std::size_t self) {
            const auto dy = CMapM(t.grad_of(self).ptr(), M, Co);
            const Var xv = t.input(self, 0), wv = t.input(self, 1), bv = t.input(self, 2);
            AlignedVector<T> c(M * K);
            im2col(t.value(xv).ptr(), B, H, W, Ci, c.data());
            if (t.needs_grad(wv)) MapM(t.grad_of(wv.id).ptr(), K, Co).noalias() += CMapM(c.data(), M, K).transpose() * dy;
            if (t.needs_grad(bv)) MapR(t.grad_of(bv.id).ptr(), Co).noalias() += dy.colwise().sum();
            if (t.needs_grad(xv)) {
                MapM(c.data(), M, K).noalias() = dy * CMapM(t.value(wv).ptr(), K, Co).transpose();
                col2im_add(c.data(), B, H, W, Ci, t.grad_of(xv.id).ptr());
            }
        });
    }

    /// x: (B,In), w: (In,Out), b: (Out).
    Var dense(Var x, Var w, Var b, std::string label = "dense") {
        const auto& xs = value(x).shape;
        const auto& ws = value(w).shape;
        if (xs.size() != 2) shape_fail(label, "input must be (B,In), got " + shape_str(xs));
        if (ws.size() != 2 || ws[0] != xs[1]) {
            shape_fail(label, "weight must be (" + std::to_string(xs[1]) + ",Out), got " + shape_str(ws));
        }
        if (value(b).shape != Shape{ws[1]}) shape_fail(label, "bias must be (" + std::to_string(ws[1]) + ")");
        const std::size_t B = xs[0], In = ws[0], Out = ws[1];
        Tensor<T> out({B, Out});
        MapM(out.ptr(), B, Out).noalias() = CMapM(value(x).ptr(), B, In) * CMapM(value(w).ptr(), In, Out);
        MapM(out.ptr(), B, Out).rowwise() += CMapR(value(b).ptr(), Out);
        return make(std::move(label), {x, w, b}, std::move(out), [=](Tape& t, std::size_t self) {
            const auto dy = CMapM(t.grad_of(self).ptr(), B, Out);
            const Var xv = t.input(self, 0), wv = t.input(self, 1), bv = t.input(self, 2);
            if (t.needs_grad(wv))
                MapM(t.grad_of(wv.id).ptr(), In, Out).noalias() += CMapM(t.value(xv).ptr(), B, In).transpose() * dy;
            if (t.needs_grad(bv)) MapR(t.grad_of(bv.id).ptr(), Out).noalias() += dy.colwise().sum();
            if (t.needs_grad(xv))
                MapM(t.grad_of(xv.id).ptr(), B, In).noalias() += dy * CMapM(t.value(wv).ptr(), In, Out).transpose();
        });
    }

    Var relu(Var x, std::string label = "relu") {
        Tensor<T> out = value(x);
        for (auto& v : out.data) v = v < T(0) ? T(0) : v;  // NaN passes through
        return make(std::move(label), {x}, std::move(out), [](Tape& t, std::size_t self) {
            const Var xv = t.input(self, 0);
            if (!t.needs_grad(xv)) return;
            const auto& xval = t.value(xv);
            const auto& dy = t.grad_of(self);
            auto& dx = t.grad_of(xv.id);
            for (std::size_t i = 0; i < dx.size(); ++i)
                if (xval[i] > T(0)) dx[i] += dy[i];
        });
    }

    Var sigmoid(Var x, std::string label = "sigmoid") {
        Tensor<T> out = value(x);
        for (auto& v : out.data) v = logistic(v);
        return make(std::move(label), {x}, std::move(out), [](Tape& t, std::size_t self) {
            const Var xv = t.input(self, 0);
            if (!t.needs_grad(xv)) return;
            const auto& y = t.nodes_[self].value;
            const auto& dy = t.grad_of(self);
            auto& dx = t.grad_of(xv.id);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
        });
    }

    /// (B,H,W,C) -> (B,C). Gradient goes to the first maximum in scan order.
    Var global_max_pool(Var x, std::string label = "max_pool") {
        const auto& xs = value(x).shape;
        if (xs.size() != 4) shape_fail(label, "input must be (B,H,W,C), got " + shape_str(xs));
        const std::size_t B = xs[0], P = xs[1] * xs[2], C = xs[3];
        Tensor<T> out({B, C});
        std::vector<std::size_t> arg(B * C);
        const T* xp = value(x).ptr();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t c = 0; c < C; ++c) {
                std::size_t best = b * P * C + c;
                for (std::size_t p = 1; p < P; ++p) {
                    const std::size_t k = (b * P + p) * C + c;
                    if (xp[k] > xp[best]) best = k;
                }
                arg[b * C + c] = best;
                out[b * C + c] = xp[best];
            }
        }
        return make(std::move(label), {x}, std::move(out), [arg = std::move(arg)](Tape& t, std::size_t self) {
            const Var xv = t.input(self, 0);
            if (!t.needs_grad(xv)) return;
            const auto& dy = t.grad_of(self);
            auto& dx = t.grad_of(xv.id);
            for (std::size_t i = 0; i < arg.size(); ++i) dx[arg[i]] += dy[i];
        });
    }

    /// (B,H,W,C) -> (B,C).
    Var global_avg_pool(Var x, std::string label = "avg_pool") {
        const auto& xs = value(x).shape;
        if (xs.size() != 4) shape_fail(label, "input must be (B,H,W,C), got " + shape_str(xs));
        const std::size_t B = xs[0], P = xs[1] * xs[2], C = xs[3];
        Tensor<T> out({B, C});
        const T* xp = value(x).ptr();
        const T inv = T(1) / static_cast<T>(P);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t p = 0; p < P; ++p)
                for (std::size_t c = 0; c < C; ++c) out[b * C + c] += xp[(b * P + p) * C + c];
            for (std::size_t c = 0; c < C; ++c) out[b * C + c] *= inv;
        }
        return make(std::move(label), {x}, std::move(out), [=](Tape& t, std::size_t self) {
            const Var xv = t.input(self, 0);
            if (!t.needs_grad(xv)) return;
            const auto& dy = t.grad_of(self);
            auto& dx = t.grad_of(xv.id);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t p = 0; p < P; ++p)
                    for (std::size_t c = 0; c < C; ++c) dx[(b * P + p) * C + c] += dy[b * C + c] * inv;
        });
    }

    Var add(Var a, Var b, std::string label = "add") {
        if (value(a).shape != value(b).shape) {
            shape_fail(label, "operands differ: " + shape_str(value(a).shape) + " vs " + shape_str(value(b).shape));
        }
        Tensor<T> out = value(a);
        const auto& bv = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
        return make(std::move(label), {a, b}, std::move(out), [](Tape& t, std::size_t self) {
            const auto& dy = t.grad_of(self);
            for (std::size_t k = 0; k < 2; ++k) {
                const Var v = t.input(self, k);
                if (!t.needs_grad(v)) continue;
                auto& d = t.grad_of(v.id);
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
            }
        });
    }

    /// x: (B,H,W,C) times s: (B,C) broadcast over the spatial positions.
    Var scale_channels(Var x, Var s, std::string label = "scale_channels") {
        const auto& xs = value(x).shape;
        if (xs.size() != 4) shape_fail(label, "input must be (B,H,W,C), got " + shape_str(xs));
        if (value(s).shape != Shape{xs[0], xs[3]}) {
            shape_fail(label, "scale must be " + shape_str({xs[0], xs[3]}) + ", got " + shape_str(value(s).shape));
        }
        const std::size_t B = xs[0], P = xs[1] * xs[2], C = xs[3];
        Tensor<T> out = value(x);
        const T* sp = value(s).ptr();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t p = 0; p < P; ++p)
                for (std::size_t c = 0; c < C; ++c) out[(b * P + p) * C + c] *= sp[b * C + c];
        return make(std::move(label), {x, s}, std::move(out), [=](Tape& t, std::size_t self) {
            const Var xv = t.input(self, 0), sv = t.input(self, 1);
            const auto& dy = t.grad_of(self);
            const T* xval = t.value(xv).ptr();
            const T* sval = t.value(sv).ptr();
            if (t.needs_grad(xv)) {
                auto& dx = t.grad_of(xv.id);
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t p = 0; p < P; ++p)
                        for (std::size_t c = 0; c < C; ++c) {
                            const std::size_t k = (b * P + p) * C + c;
                            dx[k] += dy[k] * sval[b * C + c];
                        }
            }
            if (t.needs_grad(sv)) {
                auto& ds = t.grad_of(sv.id);
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t p = 0; p < P; ++p)
                        for (std::size_t c = 0; c < C; ++c) {
                            const std::size_t k = (b * P + p) * C + c;
                            ds[b * C + c] += dy[k] * xval[k];
                        }
            }
        });
    }

    /// (B, ...) -> (B, prod(...)).
    Var flatten(Var x, std::string label = "flatten") {
        const auto& xs = value(x).shape;
        if (xs.empty()) shape_fail(label, "cannot flatten a rank-0 tensor");
        Tensor<T> out = value(x);
        out.shape = {xs[0], xs[0] == 0 ? 0 : out.size() / xs[0]};
        return make(std::move(label), {x}, std::move(out), [](Tape& t, std::size_t self) {
            const Var xv = t.input(self, 0);
            if (!t.needs_grad(xv)) return;
            const auto& dy = t.grad_of(self);
            auto& dx = t.grad_of(xv.id);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
        });
    }

    /// sum((pred - target)^2) / denom; denom 0 means the element count.
    Var mse(Var pred, const Tensor<T>& target, double denom = 0.0, std::string label = "mse") {
        if (value(pred).shape != target.shape) {
            shape_fail(label, "prediction " + shape_str(value(pred).shape) + " vs target " + shape_str(target.shape));
        }
        const double d = denom > 0.0 ? denom : static_cast<double>(target.size());
        double acc = 0.0;
        const auto& p = value(pred);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double e = static_cast<double>(p[i]) - static_cast<double>(target[i]);
            acc += e * e;
        }
        Tensor<T> out({1}, static_cast<T>(acc / d));
        return make(std::move(label), {pred}, std::move(out), [target, d](Tape& t, std::size_t self) {
            const Var pv = t.input(self, 0);
            if (!t.needs_grad(pv)) return;
            const T g = t.grad_of(self)[0];
            const auto& pval = t.value(pv);
            auto& dp = t.grad_of(pv.id);
            const T scale = static_cast<T>(2.0 / d);
            for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += g * scale * (pval[i] - target[i]);
        });
    }

    /// Seeds d(loss)/d(loss) = 1 and propagates. Parameter gradients accumulate
    /// into their ParameterSet; call zero_grad() there between steps.
    void backward(Var loss) {
        if (value(loss).size() != 1) throw ShapeError("backward target '" + label(loss) + "' is not a scalar");
        for (auto& n : nodes_)
            if (!n.ext_grad) n.grad = {};
        grad_of(loss.id)[0] = T(1);
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.backward || !n.needs_grad) continue;
            if (!n.ext_grad && n.grad.data.empty()) continue;  // unreached
            n.backward(*this, i);
        }
    }

    Var input(std::size_t node, std::size_t k) const { return Var{nodes_[node].inputs.at(k)}; }

private:
    struct Node {
        std::string label;
        Tensor<T> value;
        Tensor<T> grad;
        const Tensor<T>* ext_value = nullptr;
        Tensor<T>* ext_grad = nullptr;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool needs_grad = false;
    };

    using MatM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using RowV = Eigen::Matrix<T, 1, Eigen::Dynamic>;
    static Eigen::Map<MatM> MapM(T* p, std::size_t r, std::size_t c) {
        return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
    }
    static Eigen::Map<const MatM> CMapM(const T* p, std::size_t r, std::size_t c) {
        return {p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
    }
    static Eigen::Map<RowV> MapR(T* p, std::size_t n) { return {p, static_cast<Eigen::Index>(n)}; }
    static Eigen::Map<const RowV> CMapR(const T* p, std::size_t n) { return {p, static_cast<Eigen::Index>(n)}; }

    // Clamped one ulp inside (0, 1) so saturated inputs still give an open-interval value.
    static T logistic(T v) {
        T y;
        if (v >= T(0)) {
            y = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            y = e / (T(1) + e);
        }
        return std::clamp(y, std::numeric_limits<T>::min(), T(1) - std::numeric_limits<T>::epsilon() / T(2));
    }

    // Row (b,y,x) of `col` holds the 3x3 neighbourhood, (ky,kx,ci) order, zero outside.
    static void im2col(const T* x, std::size_t B, std::size_t H, std::size_t W, std::size_t C, T* col) {
        const std::size_t K = 9 * C;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t xx = 0; xx < W; ++xx) {
                    T* row = col + ((b * H + y) * W + xx) * K;
                    for (std::size_t ky = 0; ky < 3; ++ky)
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                            T* dst = row + (ky * 3 + kx) * C;
                            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - 1;
                            if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(H) ||
                                sx >= static_cast<std::ptrdiff_t>(W)) {
                                std::fill(dst, dst + C, T(0));
                            } else {
                                const T* src = x + ((b * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)) * C;
                                std::copy(src, src + C, dst);
                            }
                        }
                }
    }

    static void col2im_add(const T* col, std::size_t B, std::size_t H, std::size_t W, std::size_t C, T* dx) {
        const std::size_t K = 9 * C;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t xx = 0; xx < W; ++xx) {
                    const T* row = col + ((b * H + y) * W + xx) * K;
                    for (std::size_t ky = 0; ky < 3; ++ky)
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - 1;
                            if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(H) ||
                                sx >= static_cast<std::ptrdiff_t>(W))
                                continue;
                            const T* src = row + (ky * 3 + kx) * C;
                            T* dst = dx + ((b * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)) * C;
                            for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
                        }
                }
    }

    [[noreturn]] static void shape_fail(const std::string& label, const std::string& what) {
        throw ShapeError("node '" + label + "': " + what);
    }

    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    Var make(std::string label, const std::vector<Var>& inputs, Tensor<T> value, BackwardFn backward) {
        Node n;
        n.label = std::move(label);
        n.value = std::move(value);
        for (Var v : inputs) {
            if (v.id >= nodes_.size()) throw InvalidStateError("node '" + n.label + "' has an unknown input");
            n.inputs.push_back(v.id);
            n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
        }
        n.backward = std::move(backward);
        return push(std::move(n));
    }

    Tensor<T>& grad_of(std::size_t id) {
        Node& n = nodes_[id];
        if (n.ext_grad) return *n.ext_grad;
        if (n.grad.data.empty() && !n.value.data.empty()) n.grad = Tensor<T>(n.value.shape);
        return n.grad;
    }

    std::vector<Node> nodes_;
};

}  // namespace mrf::ad
