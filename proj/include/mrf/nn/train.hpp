#pragma once

// Mini-batch Adam on MSE over normalized targets, with early stopping on
// the validation loss.

#include <mrf/nn/conv_ica.hpp>
#include <mrf/nn/patches.hpp>
#include <mrf/parallel.hpp>

#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>

namespace mrf::nn {

struct TrainConfig {
    double lr = 1.5e-3;
    std::size_t batch = 512;
    std::size_t max_epochs = 100;
    std::size_t patience = 15;
    std::uint64_t seed = 0;
    std::size_t threads = 1;     // data-parallel shards per batch
    std::size_t micro_batch = 0; // 0 picks one from a memory budget

    void validate() const {
        if (!(lr > 0.0) || batch == 0 || max_epochs == 0 || patience == 0) {
            throw DomainError("training config values must be positive");
        }
        if (threads == 0) throw DomainError("thread count must be positive");
    }
};

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    bool stopped_early = false;
};

class EarlyStopping {
public:
    explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

    /// Records one validation loss; returns true when it is a new best.
    bool update(double val_loss) {
        if (val_loss < best_) {
            best_ = val_loss;
            wait_ = 0;
            return true;
        }
        ++wait_;
        return false;
    }

    bool should_stop() const noexcept { return wait_ >= patience_; }
    double best() const noexcept { return best_; }

private:
    std::size_t patience_;
    std::size_t wait_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

/// Keeps the largest im2col buffer near 4M floats.
inline std::size_t auto_micro_batch(const ConvIcaConfig& cfg) {
    std::size_t widest = cfg.channels;
    for (auto w : cfg.widths) widest = std::max(widest, w);
    const std::size_t per_patch = cfg.patch * cfg.patch * 9 * widest;
    return std::max<std::size_t>(1, (std::size_t{4} << 20) / per_patch);
}

namespace detail {

// Sum of squared errors over `idx`; gradients (of sse / denom) accumulate
// into `grads` when given.
inline double sse_pass(const ConvIca& model, const PatchSet& set, std::span<const std::size_t> idx,
                       double input_scale, std::size_t micro, double denom, std::vector<Tensor<float>>* grads) {
    double sse = 0.0;
    const auto& p = model.params();
    for (std::size_t start = 0; start < idx.size(); start += micro) {
        const auto part = idx.subspan(start, std::min(micro, idx.size() - start));
        const auto x = gather_batch(set, part, input_scale);
        const auto y = gather_targets(set, part);
        Tape<float> t;
        const auto bind = [&](const std::string& name) {
            const auto i = p.index(name);
            return grads ? t.parameter(p.value(i), (*grads)[i], name) : t.alias(p.value(i), name);
        };
        const auto out = conv_ica_forward(t, model.config(), t.alias(x, "input"), bind);
        const auto& pred = t.value(out.output);
        double part_sse = 0.0;
        for (std::size_t k = 0; k < pred.size(); ++k) {
            const double e = double(pred[k]) - double(y[k]);
            part_sse += e * e;
        }
        sse += part_sse;
        if (grads) t.backward(t.mse(out.output, y, denom));
    }
    return sse;
}

}  // namespace detail

/// Mean over patches and both outputs of the squared error.
inline double evaluate_loss(const ConvIca& model, const PatchSet& set, double input_scale, std::size_t micro = 0) {
    if (set.empty()) throw DomainError("empty patch set");
    if (micro == 0) micro = auto_micro_batch(model.config());
    std::vector<std::size_t> idx(set.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return detail::sse_pass(model, set, idx, input_scale, micro, 1.0, nullptr) / (2.0 * double(set.size()));
}

/// Trains in place and leaves the best-validation parameters in `model`.
inline TrainHistory train_model(ConvIca& model, const PatchSet& train, const PatchSet& val, const TrainConfig& cfg,
                                double input_scale, const std::function<void(const EpochStats&)>& on_epoch = {}) {
    cfg.validate();
    if (train.empty() || val.empty()) throw DomainError("training and validation sets must be non-empty");
    if (train.channels() != model.config().channels || val.channels() != model.config().channels ||
        train.patch != model.config().patch || val.patch != model.config().patch) {
        throw ShapeError("patch sets do not match the model's channels or patch size");
    }
    const std::size_t micro = cfg.micro_batch ? cfg.micro_batch : auto_micro_batch(model.config());
    auto& params = model.params();
    ad::AdamState<float> adam(ad::AdamConfig{.lr = cfg.lr});
    EarlyStopping stopper(cfg.patience);
    TrainHistory hist;
    auto best = params;

    std::vector<std::vector<Tensor<float>>> shard_grads;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        auto rng = make_rng(cfg.seed, 0xE90C00 + epoch);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        double epoch_sse = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::span<const std::size_t> batch(order.data() + start, std::min(cfg.batch, order.size() - start));
            const double denom = 2.0 * double(batch.size());
            const std::size_t shards = std::min(cfg.threads, batch.size());
            shard_grads.resize(shards);
            for (auto& g : shard_grads) {
                g.resize(params.size());
                for (std::size_t i = 0; i < params.size(); ++i) g[i] = Tensor<float>(params.value(i).shape);
            }
            std::vector<double> shard_sse(shards, 0.0);
            const std::size_t chunk = (batch.size() + shards - 1) / shards;
            parallel_for(shards, shards, [&](std::size_t b, std::size_t e) {
                for (std::size_t s = b; s < e; ++s) {
                    const std::size_t lo = s * chunk, hi = std::min(batch.size(), lo + chunk);
                    if (lo >= hi) continue;
                    shard_sse[s] = detail::sse_pass(model, train, batch.subspan(lo, hi - lo), input_scale, micro,
                                                    denom, &shard_grads[s]);
                }
            });
            params.zero_grad();
            double batch_sse = 0.0;
            for (std::size_t s = 0; s < shards; ++s) {
                batch_sse += shard_sse[s];
                for (std::size_t i = 0; i < params.size(); ++i) {
                    auto& g = params.grad(i);
                    const auto& sg = shard_grads[s][i];
                    for (std::size_t k = 0; k < g.size(); ++k) g[k] += sg[k];
                }
            }
            if (!std::isfinite(batch_sse)) {
                throw TrainingDivergedError(epoch, "non-finite training loss");
            }
            ad::adam_step(params, adam);
            epoch_sse += batch_sse;
        }
        EpochStats st;
        st.epoch = epoch;
        st.train_loss = epoch_sse / (2.0 * double(train.size()));
        st.val_loss = evaluate_loss(model, val, input_scale, micro);
        if (!std::isfinite(st.val_loss)) {
            throw TrainingDivergedError(epoch, "non-finite validation loss");
        }
        hist.epochs.push_back(st);
        if (on_epoch) on_epoch(st);
        if (stopper.update(st.val_loss)) {
            best = params;
            hist.best_epoch = epoch;
            hist.best_val_loss = st.val_loss;
        }
        if (stopper.should_stop()) {
            hist.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    params = std::move(best);
    params.zero_grad();
    return hist;
}

inline void write_history_csv(const TrainHistory& h, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "epoch,train_loss,val_loss,best\n" << std::setprecision(9);
    for (const auto& e : h.epochs) {
        os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << (e.epoch == h.best_epoch ? 1 : 0) << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace mrf::nn
