#pragma once

// Extended Phase Graph simulation of a gradient-echo MRF sequence with a
// variable flip-angle train and fixed TR/TE.
//
// Configuration states are kept one-sided: F+_k, F-_k and Z_k for
// k = 0..max_order. The RF mixing matrix is the usual one (Weigel 2015),
// which is unitary on (F+/sqrt2, F-/sqrt2, Z); state_energy() uses that metric.

#include <mrf/error.hpp>
#include <mrf/rng.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace mrf {

using cplx = std::complex<double>;

struct SequenceParams {
    std::vector<double> flip_train;  // degrees, one per time point
    double tr_ms = 4.3;
    double te_ms = 2.0;

    std::size_t t_points() const noexcept { return flip_train.size(); }

    void validate() const {
        if (flip_train.empty()) throw DomainError("sequence has no time points");
        if (!(tr_ms > 0.0) || !std::isfinite(tr_ms)) throw DomainError("TR must be positive");
        if (!(te_ms >= 0.0) || te_ms > tr_ms) throw DomainError("TE must lie in [0, TR]");
        for (std::size_t t = 0; t < flip_train.size(); ++t) {
            const double a = flip_train[t];
            if (!(a >= 0.0 && a <= 180.0)) {
                throw DomainError("flip angle " + std::to_string(t) + " outside [0, 180] degrees");
            }
        }
    }
};

struct TissueParams {
    double t1_ms = 0.0;
    double t2_ms = 0.0;

    friend bool operator==(const TissueParams&, const TissueParams&) = default;
    friend auto operator<=>(const TissueParams&, const TissueParams&) = default;
};

inline void validate_tissue(const TissueParams& tissue) {
    if (!(tissue.t1_ms > 0.0) || !std::isfinite(tissue.t1_ms) || !(tissue.t2_ms > 0.0) ||
        !std::isfinite(tissue.t2_ms)) {
        std::ostringstream msg;
        msg << "relaxation times must be positive and finite (T1=" << tissue.t1_ms
            << " ms, T2=" << tissue.t2_ms << " ms)";
        throw DomainError(msg.str());
    }
}

struct EpgState {
    std::vector<cplx> f_plus;
    std::vector<cplx> f_minus;
    std::vector<cplx> z;

    /// Equilibrium: no transverse coherence, Z_0 = 1.
    static EpgState equilibrium(std::size_t max_order) {
        EpgState s;
        s.f_plus.assign(max_order + 1, cplx{});
        s.f_minus.assign(max_order + 1, cplx{});
        s.z.assign(max_order + 1, cplx{});
        s.z[0] = 1.0;
        return s;
    }

    std::size_t max_order() const noexcept { return z.empty() ? 0 : z.size() - 1; }

    bool finite() const noexcept {
        auto ok = [](const std::vector<cplx>& v) {
            return std::all_of(v.begin(), v.end(),
                               [](cplx c) { return std::isfinite(c.real()) && std::isfinite(c.imag()); });
        };
        return ok(f_plus) && ok(f_minus) && ok(z);
    }
};

/// Conserved quantity of the RF rotation at one dephasing order.
inline double state_energy(const EpgState& s, std::size_t k) {
    return 0.5 * (std::norm(s.f_plus[k]) + std::norm(s.f_minus[k])) + std::norm(s.z[k]);
}

namespace detail {

struct RfRotation {
    cplx pp, pm, pz;  // row F+
    cplx mp, mm, mz;  // row F-
    cplx zp, zm, zz;  // row Z

    RfRotation(double flip_deg, double phase_deg) {
        const double a = flip_deg * std::numbers::pi / 180.0;
        const double phi = phase_deg * std::numbers::pi / 180.0;
        const double c = std::cos(a / 2.0), s = std::sin(a / 2.0);
        const double c2 = c * c, s2 = s * s, sa = std::sin(a), ca = std::cos(a);
        const cplx e1 = std::polar(1.0, phi), e2 = std::polar(1.0, 2.0 * phi);
        const cplx i{0.0, 1.0};
        pp = c2;
        pm = e2 * s2;
        pz = -i * e1 * sa;
        mp = std::conj(e2) * s2;
        mm = c2;
        mz = i * std::conj(e1) * sa;
        zp = -0.5 * i * std::conj(e1) * sa;
        zm = 0.5 * i * e1 * sa;
        zz = ca;
    }
};

inline void apply_rf(EpgState& s, const RfRotation& r, std::size_t orders) {
    for (std::size_t k = 0; k < orders; ++k) {
        const cplx fp = s.f_plus[k], fm = s.f_minus[k], z = s.z[k];
        s.f_plus[k] = r.pp * fp + r.pm * fm + r.pz * z;
        s.f_minus[k] = r.mp * fp + r.mm * fm + r.mz * z;
        s.z[k] = r.zp * fp + r.zm * fm + r.zz * z;
    }
}

inline void apply_relax(EpgState& s, double e1, double e2, std::size_t orders) {
    for (std::size_t k = 0; k < orders; ++k) {
        s.f_plus[k] *= e2;
        s.f_minus[k] *= e2;
        s.z[k] *= e1;
    }
    s.z[0] += 1.0 - e1;
}

// Gradient dephasing by one order: F+ moves up, F- moves down, and the
// new F+_0 is the conjugate of the new F-_0. `orders` bounds the nonzero
// range before the shift; states shifted past max_order are dropped.
inline void apply_shift(EpgState& s, std::size_t orders) {
    const std::size_t kmax = s.max_order();
    const std::size_t top = std::min(orders, kmax);
    for (std::size_t k = top; k >= 1; --k) s.f_plus[k] = s.f_plus[k - 1];
    for (std::size_t k = 0; k + 1 < orders && k < kmax; ++k) s.f_minus[k] = s.f_minus[k + 1];
    if (orders > kmax) {
        s.f_minus[kmax] = 0.0;
    } else if (orders >= 1) {
        s.f_minus[orders - 1] = 0.0;
    }
    s.f_plus[0] = std::conj(s.f_minus[0]);
}

inline void check_state(const EpgState& s) {
    if (s.f_plus.size() != s.z.size() || s.f_minus.size() != s.z.size() || s.z.empty()) {
        throw InvalidStateError("EPG state arrays have inconsistent lengths");
    }
    if (!s.finite()) throw InvalidStateError("EPG state contains non-finite values");
}

}  // namespace detail

/// RF pulse: 3x3 complex rotation applied to (F+_k, F-_k, Z_k) at every order.
inline EpgState epg_rf(EpgState state, double flip_deg, double phase_deg = 0.0) {
    detail::check_state(state);
    if (!(flip_deg >= 0.0 && flip_deg <= 180.0)) throw DomainError("flip angle outside [0, 180] degrees");
    detail::apply_rf(state, detail::RfRotation(flip_deg, phase_deg), state.z.size());
    return state;
}

/// Relaxation only (no gradient): F scaled by E2, Z by E1, Z_0 regrows.
inline EpgState epg_relax(EpgState state, const TissueParams& tissue, double dt_ms) {
    detail::check_state(state);
    validate_tissue(tissue);
    if (!(dt_ms > 0.0)) throw DomainError("relaxation interval must be positive");
    detail::apply_relax(state, std::exp(-dt_ms / tissue.t1_ms), std::exp(-dt_ms / tissue.t2_ms),
                        state.z.size());
    return state;
}

inline EpgState epg_shift(EpgState state) {
    detail::check_state(state);
    detail::apply_shift(state, state.z.size());
    return state;
}

inline EpgState epg_relax_shift(EpgState state, const TissueParams& tissue, double dt_ms) {
    state = epg_relax(std::move(state), tissue, dt_ms);
    detail::apply_shift(state, state.z.size());
    return state;
}

struct Fingerprint {
    std::vector<double> signal;

    std::size_t size() const noexcept { return signal.size(); }

    double norm() const {
        double acc = 0.0;
        for (double v : signal) acc += v * v;
        return std::sqrt(acc);
    }

    Fingerprint normalized() const {
        const double n = norm();
        if (!(n > 0.0)) throw DegenerateSignalError("cannot normalize an all-zero fingerprint");
        Fingerprint out = *this;
        for (double& v : out.signal) v /= n;
        return out;
    }
};

struct EpgOptions {
    /// 0 selects min(t_points, 100).
    std::size_t max_order = 0;
    /// false disables the per-TR gradient shift (pure relaxation between pulses).
    bool dephasing = true;
};

inline std::size_t effective_max_order(const EpgOptions& opt, std::size_t t_points) {
    return opt.max_order != 0 ? opt.max_order : std::min<std::size_t>(t_points, 100);
}

/// Complex echo amplitudes F+_0 * exp(-TE/T2) after each pulse.
inline std::vector<cplx> simulate_echoes(const SequenceParams& seq, const TissueParams& tissue,
                                         const EpgOptions& opt = {}) {
    seq.validate();
    validate_tissue(tissue);
    const std::size_t n = seq.t_points();
    const std::size_t kmax = effective_max_order(opt, n);
    EpgState state = EpgState::equilibrium(kmax);
    const double e1 = std::exp(-seq.tr_ms / tissue.t1_ms);
    const double e2 = std::exp(-seq.tr_ms / tissue.t2_ms);
    const double te_decay = std::exp(-seq.te_ms / tissue.t2_ms);

    std::vector<cplx> echoes(n);
    // Before pulse t at most t+1 orders can be populated.
    std::size_t active = 1;
    for (std::size_t t = 0; t < n; ++t) {
        detail::apply_rf(state, detail::RfRotation(seq.flip_train[t], 0.0), active);
        echoes[t] = state.f_plus[0] * te_decay;
        detail::apply_relax(state, e1, e2, active);
        if (opt.dephasing) {
            detail::apply_shift(state, active);
            active = std::min(active + 1, kmax + 1);
        }
    }
    return echoes;
}

/// Magnitude fingerprint: |F+_0| right after each pulse, decayed to TE.
inline Fingerprint simulate_fingerprint(const SequenceParams& seq, const TissueParams& tissue,
                                        const EpgOptions& opt = {}) {
    const auto echoes = simulate_echoes(seq, tissue, opt);
    Fingerprint fp;
    fp.signal.resize(echoes.size());
    for (std::size_t t = 0; t < echoes.size(); ++t) fp.signal[t] = std::abs(echoes[t]);
    return fp;
}

/// Sum of two sinusoids (periods 250 and 500 time points) mapped affinely
/// from [-2, 2] onto [5, 70] degrees, plus seeded uniform jitter of +/-2
/// degrees, clamped to [5, 70].
inline std::vector<double> default_flip_train(std::size_t t_points, std::uint64_t seed) {
    if (t_points == 0) throw DomainError("flip train needs at least one time point");
    constexpr double lo = 5.0, hi = 70.0, jitter = 2.0;
    auto rng = make_rng(seed, 0xF11F);
    std::vector<double> train(t_points);
    for (std::size_t t = 0; t < t_points; ++t) {
        const double x = static_cast<double>(t);
        const double lobes = std::sin(2.0 * std::numbers::pi * x / 250.0) + std::sin(2.0 * std::numbers::pi * x / 500.0);
        const double a = lo + (hi - lo) * (lobes + 2.0) / 4.0 + uniform(rng, -jitter, jitter);
        train[t] = std::clamp(a, lo, hi);
    }
    return train;
}

inline void save_flip_train_csv(const std::vector<double>& train, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.precision(17);
    for (double a : train) os << a << '\n';
    if (!os) throw IoError("write failed: " + path);
}

inline std::vector<double> load_flip_train_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open for reading: " + path);
    std::vector<double> train;
    std::string line;
    std::size_t row = 0;
    while (std::getline(is, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        try {
            std::size_t used = 0;
            const double a = std::stod(line, &used);
            if (line.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument("junk");
            train.push_back(a);
        } catch (const std::exception&) {
            throw FormatError("flip train CSV row " + std::to_string(row) + ": not a number");
        }
    }
    if (train.empty()) throw FormatError("flip train CSV is empty");
    return train;
}

}  // namespace mrf
