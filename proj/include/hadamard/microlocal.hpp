#pragma once

#include "hadamard/geometry.hpp"

#include <fftw3.h>

#include <mutex>

namespace hadamard::microlocal {

using geometry::CotangentPoint;
using geometry::SpacetimeModel;

// ---------------------------------------------------------------------------
// Sampled distributions on uniform grids
// ---------------------------------------------------------------------------

struct SampledDistribution {
    int d = 1;
    Vec origin, spacing;
    std::vector<int> n;
    std::vector<std::vector<cd>> values;  // one array per fibre channel, last axis fastest

    std::size_t size() const {
        std::size_t s = 1;
        for (int v : n) s *= static_cast<std::size_t>(v);
        return s;
    }
    int channels() const { return static_cast<int>(values.size()); }
    std::size_t index(const std::vector<int>& i) const {
        std::size_t k = 0;
        for (int a = 0; a < d; ++a) k = k * n[a] + i[a];
        return k;
    }
    std::vector<int> multi(std::size_t k) const {
        std::vector<int> i(d);
        for (int a = d - 1; a >= 0; --a) {
            i[a] = static_cast<int>(k % n[a]);
            k /= n[a];
        }
        return i;
    }
    Vec point(std::size_t k) const {
        auto i = multi(k);
        Vec x(d);
        for (int a = 0; a < d; ++a) x(a) = origin(a) + i[a] * spacing(a);
        return x;
    }
    Vec center() const {
        Vec c(d);
        for (int a = 0; a < d; ++a) c(a) = origin(a) + 0.5 * (n[a] - 1) * spacing(a);
        return c;
    }
    void validate() const {
        if (d < 1 || d > 4) fail(ErrorCode::UnsupportedDimension, "sampled distributions need 1 <= d <= 4");
        if (static_cast<int>(n.size()) != d || origin.size() != d || spacing.size() != d)
            fail(ErrorCode::ConfigError, "grid description has wrong dimension");
        for (int a = 0; a < d; ++a)
            if (!(spacing(a) > 0.0)) fail(ErrorCode::ConfigError, "grid spacing must be positive");
        for (const auto& ch : values) {
            if (ch.size() != size()) fail(ErrorCode::ConfigError, "channel size does not match grid");
            for (const cd& v : ch)
                if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
                    fail(ErrorCode::ConfigError, "sampled values must be finite");
        }
    }
};

inline SampledDistribution sample_distribution(const Vec& origin, const Vec& spacing, const std::vector<int>& n,
                                               const std::function<CVec(const Vec&)>& f) {
    SampledDistribution u;
    u.d = static_cast<int>(n.size());
    u.origin = origin;
    u.spacing = spacing;
    u.n = n;
    const std::size_t N = u.size();
    for (std::size_t k = 0; k < N; ++k) {
        CVec v = f(u.point(k));
        if (k == 0) u.values.assign(v.size(), std::vector<cd>(N));
        for (int c = 0; c < v.size(); ++c) u.values[c][k] = v(c);
    }
    u.validate();
    return u;
}

inline SampledDistribution sample_scalar(const Vec& origin, const Vec& spacing, const std::vector<int>& n,
                                         const std::function<cd(const Vec&)>& f) {
    return sample_distribution(origin, spacing, n, [&](const Vec& x) {
        CVec v(1);
        v(0) = f(x);
        return v;
    });
}

/// Central difference along one axis (one-sided at the ends).
inline SampledDistribution differentiate(const SampledDistribution& u, int axis) {
    SampledDistribution out = u;
    const std::size_t N = u.size();
    for (int c = 0; c < u.channels(); ++c)
        for (std::size_t k = 0; k < N; ++k) {
            auto i = u.multi(k);
            auto lo = i, hi = i;
            lo[axis] = std::max(0, i[axis] - 1);
            hi[axis] = std::min(u.n[axis] - 1, i[axis] + 1);
            out.values[c][k] =
                (u.values[c][u.index(hi)] - u.values[c][u.index(lo)]) / ((hi[axis] - lo[axis]) * u.spacing(axis));
        }
    return out;
}

/// u ∘ L⁻¹ resampled on the same grid (multilinear interpolation, zero outside).
inline SampledDistribution linear_pullback(const SampledDistribution& u, const Mat& L, const Vec& about) {
    SampledDistribution out = u;
    Mat Li = L.inverse();
    const std::size_t N = u.size();
    for (std::size_t k = 0; k < N; ++k) {
        Vec y = about + Li * (u.point(k) - about);
        std::vector<int> base(u.d);
        std::vector<double> frac(u.d);
        bool inside = true;
        for (int a = 0; a < u.d; ++a) {
            double t = (y(a) - u.origin(a)) / u.spacing(a);
            int b = static_cast<int>(std::floor(t));
            if (b < 0 || b + 1 >= u.n[a]) inside = false;
            base[a] = b;
            frac[a] = t - b;
        }
        for (int c = 0; c < u.channels(); ++c) {
            cd acc = 0.0;
            if (inside)
                for (int corner = 0; corner < (1 << u.d); ++corner) {
                    double w = 1.0;
                    auto i = base;
                    for (int a = 0; a < u.d; ++a) {
                        int bit = (corner >> a) & 1;
                        i[a] += bit;
                        w *= bit ? frac[a] : 1.0 - frac[a];
                    }
                    acc += w * u.values[c][u.index(i)];
                }
            out.values[c][k] = acc;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Windowed Fourier decay estimator
// ---------------------------------------------------------------------------

struct EstimatorOptions {
    double window_scale = 0.0;    // half width of the window (coordinate units); 0 = largest that fits
    int n_directions = 0;         // 0 = 64 (d = 2) or 256 (d = 3, 4)
    double decay_threshold = 4.0; // flag directions with fitted exponent below this
    double cone_cells = 0.75;     // angular half width of the probing cone, in direction cells
    double noise_floor = 1e-12;   // relative to the largest Fourier amplitude
    int min_samples = 32;         // per axis inside the window
    double alias_growth = 1.5;    // exponents below -alias_growth (rising towards Nyquist) are read as folding
    double min_confidence = 0.0;  // R² of the decay fit required to flag
    double band_range = 1e-3;     // ignore directions whose band amplitude is below this fraction of the strongest
};

/// Gaussian of width 1/8 shifted to vanish at |u| = 1; the derivative jump at the edge is below 1e-12.
inline double estimator_window(double u) {
    if (std::abs(u) >= 1.0) return 0.0;
    const double edge = std::exp(-32.0);
    return (std::exp(-32.0 * u * u) - edge) / (1.0 - edge);
}

struct WfEntry {
    Vec point, dir;
    double exponent = 0.0;   // +inf when the transform decays below the noise floor
    double confidence = 0.0; // R² of the decay fit (1 for decayed cases)
    bool flagged = false;
    bool marginal = false;
};

struct WavefrontEstimate {
    std::vector<WfEntry> entries;
    double window_scale = 0.0;
    double cell = 0.0;  // angular direction-cell size
    int n_directions = 0;

    std::vector<WfEntry> flagged() const {
        std::vector<WfEntry> out;
        for (const auto& e : entries)
            if (e.flagged) out.push_back(e);
        return out;
    }
};

inline int default_directions(int d) { return d == 1 ? 2 : d == 2 ? 64 : 256; }

inline double direction_cell(int d, int n) {
    switch (d) {
        case 1: return kPi;
        case 2: return 2.0 * kPi / n;
        case 3: return std::sqrt(4.0 * kPi / n);
        default: return std::cbrt(2.0 * kPi * kPi / n);
    }
}

namespace detail {

inline std::mutex& fftw_mutex() {
    static std::mutex m;
    return m;
}

/// In-place multidimensional DFT with the e^{+ik·x} sign.
inline void fft_plus(std::vector<cd>& a, const std::vector<int>& n) {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    auto* p = reinterpret_cast<fftw_complex*>(a.data());
    fftw_plan plan = fftw_plan_dft(static_cast<int>(n.size()), n.data(), p, p, FFTW_BACKWARD, FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
}

struct DecayFit {
    double exponent = 0.0;
    double r2 = 0.0;
};

inline DecayFit fit_decay(const std::vector<double>& kc, const std::vector<double>& amax, double floor) {
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < kc.size(); ++i)
        if (amax[i] > floor) {
            xs.push_back(std::log(kc[i]));
            ys.push_back(std::log(amax[i]));
        }
    if (xs.size() < std::max<std::size_t>(3, kc.size() / 2)) return {std::numeric_limits<double>::infinity(), 1.0};
    const double n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    double slope = sxx > 0 ? sxy / sxx : 0.0;
    double r2 = (sxx > 0 && syy > 0) ? sxy * sxy / (sxx * syy) : 1.0;
    return {-slope, r2};
}

}  // namespace detail

/// Flags directions of slow windowed-Fourier decay at each probe point; union over channels.
inline WavefrontEstimate estimate_wavefront(const SampledDistribution& u, const std::vector<Vec>& probes,
                                            const EstimatorOptions& opt = {}) {
    u.validate();
    const int d = u.d;
    WavefrontEstimate est;
    est.n_directions = d == 1 ? 2 : (opt.n_directions > 0 ? opt.n_directions : default_directions(d));
    est.cell = direction_cell(d, est.n_directions);
    const std::vector<Vec> dirs = fibonacci_directions(d, est.n_directions);
    const double half[3] = {opt.cone_cells * est.cell - 0.5 * est.cell, opt.cone_cells * est.cell,
                            opt.cone_cells * est.cell + 0.5 * est.cell};

    double L = opt.window_scale;
    if (L <= 0.0) {
        L = std::numeric_limits<double>::infinity();
        for (const Vec& p : probes)
            for (int a = 0; a < d; ++a)
                L = std::min({L, p(a) - u.origin(a), u.origin(a) + (u.n[a] - 1) * u.spacing(a) - p(a)});
    }
    est.window_scale = L;

    for (const Vec& p : probes) {
        std::vector<int> c(d), H(d), M(d);
        for (int a = 0; a < d; ++a) {
            H[a] = static_cast<int>(std::floor(L / u.spacing(a) + 1e-9));
            if (2 * H[a] < opt.min_samples) fail(ErrorCode::GridTooCoarse, "window holds fewer than the required samples");
            c[a] = static_cast<int>(std::lround((p(a) - u.origin(a)) / u.spacing(a)));
            if (c[a] - H[a] < 0 || c[a] + H[a] > u.n[a] - 1) fail(ErrorCode::WindowClipped, "window exceeds the grid");
            M[a] = 2 * H[a] + 1;
        }
        std::size_t total = 1;
        for (int a = 0; a < d; ++a) total *= static_cast<std::size_t>(M[a]);

        // wavenumbers of the local DFT
        std::vector<Vec> kvec(total);
        std::vector<double> knorm(total);
        for (std::size_t k = 0; k < total; ++k) {
            std::size_t r = k;
            Vec kv(d);
            for (int a = d - 1; a >= 0; --a) {
                int j = static_cast<int>(r % M[a]);
                r /= M[a];
                int jj = j <= M[a] / 2 ? j : j - M[a];
                kv(a) = 2.0 * kPi * jj / (M[a] * u.spacing(a));
            }
            kvec[k] = kv;
            knorm[k] = kv.norm();
        }
        double K = std::numeric_limits<double>::infinity();
        for (int a = 0; a < d; ++a) K = std::min(K, kPi / u.spacing(a) * (M[a] - 1) / M[a]);
        double dk = 0.0;
        for (int a = 0; a < d; ++a) dk = std::max(dk, 2.0 * kPi / (M[a] * u.spacing(a)));
        const int n_shell = std::max(6, static_cast<int>(0.5 * K / dk));

        // amplitude per bin, max over channels
        std::vector<double> amp(total, 0.0);
        std::vector<cd> buf(total);
        for (int ch = 0; ch < u.channels(); ++ch) {
            for (std::size_t k = 0; k < total; ++k) {
                std::size_t r = k;
                std::vector<int> gi(d);
                double w = 1.0;
                for (int a = d - 1; a >= 0; --a) {
                    int j = static_cast<int>(r % M[a]);
                    r /= M[a];
                    gi[a] = c[a] - H[a] + j;
                    w *= estimator_window(static_cast<double>(j - H[a]) / (H[a] + 1));
                }
                buf[k] = w * u.values[ch][u.index(gi)];
            }
            detail::fft_plus(buf, M);
            for (std::size_t k = 0; k < total; ++k) amp[k] = std::max(amp[k], std::abs(buf[k]));
        }
        const double floor = opt.noise_floor * std::max(1e-300, *std::max_element(amp.begin(), amp.end()));

        std::vector<std::size_t> band;
        for (std::size_t k = 0; k < total; ++k)
            if (knorm[k] >= 0.5 * K && knorm[k] <= K) band.push_back(k);
        std::vector<double> kc(n_shell);
        for (int s = 0; s < n_shell; ++s) kc[s] = 0.5 * K * (1.0 + (s + 0.5) / n_shell);

        std::vector<std::array<std::vector<double>, 3>> all(dirs.size());
        double band_max = 0.0;
        for (std::size_t k : band) band_max = std::max(band_max, amp[k]);
        for (std::size_t wi = 0; wi < dirs.size(); ++wi) {
            const Vec& w = dirs[wi];
            auto& smax = all[wi];
            for (auto& v : smax) v.assign(n_shell, 0.0);
            for (std::size_t k : band) {
                double cs = std::clamp(kvec[k].dot(w) / knorm[k], -1.0, 1.0);
                double ang = std::acos(cs);
                if (ang > half[2]) continue;
                int s = std::min(n_shell - 1, static_cast<int>((knorm[k] - 0.5 * K) / (0.5 * K) * n_shell));
                for (int h = 0; h < 3; ++h)
                    if (ang <= std::max(half[h], 0.5 * dk / K)) smax[h][s] = std::max(smax[h][s], amp[k]);
            }
            const double sig = std::max(floor, opt.band_range * band_max);
            auto fit = detail::fit_decay(kc, smax[1], floor);
            const bool significant = *std::max_element(smax[1].begin(), smax[1].end()) >= sig;
            WfEntry e;
            e.point = p;
            e.dir = w;
            e.exponent = fit.exponent;
            e.confidence = fit.r2;
            auto slow = [&](double N) { return N < opt.decay_threshold && N >= -opt.alias_growth; };
            e.flagged = significant && fit.r2 >= opt.min_confidence && slow(fit.exponent);
            bool f_lo = slow(detail::fit_decay(kc, smax[0], floor).exponent);
            bool f_hi = slow(detail::fit_decay(kc, smax[2], floor).exponent);
            e.marginal = d > 1 && f_lo != f_hi;
            est.entries.push_back(e);
        }
    }
    return est;
}

/// Slow-decay cone of a kernel sampled in the difference variable (window over the whole grid).
inline WavefrontEstimate wf_translation_invariant(const SampledDistribution& kernel, EstimatorOptions opt = {}) {
    kernel.validate();
    Vec c = kernel.center();
    double L = std::numeric_limits<double>::infinity();
    for (int a = 0; a < kernel.d; ++a) L = std::min(L, 0.5 * (kernel.n[a] - 1) * kernel.spacing(a));
    opt.window_scale = L * (1.0 - 1e-12);
    return estimate_wavefront(kernel, {c}, opt);
}

// ---------------------------------------------------------------------------
// Predicted singular set and propagation closure
// ---------------------------------------------------------------------------

struct RSample {
    Vec q, xi, qp, xip;  // (q,ξ) with ξ ∈ N₋ and (q′,ξ′) with ξ′ ∈ N₊, (q,ξ) ∼ (q′,−ξ′)
};

struct PredictedSetR {
    std::vector<RSample> samples;
    std::vector<CotangentPoint> seeds;
};

/// Past-null covectors at q: ξ = g(v) with v = E(−1, n̂) for n̂ on a Fibonacci set of the spatial sphere.
inline std::vector<CotangentPoint> past_null_seeds(const SpacetimeModel& s, const Vec& q, int count) {
    const int m = s.m;
    Mat E = geometry::orthonormal_frame(s, q);
    Mat g = s.metric(q);
    std::vector<CotangentPoint> out;
    for (const Vec& nh : fibonacci_directions(m - 1, count)) {
        Vec a(m);
        a(0) = -1.0;
        a.tail(m - 1) = nh;
        out.push_back({q, g * (E * a)});
    }
    return out;
}

inline PredictedSetR predicted_R(const SpacetimeModel& s, const std::vector<CotangentPoint>& seeds, double t0,
                                 double t1, int n_out = 16) {
    PredictedSetR R;
    R.seeds = seeds;
    for (const auto& sd : seeds) {
        if (sd.xi.norm() == 0.0 || geometry::null_classify(s, sd.q, sd.xi) != geometry::NullClass::PastNull)
            fail(ErrorCode::NonNullSeed, "seed covector is not past-directed null");
        for (const auto& cp : geometry::propagate_null(s, sd.q, sd.xi, t0, t1, n_out))
            R.samples.push_back({sd.q, sd.xi, cp.q, Vec(-cp.xi)});
    }
    return R;
}

/// Co-parallelism residual |ξ − c·g(γ̇)| along the bicharacteristic of each seed, c fixed at the seed.
inline double coparallel_residual(const SpacetimeModel& s, const CotangentPoint& seed, double t1, int n_out = 16,
                                  double tol = 1e-12) {
    auto pts = geometry::propagate_null(s, seed.q, seed.xi, 0.0, t1, n_out, tol);
    geometry::RayOptions ro;
    ro.tol = tol;
    std::vector<double> times;
    for (int i = 0; i <= n_out; ++i) times.push_back(t1 * i / n_out);
    auto ray = geometry::integrate_ray(s, seed.q, s.metric(seed.q).inverse() * seed.xi, times, ro);
    double r = 0.0;
    for (std::size_t i = 0; i < pts.size() && i < ray.out.size(); ++i)
        r = std::max(r, (pts[i].xi - s.metric(ray.out[i].x) * ray.out[i].u).norm() / seed.xi.norm());
    return r;
}

struct PairSample {
    CotangentPoint a, b;
};

/// B(q,ξ) × B(q′,ξ′) for every input pair, flowing both slots over [t0,t1] (clipped at the chart).
inline std::vector<PairSample> pst_closure(const std::vector<PairSample>& in, const SpacetimeModel& s, double t0,
                                           double t1, int n_out = 8) {
    std::vector<PairSample> out;
    for (const auto& p : in) {
        if (p.a.xi.norm() == 0.0 || p.b.xi.norm() == 0.0) fail(ErrorCode::ZeroCovector, "closure needs nonzero covectors");
        auto A = geometry::propagate_null(s, p.a.q, p.a.xi, t0, t1, n_out);
        auto B = geometry::propagate_null(s, p.b.q, p.b.xi, t0, t1, n_out);
        for (const auto& x : A)
            for (const auto& y : B) out.push_back({x, y});
    }
    return out;
}

inline double pair_distance(const PairSample& u, const PairSample& v) {
    return (u.a.q - v.a.q).norm() + (u.b.q - v.b.q).norm() + (u.a.xi.normalized() - v.a.xi.normalized()).norm() +
           (u.b.xi.normalized() - v.b.xi.normalized()).norm();
}

/// max over `from` of the distance to the nearest sample of `to`.
inline double set_distance(const std::vector<PairSample>& from, const std::vector<PairSample>& to) {
    double worst = 0.0;
    for (const auto& u : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& v : to) best = std::min(best, pair_distance(u, v));
        worst = std::max(worst, best);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Microlocal spectrum verdict
// ---------------------------------------------------------------------------

struct ConeDirection {
    Vec dir;
    bool marginal = false;
};

/// Second-slot covector directions of R, the cone a translation-invariant kernel W(y − x) must carry.
inline std::vector<ConeDirection> difference_cone(const PredictedSetR& R) {
    std::vector<ConeDirection> out;
    for (const auto& s : R.samples) out.push_back({s.xip.normalized(), false});
    return out;
}

inline std::vector<ConeDirection> flagged_cone(const WavefrontEstimate& est) {
    std::vector<ConeDirection> out;
    for (const auto& e : est.entries)
        if (e.flagged) out.push_back({e.dir, e.marginal});
    return out;
}

struct MscReport {
    double completeness = 0.0;
    double soundness = 0.0;
    std::size_t n_predicted = 0, n_estimated = 0, n_marginal = 0;
    std::vector<double> predicted_gap;  // angle to the nearest flagged direction, per predicted sample
    std::vector<double> estimated_gap;  // angle to the nearest predicted direction, per flagged direction
    bool pass = false;
};

inline MscReport msc_verdict(const std::vector<ConeDirection>& estimate, const std::vector<ConeDirection>& predicted,
                             double angular_tol, double threshold = 0.9) {
    if (predicted.empty()) fail(ErrorCode::EmptyPrediction, "prediction set is empty");
    MscReport r;
    r.n_predicted = predicted.size();
    r.n_estimated = estimate.size();
    std::size_t hit = 0;
    for (const auto& p : predicted) {
        double best = kPi;
        for (const auto& e : estimate) best = std::min(best, angle_between(p.dir, e.dir));
        r.predicted_gap.push_back(best);
        if (best <= angular_tol) ++hit;
    }
    r.completeness = static_cast<double>(hit) / predicted.size();
    std::size_t scored = 0, good = 0;
    for (const auto& e : estimate) {
        double best = kPi;
        for (const auto& p : predicted) best = std::min(best, angle_between(p.dir, e.dir));
        r.estimated_gap.push_back(best);
        if (e.marginal) {
            ++r.n_marginal;
            continue;
        }
        ++scored;
        if (best <= angular_tol) ++good;
    }
    r.soundness = scored ? static_cast<double>(good) / scored : (estimate.empty() ? 0.0 : 1.0);
    r.pass = r.completeness >= threshold && r.soundness >= threshold;
    return r;
}

}  // namespace hadamard::microlocal
