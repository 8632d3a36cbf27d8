#pragma once

#include "hadamard/bundle.hpp"
#include "hadamard/testfn.hpp"

#include <limits>
#include <optional>

namespace hadamard {

using bundle::WaveOperator;
using geometry::SpacetimeModel;

// ---------------------------------------------------------------------------
// Constants and symbols
// ---------------------------------------------------------------------------

/// (α,0) = 1, (α,k) = α(α+2)…(α+2k−2).
inline double pochhammer_even(double alpha, int k) {
    double p = 1.0;
    for (int i = 0; i < k; ++i) p *= alpha + 2.0 * i;
    return p;
}

struct BetaConstants {
    double beta1 = 0.0;
    double beta2 = 0.0;
    bool beta2_used = false;  // only even m
};

inline BetaConstants beta_constants(int m) {
    if (m < 3) fail(ErrorCode::UnsupportedDimension, "kernel constants need m >= 3");
    BetaConstants b;
    const double pm = std::pow(kPi, -0.5 * m);
    if (m % 2) {
        double sgn = ((m + 1) / 2) % 2 ? -1.0 : 1.0;
        b.beta1 = 0.5 * sgn * std::pow(kPi, 0.5 * (2 - m)) / std::tgamma(0.5 * (4 - m));
    } else {
        b.beta1 = -0.5 * pm * std::tgamma(0.5 * m - 1.0);
        double sgn = (m / 2) % 2 ? -1.0 : 1.0;
        b.beta2 = sgn * std::pow(2.0, 1 - m) * pm / std::tgamma(0.5 * m);
        b.beta2_used = true;
    }
    return b;
}

/// β(α,m) = 2^{1−α} π^{(2−m)/2} / (Γ((α−m)/2+1) Γ(α/2)).
inline double riesz_beta(double alpha, int m) {
    return std::pow(2.0, 1.0 - alpha) * std::pow(kPi, 0.5 * (2 - m)) /
           (std::tgamma(0.5 * (alpha - m) + 1.0) * std::tgamma(0.5 * alpha));
}

// ---------------------------------------------------------------------------
// Series specification: ε schedule, window χ, time function
// ---------------------------------------------------------------------------

inline std::vector<double> default_eps_schedule(double scale) {
    return {0.1 * scale, 0.05 * scale, 0.025 * scale, 0.0125 * scale};
}

/// χ(x,y) = w(x) w(y), w a product of 1D smooth bridges: 1 on the inner box, 0 outside the outer box.
struct ChiWindow {
    Vec inner_lo, inner_hi, outer_lo, outer_hi;

    static ChiWindow from_chart(const geometry::ChartBox& c, double inner = 0.6, double outer = 0.9) {
        ChiWindow w;
        Vec mid = c.center(), half = 0.5 * (c.hi - c.lo);
        w.inner_lo = mid - inner * half;
        w.inner_hi = mid + inner * half;
        w.outer_lo = mid - outer * half;
        w.outer_hi = mid + outer * half;
        return w;
    }
    double point(const Vec& x) const {
        double v = 1.0;
        for (int i = 0; i < x.size(); ++i) {
            double lo = std::max(0.0, (x(i) - outer_lo(i)) / (inner_lo(i) - outer_lo(i)));
            double hi = std::max(0.0, (outer_hi(i) - x(i)) / (outer_hi(i) - inner_hi(i)));
            v *= smooth_bridge(std::min(lo, 1.0)) * smooth_bridge(std::min(hi, 1.0));
        }
        return v;
    }
    double operator()(const Vec& x, const Vec& y) const { return point(x) * point(y); }
};

struct SeriesSpec {
    int n = 0;
    int m = 4;
    std::vector<double> eps_schedule;
    std::function<double(const Vec&)> t_func;  // defaults to the time coordinate
    ChiWindow chi;

    double time(const Vec& x) const { return t_func ? t_func(x) : x(0); }
    void validate() const {
        if (eps_schedule.empty()) fail(ErrorCode::ConfigError, "eps_schedule is empty");
        for (std::size_t i = 0; i < eps_schedule.size(); ++i) {
            if (!(eps_schedule[i] > 0.0)) fail(ErrorCode::ConfigError, "eps_schedule must be positive");
            if (i && !(eps_schedule[i] < eps_schedule[i - 1]))
                fail(ErrorCode::ConfigError, "eps_schedule must be strictly decreasing");
        }
    }
};

// ---------------------------------------------------------------------------
// Tensor Chebyshev grids (Gauss–Lobatto) on [−R,R]^m
// ---------------------------------------------------------------------------

struct ChebGrid {
    int m = 0, n = 0;
    double R = 1.0;
    std::vector<double> t;   // 1D nodes, descending
    std::vector<double> bw;  // barycentric weights
    Eigen::MatrixXd D;       // 1D differentiation matrix on [−R,R]

    ChebGrid() = default;
    ChebGrid(int m_, int n_, double R_) : m(m_), n(n_), R(R_) {
        t.resize(n);
        bw.resize(n);
        for (int j = 0; j < n; ++j) {
            t[j] = R * std::cos(kPi * j / (n - 1));
            bw[j] = (j % 2 ? -1.0 : 1.0) * ((j == 0 || j == n - 1) ? 0.5 : 1.0);
        }
        D = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (i != j) D(i, j) = (bw[j] / bw[i]) / (t[i] - t[j]);
        for (int i = 0; i < n; ++i) D(i, i) = -D.row(i).sum();
    }

    std::size_t size() const {
        std::size_t s = 1;
        for (int a = 0; a < m; ++a) s *= static_cast<std::size_t>(n);
        return s;
    }
    Vec node(std::size_t k) const {
        Vec X(m);
        for (int a = m - 1; a >= 0; --a) {
            X(a) = t[k % n];
            k /= n;
        }
        return X;
    }
    std::size_t stride(int axis) const {
        std::size_t s = 1;
        for (int a = axis + 1; a < m; ++a) s *= static_cast<std::size_t>(n);
        return s;
    }
    bool contains(const Vec& X) const { return X.cwiseAbs().maxCoeff() <= R * (1.0 + 1e-12); }

    /// Barycentric interpolation weights along one axis.
    std::vector<double> weights(double x) const {
        std::vector<double> w(n, 0.0);
        for (int j = 0; j < n; ++j)
            if (x == t[j]) {
                w[j] = 1.0;
                return w;
            }
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
            w[j] = bw[j] / (x - t[j]);
            s += w[j];
        }
        for (double& v : w) v /= s;
        return w;
    }

    /// Derivative of a scalar field (n^m values, last axis fastest) along one axis.
    template <class T>
    void diff(const T* f, T* out, int axis) const {
        const std::size_t st = stride(axis), N = size(), block = st * n;
        for (std::size_t b0 = 0; b0 < N; b0 += block)
            for (std::size_t o = 0; o < st; ++o)
                for (int i = 0; i < n; ++i) {
                    T acc{};
                    for (int j = 0; j < n; ++j) acc += D(i, j) * f[b0 + o + j * st];
                    out[b0 + o + i * st] = acc;
                }
    }

    template <class T>
    T interp(const T* f, const std::vector<std::vector<double>>& W) const {
        std::vector<T> buf(f, f + size());
        std::size_t len = size();
        for (int a = m - 1; a >= 0; --a) {
            len /= n;
            for (std::size_t k = 0; k < len; ++k) {
                T acc{};
                for (int j = 0; j < n; ++j) acc += W[a][j] * buf[k * n + j];
                buf[k] = acc;
            }
        }
        return buf[0];
    }
    std::vector<std::vector<double>> weights(const Vec& X) const {
        std::vector<std::vector<double>> W(m);
        for (int a = 0; a < m; ++a) W[a] = weights(X(a));
        return W;
    }
};

/// r×r matrix field on a ChebGrid, component-major.
struct MatField {
    int r = 1;
    std::size_t N = 0;
    std::vector<cd> d;

    MatField() = default;
    MatField(int r_, std::size_t N_) : r(r_), N(N_), d(static_cast<std::size_t>(r_ * r_) * N_, cd(0.0)) {}
    CMat get(std::size_t k) const {
        CMat M(r, r);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < r; ++j) M(i, j) = d[(i * r + j) * N + k];
        return M;
    }
    void set(std::size_t k, const CMat& M) {
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < r; ++j) d[(i * r + j) * N + k] = M(i, j);
    }
    MatField diff(const ChebGrid& g, int axis) const {
        MatField out(r, N);
        for (int c = 0; c < r * r; ++c) g.diff(d.data() + c * N, out.d.data() + c * N, axis);
        return out;
    }
    CMat interp(const ChebGrid& g, const std::vector<std::vector<double>>& W) const {
        CMat M(r, r);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < r; ++j) M(i, j) = g.interp(d.data() + (i * r + j) * N, W);
        return M;
    }
};

// ---------------------------------------------------------------------------
// Transport equations for the Hadamard coefficients
// ---------------------------------------------------------------------------

struct TransportOptions {
    int K = 2;             // highest coefficient U_(K)
    int n_cheb = 13;       // Chebyshev points per axis (odd keeps the base point on the grid)
    double box_half = 0.5; // half width of the normal-coordinate box
    int n_sigma = 16;      // Gauss–Legendre points for the radial integral
    double ode_tol = 1e-13;
};

/// Hadamard coefficients U_(k)(x,y) for fixed y, sampled on a Chebyshev grid in normal
/// coordinates X about y (x = exp_y(E X)); each grid node is the endpoint of the ray t ↦ exp_y(tEX).
struct CoefficientTable {
    Vec y;
    Mat E;
    int m = 0, r = 1, K = 0;
    ChebGrid grid;
    std::vector<Vec> x;            // x(X) per node
    std::vector<double> mu;        // |det G|^{1/4}
    std::vector<double> log_sqrtG; // ln √|det G|
    std::vector<MatField> U;       // U[k]

    CMat eval(int k, const Vec& X) const {
        if (k < 0 || k > K) fail(ErrorCode::ConfigError, "coefficient index outside table");
        if (!grid.contains(X)) fail(ErrorCode::OutOfChart, "normal coordinate outside coefficient box");
        return U[k].interp(grid, grid.weights(X));
    }
    /// M = ½□Γ − m along the ray through X, from the radial derivative of ln √|G|.
    double transport_factor(const Vec& X) const {
        double out = 0.0;
        auto W = grid.weights(X);
        std::vector<double> dl(grid.size());
        for (int a = 0; a < m; ++a) {
            grid.diff(log_sqrtG.data(), dl.data(), a);
            out += X(a) * grid.interp(dl.data(), W);
        }
        return out;
    }
    std::size_t origin_node() const {
        std::size_t k = 0;
        for (int a = 0; a < m; ++a) k = k * grid.n + static_cast<std::size_t>(grid.n / 2);
        return k;
    }
};

inline CoefficientTable transport_coefficients(const WaveOperator& P, const Vec& y, const TransportOptions& opt = {}) {
    const SpacetimeModel& s = P.base;
    const int m = s.m, r = P.bundle.r;
    if (opt.K < 0) fail(ErrorCode::ConfigError, "K must be >= 0");
    if (opt.n_cheb < 3 || opt.n_cheb % 2 == 0) fail(ErrorCode::ConfigError, "n_cheb must be odd and >= 3");
    geometry::check_in_chart(s, y);

    CoefficientTable T;
    T.y = y;
    T.E = geometry::orthonormal_frame(s, y);
    T.m = m;
    T.r = r;
    T.K = opt.K;
    T.grid = ChebGrid(m, opt.n_cheb, opt.box_half);
    const ChebGrid& g = T.grid;
    const std::size_t N = g.size();
    const std::size_t k0 = T.origin_node();

    // rays: endpoint and parallel transport Φ along each
    T.x.resize(N);
    MatField Phi(r, N);
    geometry::RayOptions ro;
    ro.tol = opt.ode_tol;
    ro.extra_dim = 2 * r * r;
    ro.extra = [&P, r](const Vec& x, const Vec& u, const double* e, double* de) {
        auto w = bundle::connection_form(P, x);
        CMat W = CMat::Zero(r, r);
        for (int nu = 0; nu < P.base.m; ++nu) W += u(nu) * w[nu];
        CMat F(r, r);
        for (int i = 0; i < r * r; ++i) F(i / r, i % r) = cd(e[2 * i], e[2 * i + 1]);
        CMat dF = -W * F;
        for (int i = 0; i < r * r; ++i) {
            de[2 * i] = dF(i / r, i % r).real();
            de[2 * i + 1] = dF(i / r, i % r).imag();
        }
    };
    ro.extra0.assign(2 * r * r, 0.0);
    for (int i = 0; i < r; ++i) ro.extra0[2 * (i * r + i)] = 1.0;
    for (std::size_t k = 0; k < N; ++k) {
        Vec X = g.node(k);
        if (k == k0) {
            T.x[k] = y;
            Phi.set(k, CMat::Identity(r, r));
            continue;
        }
        geometry::RayResult rr = geometry::integrate_ray(s, y, T.E * X, {1.0}, ro);
        if (rr.chart_exit || rr.out.empty())
            fail(ErrorCode::FanTooNarrow, "normal-coordinate box leaves the chart; reduce box_half");
        T.x[k] = rr.out.back().x;
        CMat F(r, r);
        for (int i = 0; i < r * r; ++i) F(i / r, i % r) = cd(rr.out.back().extra[2 * i], rr.out.back().extra[2 * i + 1]);
        Phi.set(k, F);
    }

    // Jacobian ∂x/∂X, metric G in normal coordinates, its derivatives
    std::vector<std::vector<double>> xc(m, std::vector<double>(N)), dx(m * m, std::vector<double>(N));
    for (int mu = 0; mu < m; ++mu)
        for (std::size_t k = 0; k < N; ++k) xc[mu][k] = T.x[k](mu);
    for (int mu = 0; mu < m; ++mu)
        for (int a = 0; a < m; ++a) g.diff(xc[mu].data(), dx[mu * m + a].data(), a);
    std::vector<Mat> Jx(N), G(N);
    std::vector<std::vector<double>> Gc(m * m, std::vector<double>(N));
    T.mu.resize(N);
    T.log_sqrtG.resize(N);
    for (std::size_t k = 0; k < N; ++k) {
        Mat J(m, m);
        for (int mu = 0; mu < m; ++mu)
            for (int a = 0; a < m; ++a) J(mu, a) = dx[mu * m + a][k];
        if (k == k0) J = T.E;
        Jx[k] = J;
        G[k] = J.transpose() * s.metric(T.x[k]) * J;
        for (int i = 0; i < m * m; ++i) Gc[i][k] = G[k](i / m, i % m);
        double det = std::abs(G[k].determinant());
        T.mu[k] = (k == k0) ? 1.0 : std::pow(det, 0.25);
        T.log_sqrtG[k] = (k == k0) ? 0.0 : 0.5 * std::log(det);
    }
    std::vector<std::vector<double>> dG(m * m * m, std::vector<double>(N));
    for (int i = 0; i < m * m; ++i)
        for (int c = 0; c < m; ++c) g.diff(Gc[i].data(), dG[i * m + c].data(), c);

    // per-node operator data in normal coordinates: P = G^{ab}(∂_a∂_b − Γ̃^c_{ab}∂_c) + 2ω̃^a∂_a + B
    std::vector<Mat> Ginv(N);
    std::vector<std::vector<double>> Gam(N);  // Γ̃^c_{ab} at [(c*m+a)*m+b]
    std::vector<std::vector<CMat>> om(N);     // ω̃^a
    std::vector<CMat> Bn(N);
    for (std::size_t k = 0; k < N; ++k) {
        Ginv[k] = G[k].inverse();
        auto dGk = [&](int a, int b, int c) { return dG[(a * m + b) * m + c][k]; };  // ∂_c G_ab
        Gam[k].assign(m * m * m, 0.0);
        for (int c = 0; c < m; ++c)
            for (int a = 0; a < m; ++a)
                for (int b = 0; b < m; ++b) {
                    double v = 0.0;
                    for (int d = 0; d < m; ++d) v += Ginv[k](c, d) * (dGk(b, d, a) + dGk(a, d, b) - dGk(a, b, d));
                    Gam[k][(c * m + a) * m + b] = 0.5 * v;
                }
        auto w = bundle::connection_form(P, T.x[k]);
        Mat ginv = s.metric(T.x[k]).inverse();
        Mat Jinv = Jx[k].inverse();
        om[k].assign(m, CMat::Zero(r, r));
        for (int a = 0; a < m; ++a)
            for (int nu = 0; nu < m; ++nu)
                for (int sg = 0; sg < m; ++sg) om[k][a] += Jinv(a, nu) * ginv(nu, sg) * w[sg];
        Bn[k] = P.bundle.B(T.x[k]);
    }

    // U_0 = μ^{-1} Φ; U_k = μ^{-1} Φ c_k with c_k(X) = −½ ∫_0^1 σ^{k−1} S(σX) dσ, S = μ Φ^{-1} P U_{k−1}
    T.U.assign(opt.K + 1, MatField(r, N));
    std::vector<CMat> PhiInv(N);
    for (std::size_t k = 0; k < N; ++k) {
        T.U[0].set(k, Phi.get(k) / T.mu[k]);
        PhiInv[k] = Phi.get(k).inverse();
    }
    Rule sig = gauss_legendre(opt.n_sigma, 0.0, 1.0);
    for (int kk = 1; kk <= opt.K; ++kk) {
        const MatField& F = T.U[kk - 1];
        std::vector<MatField> d1(m);
        std::vector<MatField> d2(m * m);
        for (int a = 0; a < m; ++a) d1[a] = F.diff(g, a);
        for (int a = 0; a < m; ++a)
            for (int b = a; b < m; ++b) d2[a * m + b] = d1[a].diff(g, b);
        MatField S(r, N);
        for (std::size_t k = 0; k < N; ++k) {
            CMat PF = Bn[k] * F.get(k);
            std::vector<CMat> Fa(m);
            for (int a = 0; a < m; ++a) Fa[a] = d1[a].get(k);
            for (int a = 0; a < m; ++a) {
                PF += 2.0 * om[k][a] * Fa[a];
                for (int b = 0; b < m; ++b) {
                    CMat Fab = d2[std::min(a, b) * m + std::max(a, b)].get(k);
                    for (int c = 0; c < m; ++c) Fab -= Gam[k][(c * m + a) * m + b] * Fa[c];
                    PF += Ginv[k](a, b) * Fab;
                }
            }
            S.set(k, T.mu[k] * PhiInv[k] * PF);
        }
        for (std::size_t k = 0; k < N; ++k) {
            Vec X = g.node(k);
            CMat c = CMat::Zero(r, r);
            for (std::size_t j = 0; j < sig.size(); ++j)
                c += sig.w[j] * std::pow(sig.x[j], kk - 1) * S.interp(g, g.weights(Vec(sig.x[j] * X)));
            T.U[kk].set(k, Phi.get(k) * (-0.5 * c) / T.mu[k]);
        }
    }
    return T;
}

// ---------------------------------------------------------------------------
// Series assembly U, V^(n), T^(n)
// ---------------------------------------------------------------------------

enum class SeriesTerm { U, V, T };

struct SeriesTermEntry {
    int index = 0;  // k in U_(k)
    int power = 0;  // exponent of s
    double coef = 0.0;
    bool operator==(const SeriesTermEntry&) const = default;
};

/// Terms coef · U_(index) · s^power of the requested section; throws BadParity on the wrong parity.
inline std::vector<SeriesTermEntry> series_terms(SeriesTerm which, int m, int n) {
    std::vector<SeriesTermEntry> out;
    const bool even = m % 2 == 0;
    if (m < 3) fail(ErrorCode::UnsupportedDimension, "series needs m >= 3");
    switch (which) {
        case SeriesTerm::U:
            if (!even) fail(ErrorCode::BadParity, "U is defined for even m only");
            for (int k = 0; k <= (m - 4) / 2; ++k) out.push_back({k, k, 1.0 / pochhammer_even(4 - m, k)});
            break;
        case SeriesTerm::V: {
            if (!even) fail(ErrorCode::BadParity, "V is defined for even m only");
            double pre = pochhammer_even(2.0, m / 2 - 1);
            double fact = 1.0;
            for (int k = 0; k <= n; ++k) {
                if (k) fact *= 2.0 * k;
                out.push_back({(m - 2) / 2 + k, k, pre / fact});
            }
            break;
        }
        case SeriesTerm::T:
            if (even) fail(ErrorCode::BadParity, "T is defined for odd m only");
            for (int k = 0; k <= n + (m - 3) / 2; ++k) out.push_back({k, k, 1.0 / pochhammer_even(4 - m, k)});
            break;
    }
    return out;
}

/// Highest U_(k) index a section needs.
inline int series_order(SeriesTerm which, int m, int n) {
    int k = 0;
    for (const auto& t : series_terms(which, m, n)) k = std::max(k, t.index);
    return k;
}

/// Section evaluator in terms of coefficient values and s.
struct SeriesEvaluator {
    int m = 0, n = 0;
    std::function<CMat(int k, const Vec& X)> coeff;

    CMat operator()(SeriesTerm which, const Vec& X, double s) const {
        auto terms = series_terms(which, m, n);
        CMat out;
        for (const auto& e : terms) {
            CMat t = e.coef * std::pow(s, e.power) * coeff(e.index, X);
            out = out.size() ? CMat(out + t) : t;
        }
        return out;
    }
};

/// Evaluators over a coefficient table; X are normal coordinates about the table base point and s = −η(X,X).
inline SeriesEvaluator assemble_series(const CoefficientTable& table, int n) {
    SeriesEvaluator ev;
    ev.m = table.m;
    ev.n = n;
    const CoefficientTable* t = &table;
    ev.coeff = [t](int k, const Vec& X) { return t->eval(k, X); };
    return ev;
}

/// Evaluators for constant coefficients (translation-invariant flat configurations).
inline SeriesEvaluator constant_series(int m, int n, std::vector<CMat> Uk) {
    SeriesEvaluator ev;
    ev.m = m;
    ev.n = n;
    ev.coeff = [Uk = std::move(Uk)](int k, const Vec&) {
        if (k >= static_cast<int>(Uk.size())) fail(ErrorCode::ConfigError, "coefficient order not available");
        return Uk[k];
    };
    return ev;
}

/// Flat P = □ + 𝗆²: U_(k) = (−𝗆²/2)^k / k!.
inline std::vector<CMat> flat_massive_coefficients(double mass, int K) {
    std::vector<CMat> out;
    double v = 1.0;
    for (int k = 0; k <= K; ++k) {
        if (k) v *= -0.5 * mass * mass / k;
        out.push_back(CMat::Constant(1, 1, v));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Regularized kernels
// ---------------------------------------------------------------------------

enum class KernelTerm { G1, G2 };

inline cd kernel_argument(double s, double tx, double ty, double eps) {
    return cd(s + eps * eps, -2.0 * eps * (tx - ty));
}

/// Overall sign applied to the printed constants so that G^(1)(−) = iR(2) and G^(2)(−) = iR(m) hold
/// against the flat fundamental solution; −1 for even m.
inline double kernel_normalization(int m) { return m % 2 ? 1.0 : -1.0; }

enum class KernelConvention { Locked, Printed };

/// β1 arg^{1−m/2} or β2 ln(arg), principal branch (cut on the negative real axis).
inline cd kernel_factor(int m, KernelTerm term, cd arg, KernelConvention conv = KernelConvention::Locked) {
    if (arg.imag() == 0.0 && arg.real() <= 0.0) fail(ErrorCode::BranchCutHit, "kernel argument on the branch cut");
    BetaConstants b = beta_constants(m);
    const double sg = conv == KernelConvention::Locked ? kernel_normalization(m) : 1.0;
    if (term == KernelTerm::G2) {
        if (!b.beta2_used) fail(ErrorCode::BadParity, "logarithmic term exists for even m only");
        return sg * b.beta2 * std::log(arg);
    }
    if (m == 3) return b.beta1 / std::sqrt(arg);
    if (m % 2 == 0) return sg * b.beta1 * std::pow(arg, -(m / 2 - 1));
    return b.beta1 * std::pow(arg, 1.0 - 0.5 * m);
}

/// χG^(1)_ε (+ χG^(2)_ε for even m) at the pair (x,y), with coefficient sections supplied per pair.
using PairSeries = std::function<CMat(SeriesTerm, const Vec& x, const Vec& y, double s)>;

inline CMat kernel_eps(const SpacetimeModel& geo, const SeriesSpec& spec, const PairSeries& coeffs, const Vec& x,
                       const Vec& y, double eps) {
    if (!(eps > 0.0)) fail(ErrorCode::ConfigError, "eps must be positive");
    double chi = spec.chi(x, y);
    const int m = spec.m;
    if (chi == 0.0) {
        CMat Z = coeffs(m % 2 ? SeriesTerm::T : SeriesTerm::U, x, x, 0.0);
        return CMat::Zero(Z.rows(), Z.cols());
    }
    double s = geometry::world_function(geo, x, y).s;
    cd arg = kernel_argument(s, spec.time(x), spec.time(y), eps);
    if (m % 2) return chi * kernel_factor(m, KernelTerm::G1, arg) * coeffs(SeriesTerm::T, x, y, s);
    return chi * (kernel_factor(m, KernelTerm::G1, arg) * coeffs(SeriesTerm::U, x, y, s) +
                  kernel_factor(m, KernelTerm::G2, arg) * coeffs(SeriesTerm::V, x, y, s));
}

/// Pair evaluator from a translation-invariant series (flat).
inline PairSeries flat_pair_series(const SeriesEvaluator& ev) {
    return [ev](SeriesTerm w, const Vec& x, const Vec& y, double s) { return ev(w, Vec(y - x), s); };
}

// ---------------------------------------------------------------------------
// ε → 0 extrapolation
// ---------------------------------------------------------------------------

struct Extrapolated {
    cd value;
    double error = 0.0;
    std::vector<double> eps;
    std::vector<cd> samples;
};

/// Neville–Richardson elimination of the ε¹…ε^order terms; the error estimate is the
/// difference of the two most refined extrapolants of the highest order reached.
inline Extrapolated richardson(const std::vector<double>& eps, const std::vector<cd>& values, int order = 2) {
    const std::size_t n = values.size();
    if (n == 0 || eps.size() != n) fail(ErrorCode::ConfigError, "richardson needs matching eps/value lists");
    Extrapolated out;
    out.eps = eps;
    out.samples = values;
    std::vector<cd> row = values;
    std::vector<double> e = eps;
    int p = 0;
    for (; p < order && row.size() > 2; ++p) {
        std::vector<cd> next;
        for (std::size_t i = 0; i + 1 < row.size(); ++i) {
            double ratio = eps[i] / eps[i + 1 + p];
            next.push_back((ratio * row[i + 1] - row[i]) / (ratio - 1.0));
        }
        row = next;
    }
    out.value = row.back();
    out.error = row.size() > 1 ? std::abs(row.back() - row[row.size() - 2]) : std::abs(values.back() - values.front());
    return out;
}

/// Evaluates the ε-family pairing along the schedule and extrapolates; NonConvergent if the estimate exceeds tol
/// or the raw sequence fails to contract.
inline Extrapolated evaluate_distribution(const std::function<std::vector<cd>(const std::vector<double>&)>& pairing,
                                          const std::vector<double>& eps_schedule, double tol = -1.0,
                                          int order = 2) {
    std::vector<cd> vals = pairing(eps_schedule);
    if (vals.size() != eps_schedule.size()) fail(ErrorCode::ConfigError, "pairing returned wrong number of values");
    for (const cd& v : vals)
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) fail(ErrorCode::NonConvergent, "non-finite pairing");
    Extrapolated ex = richardson(eps_schedule, vals, order);
    if (vals.size() >= 3) {
        double d1 = std::abs(vals[vals.size() - 2] - vals[vals.size() - 3]);
        double d2 = std::abs(vals.back() - vals[vals.size() - 2]);
        if (d2 > d1 * 1.01 && d2 > 1e-13 * (1.0 + std::abs(vals.back())))
            fail(ErrorCode::NonConvergent, "epsilon sequence does not contract");
    }
    if (tol >= 0.0 && ex.error > tol) fail(ErrorCode::NonConvergent, "extrapolation error estimate above tolerance");
    return ex;
}

// ---------------------------------------------------------------------------
// Riesz distributions on Minkowski space
// ---------------------------------------------------------------------------

enum class RieszSide { Difference, Future };

struct RieszRule {
    int n_tau = 40;   // per half-line
    int n_psi = 24;
    int n_azimuth = 24;
    int n_polar = 16;
};

/// −β(α,m) ∫ sign(x₀) θ(η) η^{(α−m)/2} φ for α > m − 1 (Difference); the Future side is β ∫_{J⁺} η^{(α−m)/2} φ.
inline double riesz_direct(double alpha, int m, const PolyGaussian& phi, RieszSide side = RieszSide::Difference,
                           const RieszRule& rule = {}) {
    if (!(alpha > m - 1)) fail(ErrorCode::NeedsDerivatives, "direct quadrature needs alpha > m - 1");
    const double L = phi.extent();
    double t_lo = phi.c(0) - L, t_hi = phi.c(0) + L;
    if (side == RieszSide::Future) t_lo = std::max(t_lo, 0.0);
    if (t_hi <= t_lo) return 0.0;
    SphereRule sph = sphere_rule(m - 1, rule.n_azimuth, rule.n_polar);
    const double beta = riesz_beta(alpha, m);
    double acc = 0.0;
    Vec z(m);
    for_each_solid_cone_node(m, t_lo, t_hi, rule.n_tau, rule.n_psi, [&](double tau, double rho, double c, double w) {
        double ang = 0.0;
        z(0) = tau;
        for (std::size_t i = 0; i < sph.dir.size(); ++i) {
            z.tail(m - 1) = rho * sph.dir[i];
            ang += sph.w[i] * phi(z);
        }
        double eta_pow = std::pow(std::abs(tau) * c, alpha - m);
        double sgn = tau > 0 ? 1.0 : -1.0;
        acc += w * eta_pow * ang * (side == RieszSide::Difference ? sgn : 1.0);
    });
    return (side == RieszSide::Difference ? -beta : beta) * acc;
}

/// R̃(α)[φ] for any α through the descent R̃(α)[φ] = R̃(α+2)[□φ].
inline double riesz(double alpha, int m, const PolyGaussian& phi, RieszSide side = RieszSide::Difference,
                    const RieszRule& rule = {}) {
    int j = 0;
    while (!(alpha + 2 * j > m)) ++j;
    return riesz_direct(alpha + 2 * j, m, j ? phi.box_power(j) : phi, side, rule);
}

/// Overload for test functions without derivative data.
inline double riesz(double alpha, int m, const std::function<double(const Vec&)>& phi, const Vec& center,
                    double extent, const RieszRule& rule = {}) {
    if (!(alpha > m)) fail(ErrorCode::NeedsDerivatives, "descent requested for a test function without derivatives");
    SphereRule sph = sphere_rule(m - 1, rule.n_azimuth, rule.n_polar);
    double acc = 0.0;
    Vec z(m);
    for_each_solid_cone_node(m, center(0) - extent, center(0) + extent, rule.n_tau, rule.n_psi,
                             [&](double tau, double rho, double c, double w) {
                                 double ang = 0.0;
                                 z(0) = tau;
                                 for (std::size_t i = 0; i < sph.dir.size(); ++i) {
                                     z.tail(m - 1) = rho * sph.dir[i];
                                     ang += sph.w[i] * phi(z);
                                 }
                                 acc += w * std::pow(std::abs(tau) * c, alpha - m) * ang * (tau > 0 ? 1.0 : -1.0);
                             });
    return -riesz_beta(alpha, m) * acc;
}

// ---------------------------------------------------------------------------
// Flat pairings in the difference variable
// ---------------------------------------------------------------------------

/// ∫ K_ε(z) c(s(z)) F(z) dz for every ε, z = y − x, K the flat G^(1) or G^(2) kernel with t = x₀;
/// `antisym` replaces F(z) by ½(F(z) − F(−z)).
inline std::vector<cd> flat_pairing(int m, KernelTerm term, const PolyGaussian& F, const std::vector<double>& eps,
                                    const std::function<cd(double s)>& coeff = nullptr, bool antisym = false,
                                    const ConeRule& rule = {}, KernelConvention conv = KernelConvention::Locked) {
    const double L = F.extent();
    const double reach = F.c.norm() + L;
    double t_lo = antisym ? -reach : F.c(0) - L, t_hi = antisym ? reach : F.c(0) + L;
    double rho_max = antisym ? reach : F.c.tail(m - 1).norm() + L;
    const double e_min = *std::min_element(eps.begin(), eps.end());
    SphereRule sph = sphere_rule(m - 1, rule.n_azimuth, rule.n_polar);
    PolyGaussian Fr = F.reflected();
    std::vector<cd> acc(eps.size(), cd(0.0));
    Vec z(m);
    for_each_cone_node(m, t_lo, t_hi, rho_max, e_min, rule, [&](double tau, double rho, double w) {
        double ang = 0.0;
        z(0) = tau;
        for (std::size_t i = 0; i < sph.dir.size(); ++i) {
            z.tail(m - 1) = rho * sph.dir[i];
            double v = F(z);
            if (antisym) v = 0.5 * (v - Fr(z));
            ang += sph.w[i] * v;
        }
        if (ang == 0.0) return;
        const double s = rho * rho - tau * tau;
        const cd c = coeff ? coeff(s) : cd(1.0);
        for (std::size_t e = 0; e < eps.size(); ++e)
            acc[e] += w * ang * c * kernel_factor(m, term, kernel_argument(s, 0.0, tau, eps[e]), conv);
    });
    return acc;
}

/// Same pairing for f ⊗ f′ with a general time function, integrating over x (Gauss–Hermite in the
/// principal axes of f) and z = y − x with the cone-adapted rule.
inline std::vector<cd> general_flat_pairing(int m, KernelTerm term, const PolyGaussian& f, const PolyGaussian& fp,
                                            const std::function<double(const Vec&)>& t_func,
                                            const std::vector<double>& eps, int n_outer = 6,
                                            const ConeRule& rule = {}) {
    if (f.poly.size() != 1) fail(ErrorCode::ConfigError, "outer factor must be a plain Gaussian");
    Eigen::SelfAdjointEigenSolver<Mat> es(f.A);
    Mat axes = es.eigenvectors();
    Vec sig = es.eigenvalues().cwiseSqrt().cwiseInverse();
    std::vector<Rule> gh(m);
    for (int a = 0; a < m; ++a) gh[a] = gauss_hermite(n_outer, 0.0, sig(a));
    const double amp = f.poly.begin()->second;
    const double e_min = *std::min_element(eps.begin(), eps.end());
    const double L = fp.extent();
    SphereRule sph = sphere_rule(m - 1, rule.n_azimuth, rule.n_polar);
    std::vector<cd> acc(eps.size(), cd(0.0));
    std::vector<int> idx(m, 0);
    const std::size_t total = static_cast<std::size_t>(std::pow(n_outer, m));
    Vec z(m), xo(m);
    for (std::size_t k = 0; k < total; ++k) {
        std::size_t kk = k;
        double wx = amp;
        Vec loc(m);
        for (int a = m - 1; a >= 0; --a) {
            int i = static_cast<int>(kk % n_outer);
            kk /= n_outer;
            loc(a) = gh[a].x[i];
            wx *= gh[a].w[i];
        }
        Vec x = f.c + axes * loc;
        const double tx = t_func(x);
        Vec cz = fp.c - x;
        double t_lo = cz(0) - L, t_hi = cz(0) + L, rho_max = cz.tail(m - 1).norm() + L;
        for_each_cone_node(m, t_lo, t_hi, rho_max, e_min, rule, [&](double tau, double rho, double w) {
            z(0) = tau;
            const double s = rho * rho - tau * tau;
            for (std::size_t i = 0; i < sph.dir.size(); ++i) {
                z.tail(m - 1) = rho * sph.dir[i];
                Vec y = x + z;
                double v = fp(y);
                if (v == 0.0) continue;
                double ty = t_func(y);
                for (std::size_t e = 0; e < eps.size(); ++e)
                    acc[e] += wx * w * sph.w[i] * v * kernel_factor(m, term, kernel_argument(s, tx, ty, eps[e]));
            }
        });
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Consistency identities
// ---------------------------------------------------------------------------

struct CommutatorReport {
    cd g1_antisym;        // G^(1,Ω)(−)(f ⊗ f′), extrapolated
    double g1_error = 0;  // extrapolation error estimate
    cd i_r2;              // i R^Ω(2)(f ⊗ f′)
    double residual = 0;  // |g1_antisym − i_r2|
    double scale = 0;     // max(|g1_antisym|, |i_r2|)
};

/// Flat massless scalar check of G^(1,Ω)(−) = i R^Ω(2) for Gaussian test functions.
inline CommutatorReport commutator_identity_check(int m, const PolyGaussian& f, const PolyGaussian& fp,
                                                  const std::vector<double>& eps, const ConeRule& rule = {},
                                                  const RieszRule& rrule = {}) {
    PolyGaussian F = cross_correlation(f, fp);
    Extrapolated ex = evaluate_distribution(
        [&](const std::vector<double>& e) { return flat_pairing(m, KernelTerm::G1, F, e, nullptr, true, rule); }, eps);
    CommutatorReport rep;
    rep.g1_antisym = ex.value;
    rep.g1_error = ex.error;
    rep.i_r2 = kI * riesz(2.0, m, F, RieszSide::Difference, rrule);
    rep.residual = std::abs(rep.g1_antisym - rep.i_r2);
    rep.scale = std::max(std::abs(rep.g1_antisym), std::abs(rep.i_r2));
    return rep;
}

/// Truncated parametrix pairing (f, E f′) on flat space for constant coefficients U_(k):
/// odd m: R(2)[T^(n)], even m: R(2)[U] + R(m)[V^(n)], each s^k term via η^k = (−s)^k weighting.
inline double local_parametrix(int m, int n, const std::vector<double>& Uk, const PolyGaussian& f,
                               const PolyGaussian& fp, const RieszRule& rule = {}) {
    PolyGaussian F = cross_correlation(f, fp);
    auto apply = [&](SeriesTerm which, double alpha) {
        double acc = 0.0;
        for (const auto& e : series_terms(which, m, n)) {
            const int k = e.power;
            if (e.index >= static_cast<int>(Uk.size())) fail(ErrorCode::ConfigError, "coefficient order not available");
            if (Uk[e.index] == 0.0) continue;
            // η^k R̃(α) = (α,k)-shifted Riesz family: η^k R̃(α) = β(α,m)/β(α+2k,m) R̃(α+2k); s^k = (−η)^k
            double shift = k ? riesz_beta(alpha, m) / riesz_beta(alpha + 2 * k, m) : 1.0;
            acc += e.coef * Uk[e.index] * std::pow(-1.0, k) * shift * riesz(alpha + 2 * k, m, F, RieszSide::Difference, rule);
        }
        return acc;
    };
    if (m % 2) return apply(SeriesTerm::T, 2.0);
    return apply(SeriesTerm::U, 2.0) + apply(SeriesTerm::V, static_cast<double>(m));
}

/// Closed-form flat (f, E f′) for m = 4: E = −(δ(z₀−|z⃗|) − δ(z₀+|z⃗|)) / (4π|z⃗|) in the difference variable.
inline double flat_commutator_m4(const PolyGaussian& f, const PolyGaussian& fp, int n_rho = 96, int n_az = 32,
                                 int n_pol = 24) {
    PolyGaussian F = cross_correlation(f, fp);
    const double R = F.c.norm() + F.extent();
    Rule rr = gauss_legendre(n_rho, 0.0, R);
    SphereRule sph = sphere_rule(3, n_az, n_pol);
    double acc = 0.0;
    Vec z(4);
    for (std::size_t j = 0; j < rr.size(); ++j) {
        double rho = rr.x[j], a = 0.0;
        for (std::size_t i = 0; i < sph.dir.size(); ++i) {
            z.tail(3) = rho * sph.dir[i];
            z(0) = rho;
            double fp_ = F(z);
            z(0) = -rho;
            a += sph.w[i] * (fp_ - F(z));
        }
        acc += rr.w[j] * rho * a;
    }
    return -acc / (4.0 * kPi);
}

}  // namespace hadamard
