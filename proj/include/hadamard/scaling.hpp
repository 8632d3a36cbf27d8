#pragma once

#include "hadamard/bundle.hpp"
#include "hadamard/hadamard.hpp"
#include "hadamard/microlocal.hpp"

namespace hadamard::scaling {

using bundle::DiracModel;
using bundle::WaveOperator;
using geometry::SpacetimeModel;

inline std::vector<double> default_lambda_seq() { return {1.0, 0.5, 0.25, 0.125, 0.0625}; }
inline double ccr_exponent(int m) { return 0.5 * m + 1.0; }
inline double car_exponent(int m) { return ccr_exponent(m) - 0.5; }

// ---------------------------------------------------------------------------
// Probes and dilations
// ---------------------------------------------------------------------------

struct ScalingProbe {
    Vec p;
    Mat E;  // orthonormal frame at p; normal coordinates are Z ↦ exp_p(E Z)
    double alpha = 0.0;
    std::vector<double> lambda_seq;
    CMat frame;                  // bundle frame components at p
    double lambda_floor = 1.0 / 1024.0;
    std::string frame_note = "normal coordinates at p; bundle frame constant in the trivialization";

    void validate() const {
        if (lambda_seq.empty()) fail(ErrorCode::ConfigError, "lambda_seq is empty");
        for (std::size_t i = 0; i < lambda_seq.size(); ++i) {
            double l = lambda_seq[i];
            if (!(l > 0.0 && l <= 1.0)) fail(ErrorCode::ConfigError, "lambda values must lie in (0,1]");
            if (l < lambda_floor) fail(ErrorCode::ConfigError, "lambda below the quadrature resolution floor");
            if (i && !(l < lambda_seq[i - 1])) fail(ErrorCode::ConfigError, "lambda_seq must be strictly decreasing");
        }
        if (E.rows() != p.size() || E.cols() != p.size()) fail(ErrorCode::ConfigError, "probe frame has wrong size");
    }
};

inline ScalingProbe make_probe(const SpacetimeModel& s, const Vec& p, double alpha, int r = 1,
                               std::vector<double> seq = default_lambda_seq()) {
    geometry::check_in_chart(s, p);
    ScalingProbe pr;
    pr.p = p;
    pr.E = geometry::orthonormal_frame(s, p);
    pr.alpha = alpha;
    pr.lambda_seq = std::move(seq);
    pr.frame = CMat::Identity(r, r);
    pr.validate();
    return pr;
}

/// Components of D_λ^{(α)} in the trivialization: λ^{−α} times the frame matrix.
inline CMat frame_lift(const ScalingProbe& pr, double lam) { return std::pow(lam, -pr.alpha) * pr.frame; }

/// Constant fibre vector times a Gaussian in normal coordinates at the probe point.
struct TestSection {
    CVec v;
    PolyGaussian g;

    CVec operator()(const Vec& Z) const { return v * g(Z); }
    double width() const {
        Eigen::SelfAdjointEigenSolver<Mat> es(g.A);
        return 1.0 / std::sqrt(es.eigenvalues().maxCoeff());
    }
    double reach(double sigmas = 6.0) const { return g.c.cwiseAbs().maxCoeff() + g.extent(sigmas); }
};

inline TestSection make_test_section(const CVec& v, const Vec& center, double width, double amplitude = 1.0) {
    return {v, PolyGaussian::isotropic(center, width, amplitude)};
}

/// Half width of the largest coordinate cube about p inside the chart.
inline double chart_radius(const SpacetimeModel& s, const Vec& p) {
    double r = std::numeric_limits<double>::infinity();
    for (int i = 0; i < s.m; ++i) r = std::min({r, p(i) - s.chart.lo(i), s.chart.hi(i) - p(i)});
    return r;
}

/// D_λ^{(α)} f = λ^{−α} (frame-lifted) f ∘ δ_λ^{−1}, exact in normal coordinates.
inline TestSection dilate_section(const ScalingProbe& pr, double lam, const TestSection& f,
                                  double radius = std::numeric_limits<double>::infinity()) {
    if (!(lam > 0.0)) fail(ErrorCode::ConfigError, "dilation parameter must be positive");
    TestSection out;
    out.v = pr.frame * f.v;
    out.g = f.g;
    out.g.c = lam * f.g.c;
    out.g.A = f.g.A / (lam * lam);
    out.g.poly.clear();
    for (const auto& [e, coef] : f.g.poly) {
        int deg = 0;
        for (int i = 0; i < f.g.m; ++i) deg += e[i];
        out.g.poly[e] = coef * std::pow(lam, -deg - pr.alpha);
    }
    if (out.reach() > radius) fail(ErrorCode::SupportEscape, "dilated support leaves the normal-coordinate domain");
    return out;
}

/// Chart-coordinate version for arbitrary sections, through geodesic normal coordinates at p.
inline bundle::Section dilate_chart_section(const SpacetimeModel& s, const ScalingProbe& pr, double lam,
                                            bundle::Section f) {
    if (!(lam > 0.0)) fail(ErrorCode::ConfigError, "dilation parameter must be positive");
    const int r = static_cast<int>(f(pr.p).size());
    return [s, pr, lam, f, r](const Vec& q) -> CVec {
        Vec X = geometry::inverse_normal_coordinates(s, pr.p, q, pr.E);
        Vec src;
        try {
            src = geometry::normal_coordinates(s, pr.p, Vec(X / lam), pr.E);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::OutOfChart) throw;
            return CVec::Zero(r);  // δ_λ^{−1}(q) outside the chart, where f vanishes
        }
        return std::pow(lam, -pr.alpha) * (pr.frame * f(src));
    };
}

// ---------------------------------------------------------------------------
// Pairings of the regularized kernel with test sections
// ---------------------------------------------------------------------------

enum class FirstSlot { Plain, Dirac, DiracDerivative, DiracMass };
enum class KernelTerms { Both, G1Only, G2Only };

namespace detail {

inline bool uses_g1(KernelTerms t) { return t != KernelTerms::G2Only; }
inline bool uses_g2(int m, KernelTerms t) { return m % 2 == 0 && t != KernelTerms::G1Only; }

inline void require_plain_gaussian(const PolyGaussian& g) {
    if (g.poly.size() != 1 || !g.poly.count(Exponent{}))
        fail(ErrorCode::ConfigError, "test sections must be plain Gaussians");
}

/// Several complex fields on one Chebyshev grid, interpolated with shared weights.
struct FieldPack {
    const ChebGrid* g = nullptr;
    int C = 0;
    std::vector<cd> d;  // component-major

    FieldPack() = default;
    FieldPack(const ChebGrid& grid, int comps) : g(&grid), C(comps), d(static_cast<std::size_t>(comps) * grid.size()) {}
    cd& at(int c, std::size_t k) { return d[c * g->size() + k]; }

    void eval(const std::vector<std::vector<double>>& W, cd* out, std::vector<cd>& scratch) const {
        const int n = g->n, m = g->m;
        const std::size_t N = g->size();
        scratch.resize(N / n);
        for (int c = 0; c < C; ++c) {
            const cd* f = d.data() + c * N;
            std::size_t len = N / n;
            for (std::size_t k = 0; k < len; ++k) {
                cd acc = 0.0;
                for (int j = 0; j < n; ++j) acc += W[m - 1][j] * f[k * n + j];
                scratch[k] = acc;
            }
            for (int a = m - 2; a >= 0; --a) {
                len /= n;
                for (std::size_t k = 0; k < len; ++k) {
                    cd acc = 0.0;
                    for (int j = 0; j < n; ++j) acc += W[a][j] * scratch[k * n + j];
                    scratch[k] = acc;
                }
            }
            out[c] = scratch[0];
        }
    }
};

/// exp_p tabulated on a Chebyshev box in normal coordinates at p, with Newton inversion.
struct BaseMap {
    int m = 0;
    Vec p;
    Mat E, Einv;
    CoefficientTable T;
    FieldPack pack;  // x (m), ∂x/∂Z (m²), ln √|G| (1)
    mutable std::vector<cd> scratch;

    BaseMap(const BaseMap&) = delete;
    BaseMap& operator=(const BaseMap&) = delete;
    BaseMap(const WaveOperator& P, const Vec& p_, double half, int n_cheb) : m(P.base.m), p(p_) {
        TransportOptions o;
        o.K = 0;
        o.n_cheb = n_cheb;
        o.box_half = half;
        WaveOperator S{P.base, bundle::trivial_bundle(1, m)};
        T = transport_coefficients(S, p, o);
        E = T.E;
        Einv = E.inverse();
        const std::size_t N = T.grid.size();
        pack = FieldPack(T.grid, m + m * m + 1);
        std::vector<double> xc(N), dx(N);
        for (int mu = 0; mu < m; ++mu) {
            for (std::size_t k = 0; k < N; ++k) xc[k] = T.x[k](mu);
            for (std::size_t k = 0; k < N; ++k) pack.at(mu, k) = xc[k];
            for (int a = 0; a < m; ++a) {
                T.grid.diff(xc.data(), dx.data(), a);
                for (std::size_t k = 0; k < N; ++k) pack.at(m + mu * m + a, k) = dx[k];
            }
        }
        for (std::size_t k = 0; k < N; ++k) pack.at(m + m * m, k) = T.log_sqrtG[k];
    }

    struct Point {
        Vec x;
        Mat J;
        double log_sqrtG = 0.0;
    };
    Point at(const Vec& Z) const {
        if (!T.grid.contains(Z)) { fail(ErrorCode::SupportEscape, "point outside the normal-coordinate table at p"); }
        std::vector<cd> v(pack.C);
        pack.eval(T.grid.weights(Z), v.data(), scratch);
        Point out;
        out.x.resize(m);
        out.J.resize(m, m);
        for (int mu = 0; mu < m; ++mu) {
            out.x(mu) = v[mu].real();
            for (int a = 0; a < m; ++a) out.J(mu, a) = v[m + mu * m + a].real();
        }
        out.log_sqrtG = v[m + m * m].real();
        return out;
    }
    Vec log(const Vec& x) const {
        Vec Z = Einv * (x - p);
        for (int it = 0; it < 40; ++it) {
            Point q = at(Z);
            Vec dZ = q.J.partialPivLu().solve(Vec(x - q.x));
            Z += dZ;
            if (dZ.norm() < 1e-14 * (1.0 + Z.norm())) return Z;
        }
        fail(ErrorCode::NoConvergence, "Newton inversion of the normal-coordinate map failed");
    }
};

/// Principal-axis Gauss–Hermite rule for a plain Gaussian; weights include its amplitude.
inline std::vector<std::pair<Vec, double>> gaussian_nodes(const PolyGaussian& g, int n) {
    const int m = g.m;
    Eigen::SelfAdjointEigenSolver<Mat> es(g.A);
    Mat axes = es.eigenvectors();
    Vec sig = es.eigenvalues().cwiseSqrt().cwiseInverse();
    std::vector<Rule> gh(m);
    for (int a = 0; a < m; ++a) gh[a] = gauss_hermite(n, 0.0, sig(a));
    const double amp = g.poly.begin()->second;
    std::vector<std::pair<Vec, double>> out;
    const std::size_t total = static_cast<std::size_t>(std::pow(n, m));
    for (std::size_t k = 0; k < total; ++k) {
        std::size_t kk = k;
        Vec loc(m);
        double w = amp;
        for (int a = m - 1; a >= 0; --a) {
            int i = static_cast<int>(kk % n);
            kk /= n;
            loc(a) = gh[a].x[i];
            w *= gh[a].w[i];
        }
        out.emplace_back(Vec(g.c + axes * loc), w);
    }
    return out;
}

inline CMat upper_gamma(const std::vector<CMat>& gammas, int mu) { return mu == 0 ? gammas[0] : CMat(-gammas[mu]); }

}  // namespace detail

struct PairingOptions {
    int n = 1;            // series truncation order
    int n_outer = 4;      // Gauss–Hermite points per axis for the second slot
    int n_cheb = 5;       // coefficient tables about each outer node
    int n_cheb_base = 9;  // normal-coordinate table at the probe point
    double reach = 6.0;   // Gaussian extent, in widths
    ConeRule rule{24, 16, 24, 8};
    KernelTerms terms = KernelTerms::Both;
};

/// ω(F ⊗ f′) for the regularized kernel of P on a curved base, F the first-slot section (f or a
/// Dirac image of f); one value per ε. Inner integrals run in normal coordinates about each outer
/// node, where the world function is exactly quadratic.
inline std::vector<cd> curved_pairing(const WaveOperator& P, const ScalingProbe& pr, const TestSection& f,
                                      const TestSection& fp, const std::vector<double>& eps,
                                      const PairingOptions& opt = {}, FirstSlot slot = FirstSlot::Plain,
                                      const DiracModel* dirac = nullptr) {
    const SpacetimeModel& s = P.base;
    const int m = s.m, r = P.bundle.r;
    detail::require_plain_gaussian(f.g);
    detail::require_plain_gaussian(fp.g);
    if (f.v.size() != r || fp.v.size() != r) fail(ErrorCode::ConfigError, "test section rank differs from bundle rank");
    if (slot != FirstSlot::Plain && !dirac) fail(ErrorCode::ConfigError, "Dirac first slot needs a Dirac model");
    if (eps.empty()) fail(ErrorCode::ConfigError, "eps list is empty");
    const double e_min = *std::min_element(eps.begin(), eps.end());
    const bool g1 = detail::uses_g1(opt.terms), g2 = detail::uses_g2(m, opt.terms);
    const SeriesTerm w1 = m % 2 ? SeriesTerm::T : SeriesTerm::U;
    const auto t1 = series_terms(w1, m, opt.n);
    const auto t2 = m % 2 ? std::vector<SeriesTermEntry>{} : series_terms(SeriesTerm::V, m, opt.n);
    int K = 0;
    for (const auto& t : t1) K = std::max(K, t.index);
    for (const auto& t : t2) K = std::max(K, t.index);

    const auto outer = detail::gaussian_nodes(fp.g, opt.n_outer);
    const double Lf = 1.1 * f.g.extent(opt.reach);
    // per outer node: base point, frame, first-slot centre and table half-width in its normal coordinates
    struct OuterNode {
        Vec y, cz;
        Mat Ey;
        double rho_max = 0.0, Ry = 0.0;
    };
    std::vector<OuterNode> nodes;
    const Vec xc = geometry::normal_coordinates(s, pr.p, f.g.c, pr.E);
    const Mat Einv = pr.E.inverse();
    double Rp = 0.0;
    for (const auto& [Y, w] : outer) {
        OuterNode nd;
        nd.y = geometry::normal_coordinates(s, pr.p, Y, pr.E);
        nd.Ey = geometry::orthonormal_frame(s, nd.y);
        nd.cz = nd.Ey.partialPivLu().solve(Vec(xc - nd.y));
        nd.rho_max = nd.cz.tail(m - 1).norm() + Lf;
        nd.Ry = 1.05 * std::max(std::abs(nd.cz(0)) + Lf, nd.rho_max);
        const double stretch = (Einv * nd.Ey).cwiseAbs().rowwise().sum().maxCoeff();
        Rp = std::max(Rp, Y.cwiseAbs().maxCoeff() + 1.3 * stretch * nd.Ry);
        nodes.push_back(std::move(nd));
    }
    if (Rp > chart_radius(s, pr.p)) fail(ErrorCode::SupportEscape, "test sections too wide for the chart about p");
    std::unique_ptr<detail::BaseMap> base_ptr;
    try {
        base_ptr = std::make_unique<detail::BaseMap>(P, pr.p, Rp, opt.n_cheb_base);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::FanTooNarrow) throw;
        fail(ErrorCode::SupportEscape, "test sections too wide for the chart about p");
    }
    const detail::BaseMap& base = *base_ptr;

    PolyGaussian gf = f.g;
    std::vector<PolyGaussian> dgf;
    for (int a = 0; a < m; ++a) dgf.push_back(f.g.d(a));
    SphereRule sph = sphere_rule(m - 1, opt.rule.n_azimuth, opt.rule.n_polar);

    // pack layout on each outer table
    const int oZ = 0, oL = m, oT = m + 1, oU = m + 2;
    const int oTh = oU + (K + 1) * r * r;
    const int oJ = oTh + r * r, oC = oJ + m * m, oD = oC + m * r * r;
    const bool need_dirac = slot != FirstSlot::Plain;
    const int C = need_dirac ? oD + r * r : oJ;

    std::vector<cd> acc(eps.size(), cd(0.0));
    std::vector<cd> v(C), scratch;
    for (std::size_t j = 0; j < outer.size(); ++j) {
        const auto& [Y, wY] = outer[j];
        const OuterNode& nd = nodes[j];
        const Vec& y = nd.y;
        const double wy = wY * std::exp(base.at(Y).log_sqrtG);
        const Vec& cz = nd.cz;
        const double L = Lf, rho_max = nd.rho_max, Ry = nd.Ry;

        TransportOptions to;
        to.K = K;
        to.n_cheb = opt.n_cheb;
        to.box_half = Ry;
        CoefficientTable T = transport_coefficients(P, y, to);
        const ChebGrid& g = T.grid;
        const std::size_t N = g.size();
        detail::FieldPack pack(g, C);
        for (std::size_t k = 0; k < N; ++k) {
            const Vec& x = T.x[k];
            Vec Z = base.log(x);
            for (int a = 0; a < m; ++a) pack.at(oZ + a, k) = Z(a);
            pack.at(oL, k) = T.log_sqrtG[k];
            pack.at(oT, k) = x(s.time_axis) - y(s.time_axis);
            for (int kk = 0; kk <= K; ++kk) {
                CMat U = T.U[kk].get(k);
                for (int i = 0; i < r * r; ++i) pack.at(oU + kk * r * r + i, k) = U(i / r, i % r);
            }
            CMat Th = bundle::theta_matrix(P.bundle, x);
            for (int i = 0; i < r * r; ++i) pack.at(oTh + i, k) = Th(i / r, i % r);
            if (need_dirac) {
                Mat Ji = base.at(Z).J.inverse();  // ∂Z/∂x
                for (int i = 0; i < m * m; ++i) pack.at(oJ + i, k) = Ji(i / m, i % m);
                auto c = bundle::clifford_vectors(*dirac, x);
                for (int mu = 0; mu < m; ++mu)
                    for (int i = 0; i < r * r; ++i) pack.at(oC + mu * r * r + i, k) = c[mu](i / r, i % r);
                CMat d = bundle::dirac_potential(*dirac, x);
                for (int i = 0; i < r * r; ++i) pack.at(oD + i, k) = d(i / r, i % r);
            }
        }

        Vec X(m);
        std::vector<CMat> Uk(K + 1, CMat(r, r));
        CMat Th(r, r), Cm(r, r), Dm(r, r);
        for_each_cone_node(m, cz(0) - L, cz(0) + L, rho_max, e_min, opt.rule, [&](double tau, double rho, double w) {
            X(0) = tau;
            const double sv = rho * rho - tau * tau;
            for (std::size_t i = 0; i < sph.dir.size(); ++i) {
                X.tail(m - 1) = rho * sph.dir[i];
                if (!g.contains(X)) continue;
                pack.eval(g.weights(X), v.data(), scratch);
                Vec Z(m);
                for (int a = 0; a < m; ++a) Z(a) = v[oZ + a].real();
                const double gz = gf(Z);
                if (std::abs(gz) < 1e-300 && !need_dirac) continue;
                CVec F;
                if (slot == FirstSlot::Plain) {
                    F = f.v * gz;
                } else {
                    F = CVec::Zero(r);
                    if (slot != FirstSlot::DiracMass) {
                        Vec dg(m);
                        for (int a = 0; a < m; ++a) dg(a) = dgf[a](Z);
                        for (int mu = 0; mu < m; ++mu) {
                            double dmu = 0.0;
                            for (int a = 0; a < m; ++a) dmu += dg(a) * v[oJ + a * m + mu].real();
                            for (int i = 0; i < r * r; ++i) Cm(i / r, i % r) = v[oC + mu * r * r + i];
                            F += dmu * (Cm * f.v);
                        }
                        for (int i = 0; i < r * r; ++i) Dm(i / r, i % r) = v[oD + i];
                        F += gz * (Dm * f.v);
                    }
                    if (slot != FirstSlot::DiracDerivative) F += kI * dirac->mass * gz * f.v;
                }
                for (int kk = 0; kk <= K; ++kk)
                    for (int j = 0; j < r * r; ++j) Uk[kk](j / r, j % r) = v[oU + kk * r * r + j];
                for (int j = 0; j < r * r; ++j) Th(j / r, j % r) = v[oTh + j];
                CVec row = Th.transpose() * F;  // Fᵀ Θ as a column
                auto series = [&](const std::vector<SeriesTermEntry>& terms) {
                    CVec out = CVec::Zero(r);
                    for (const auto& t : terms) out += t.coef * std::pow(sv, t.power) * (Uk[t.index] * fp.v);
                    return cd((row.transpose() * out)(0));
                };
                const cd a1 = g1 ? series(t1) : cd(0.0);
                const cd a2 = g2 ? series(t2) : cd(0.0);
                const double wt = wy * w * sph.w[i] * std::exp(v[oL].real());
                const double tx = v[oT].real();
                for (std::size_t e = 0; e < eps.size(); ++e) {
                    cd arg = kernel_argument(sv, tx, 0.0, eps[e]);
                    cd val = 0.0;
                    if (g1) val += kernel_factor(m, KernelTerm::G1, arg) * a1;
                    if (g2) val += kernel_factor(m, KernelTerm::G2, arg) * a2;
                    acc[e] += wt * val;
                }
            }
        });
    }
    return acc;
}

/// Same pairing on Minkowski space with constant coefficients U_(k), through exact cross-correlations.
inline std::vector<cd> flat_section_pairing(int m, const std::vector<CMat>& Uk, int n, const CMat& theta,
                                            const TestSection& f, const TestSection& fp,
                                            const std::vector<double>& eps, FirstSlot slot = FirstSlot::Plain,
                                            const std::vector<CMat>& gammas = {}, double mass = 0.0,
                                            KernelTerms terms = KernelTerms::Both, const ConeRule& rule = {}) {
    detail::require_plain_gaussian(f.g);
    detail::require_plain_gaussian(fp.g);
    if (slot != FirstSlot::Plain && static_cast<int>(gammas.size()) != m)
        fail(ErrorCode::ConfigError, "Dirac first slot needs the gamma matrices");
    PolyGaussian F = cross_correlation(f.g, fp.g);
    struct Piece {
        PolyGaussian corr;
        CVec left;  // Θᵀ × first-slot fibre vector
    };
    std::vector<Piece> pieces;
    if (slot == FirstSlot::Plain) pieces.push_back({F, theta.transpose() * f.v});
    if (slot == FirstSlot::Dirac || slot == FirstSlot::DiracDerivative)
        for (int mu = 0; mu < m; ++mu) {
            PolyGaussian d = F.d(mu);
            for (auto& [e, c] : d.poly) c = -c;
            pieces.push_back({d, theta.transpose() * (detail::upper_gamma(gammas, mu) * f.v)});
        }
    if (slot == FirstSlot::Dirac || slot == FirstSlot::DiracMass)
        pieces.push_back({F, theta.transpose() * (kI * mass * f.v)});

    std::vector<cd> acc(eps.size(), cd(0.0));
    auto add = [&](KernelTerm term, SeriesTerm which) {
        auto ts = series_terms(which, m, n);
        for (const Piece& pc : pieces) {
            auto coeff = [&](double s) {
                CVec out = CVec::Zero(fp.v.size());
                for (const auto& t : ts) {
                    if (t.index >= static_cast<int>(Uk.size())) fail(ErrorCode::ConfigError, "coefficient order not available");
                    out += t.coef * std::pow(s, t.power) * (Uk[t.index] * fp.v);
                }
                return cd((pc.left.transpose() * out)(0));
            };
            auto vals = flat_pairing(m, term, pc.corr, eps, coeff, false, rule);
            for (std::size_t e = 0; e < eps.size(); ++e) acc[e] += vals[e];
        }
    };
    if (detail::uses_g1(terms)) add(KernelTerm::G1, m % 2 ? SeriesTerm::T : SeriesTerm::U);
    if (detail::uses_g2(m, terms)) add(KernelTerm::G2, SeriesTerm::V);
    return acc;
}

// ---------------------------------------------------------------------------
// Scaling limits
// ---------------------------------------------------------------------------

/// ε schedule tied to the narrower test section.
inline std::vector<double> pairing_eps(const TestSection& f, const TestSection& fp) {
    return default_eps_schedule(std::min(f.width(), fp.width()));
}

/// Extrapolated pairing of (first-slot image of f) ⊗ f′.
using KernelPairing = std::function<Extrapolated(const TestSection& f, const TestSection& fp, FirstSlot slot)>;

inline KernelPairing flat_kernel_pairing(int m, std::vector<CMat> Uk, int n, CMat theta,
                                         std::vector<CMat> gammas = {}, double mass = 0.0,
                                         KernelTerms terms = KernelTerms::Both, ConeRule rule = {}) {
    return [=](const TestSection& f, const TestSection& fp, FirstSlot slot) {
        auto eps = pairing_eps(f, fp);
        return evaluate_distribution(
            [&](const std::vector<double>& e) {
                return flat_section_pairing(m, Uk, n, theta, f, fp, e, slot, gammas, mass, terms, rule);
            },
            eps);
    };
}

inline KernelPairing curved_kernel_pairing(WaveOperator P, ScalingProbe probe, PairingOptions opt = {},
                                           std::optional<DiracModel> dirac = std::nullopt) {
    return [=](const TestSection& f, const TestSection& fp, FirstSlot slot) {
        auto eps = pairing_eps(f, fp);
        return evaluate_distribution(
            [&](const std::vector<double>& e) {
                return curved_pairing(P, probe, f, fp, e, opt, slot, dirac ? &*dirac : nullptr);
            },
            eps);
    };
}

/// Flat massless reference: G^(1)_η((ΘR*f) R*f′), or with γ^μ∂_μ applied to f.
struct ReferenceSpec {
    int m = 3;
    CMat theta;
    std::vector<CMat> gammas;  // needed for the Dirac case
    ConeRule rule{};
    // Optional flat massless pairing through the same quadrature as the kernel pairing. Evaluated once at the
    // smallest λ; it is scale covariant, so it cancels the systematic quadrature error of the gaps.
    KernelPairing matched;
};

inline Extrapolated flat_reference(const ReferenceSpec& ref, const TestSection& f, const TestSection& fp,
                                   FirstSlot slot = FirstSlot::Plain) {
    const int r = static_cast<int>(f.v.size());
    std::vector<CMat> U0{CMat::Identity(r, r)};
    auto eps = pairing_eps(f, fp);
    FirstSlot s = slot == FirstSlot::Plain ? FirstSlot::Plain : FirstSlot::DiracDerivative;
    return richardson(eps, flat_section_pairing(ref.m, U0, 0, ref.theta, f, fp, eps, s, ref.gammas, 0.0,
                                                KernelTerms::G1Only, ref.rule));
}

struct ScalingReport {
    double alpha = 0.0;
    std::vector<double> lambda;
    std::vector<Extrapolated> values;
    Extrapolated reference;    // exact flat reference
    std::optional<Extrapolated> matched;  // same-quadrature flat reference, if requested
    std::vector<double> gap;        // |value(λ) − matched| if available, else |value(λ) − reference|
    std::vector<double> exact_gap;  // |value(λ) − reference|
    double quad_tol = 0.0;          // |matched − reference| + extrapolation errors (0 without matched)
    double variation = 0.0;    // max_λ |value(λ) − value(λ₀)|
    double max_error = 0.0;    // largest extrapolation error estimate
    bool gap_decreasing = false;
    std::string frame;
};

namespace detail {

inline ScalingReport run_scaling(const KernelPairing& kp, const ScalingProbe& probe, const TestSection& f,
                                 const TestSection& fp, const ReferenceSpec& ref, FirstSlot slot) {
    probe.validate();
    ScalingReport rep;
    rep.alpha = probe.alpha;
    rep.frame = probe.frame_note;
    rep.reference = flat_reference(ref, f, fp, slot);
    for (double lam : probe.lambda_seq) {
        TestSection fl = dilate_section(probe, lam, f), fpl = dilate_section(probe, lam, fp);
        rep.lambda.push_back(lam);
        rep.values.push_back(kp(fl, fpl, slot));
        rep.max_error = std::max(rep.max_error, rep.values.back().error);
    }
    rep.max_error = std::max(rep.max_error, rep.reference.error);
    if (ref.matched) {
        const double lam = probe.lambda_seq.back();
        rep.matched = ref.matched(dilate_section(probe, lam, f), dilate_section(probe, lam, fp), slot);
        rep.max_error = std::max(rep.max_error, rep.matched->error);
        rep.quad_tol = std::abs(rep.matched->value - rep.reference.value) + 2.0 * rep.max_error;
    }
    const cd target = rep.matched ? rep.matched->value : rep.reference.value;
    for (const auto& v : rep.values) {
        rep.gap.push_back(std::abs(v.value - target));
        rep.exact_gap.push_back(std::abs(v.value - rep.reference.value));
        rep.variation = std::max(rep.variation, std::abs(v.value - rep.values.front().value));
    }
    rep.gap_decreasing = true;
    for (std::size_t i = 1; i < rep.gap.size(); ++i)
        if (rep.gap[i] > rep.gap[i - 1] + 2.0 * rep.max_error) rep.gap_decreasing = false;
    // Cauchy criterion: successive differences must not grow beyond the error level
    const std::size_t n = rep.values.size();
    if (n >= 3) {
        double first = std::abs(rep.values[1].value - rep.values[0].value);
        double last = std::abs(rep.values[n - 1].value - rep.values[n - 2].value);
        if (last > 2.0 * first + 4.0 * rep.max_error)
            fail(ErrorCode::NonConvergent, "scaled pairings fail the Cauchy criterion");
    }
    return rep;
}

}  // namespace detail

/// ω(D_λ f ⊗ D_λ f′) along the probe's λ sequence with the flat massless reference.
inline ScalingReport scaling_limit_pairing(const KernelPairing& kp, const ScalingProbe& probe, const TestSection& f,
                                           const TestSection& fp, const ReferenceSpec& ref) {
    return detail::run_scaling(kp, probe, f, fp, ref, FirstSlot::Plain);
}

/// ω(D_▷ D_λ f ⊗ D_λ f′); `part` isolates the derivative or mass contribution of D_▷.
inline ScalingReport dirac_scaling_limit(const KernelPairing& kp, const ScalingProbe& probe, const TestSection& f,
                                         const TestSection& fp, const ReferenceSpec& ref,
                                         FirstSlot part = FirstSlot::Dirac) {
    if (part == FirstSlot::Plain) fail(ErrorCode::ConfigError, "Dirac scaling needs a Dirac first slot");
    if (static_cast<int>(ref.gammas.size()) != ref.m) fail(ErrorCode::ConfigError, "reference needs gamma matrices");
    return detail::run_scaling(kp, probe, f, fp, ref, part);
}

// ---------------------------------------------------------------------------
// Scaling limits and wavefront sets
// ---------------------------------------------------------------------------

/// u_λ(x) = λ^β u(p + λ(x − p)).
inline std::function<cd(const Vec&)> pulled_back(std::function<cd(const Vec&)> u, const Vec& p, double lam,
                                                 double beta) {
    return [u = std::move(u), p, lam, beta](const Vec& x) { return std::pow(lam, beta) * u(Vec(p + lam * (x - p))); };
}

struct InclusionReport {
    int n_limit = 0;    // non-marginal flagged directions of the limit
    int n_covered = 0;  // of those, flagged for the original within the tolerance
    double worst_angle = 0.0;
    bool pass = false;
};

/// Every direction flagged for the scaling limit must be flagged for the original at the same point.
inline InclusionReport wf_inclusion(const microlocal::WavefrontEstimate& limit,
                                    const microlocal::WavefrontEstimate& original, double cells = 1.0) {
    InclusionReport rep;
    const double tol = cells * std::max(limit.cell, original.cell) + 1e-12;
    for (const auto& e : limit.entries) {
        if (!e.flagged || e.marginal) continue;
        ++rep.n_limit;
        double best = kPi;
        for (const auto& o : original.entries)
            if (o.flagged && (o.point - e.point).norm() < 1e-12) best = std::min(best, angle_between(e.dir, o.dir));
        rep.worst_angle = std::max(rep.worst_angle, best);
        if (best <= tol) ++rep.n_covered;
    }
    rep.pass = rep.n_covered == rep.n_limit;
    return rep;
}

}  // namespace hadamard::scaling
