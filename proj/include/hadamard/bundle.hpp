#pragma once

#include "hadamard/geometry.hpp"

#include <array>
#include <vector>

namespace hadamard::bundle {

using geometry::Christoffel;
using geometry::GeodesicPath;
using geometry::SpacetimeModel;

/// A fibre-valued section given as a callable.
using Section = std::function<CVec(const Vec&)>;

// ---------------------------------------------------------------------------
// Bundle data and wave operators
// ---------------------------------------------------------------------------

/// A[nu] is the r×r coefficient of ∂_nu.
using FirstOrder = std::array<CMat, kMaxDim>;

struct BundleModel {
    int r = 1;
    std::function<void(const Vec&, FirstOrder&)> A;
    std::function<CMat(const Vec&)> B;
    CMat Gamma_conj;  // Γf = Gamma_conj · conj(f)
    std::function<CMat(const Vec&)> h;
};

struct WaveOperator {
    SpacetimeModel base;
    BundleModel bundle;
};

/// Rank-r bundle with A = 0 and a constant potential B.
inline BundleModel trivial_bundle(int r, int m, const CMat& B = CMat()) {
    BundleModel b;
    b.r = r;
    b.A = [r, m](const Vec&, FirstOrder& A) {
        for (int nu = 0; nu < m; ++nu) A[nu] = CMat::Zero(r, r);
    };
    CMat BB = B.size() ? B : CMat(CMat::Zero(r, r));
    b.B = [BB](const Vec&) { return BB; };
    b.Gamma_conj = CMat::Identity(r, r);
    b.h = [r](const Vec&) { return CMat(CMat::Identity(r, r)); };
    return b;
}

inline CVec conj_apply(const BundleModel& b, const CVec& f) { return b.Gamma_conj * f.conjugate(); }

/// Matrix M of the bilinear form (ϑΓv)(w) = h(Γv, w) = vᵀ M w.
inline CMat theta_matrix(const BundleModel& b, const Vec& x) { return b.Gamma_conj.adjoint() * b.h(x); }

/// Max deviation of (Γ∘conj)² from the identity and of h from hermiticity at x.
inline double bundle_invariant_residual(const BundleModel& b, const Vec& x) {
    CMat C2 = b.Gamma_conj * b.Gamma_conj.conjugate();
    double r1 = (C2 - CMat::Identity(b.r, b.r)).cwiseAbs().maxCoeff();
    CMat h = b.h(x);
    double r2 = (h - h.adjoint()).cwiseAbs().maxCoeff();
    return std::max(r1, r2);
}

// ---------------------------------------------------------------------------
// Finite-difference jets of sections
// ---------------------------------------------------------------------------

struct Jet {
    CVec f;
    std::array<CVec, kMaxDim> d1;
    std::array<std::array<CVec, kMaxDim>, kMaxDim> d2;
};

namespace detail {

inline void check_stencil(const SpacetimeModel& s, const Vec& x, double reach) {
    if (!s.chart.contains(x, reach)) fail(ErrorCode::StencilOutOfChart, "derivative stencil leaves chart");
}

inline CVec d1(const Section& f, const Vec& x, int mu, double h) {
    Vec e = Vec::Zero(x.size());
    e(mu) = h;
    return (8.0 * (f(x + e) - f(x - e)) - (f(x + 2 * e) - f(x - 2 * e))) / (12.0 * h);
}

}  // namespace detail

/// Value, gradient and Hessian by 4th-order central differences with the geometry step.
inline Jet jet(const SpacetimeModel& s, const Section& f, const Vec& x, bool second = true) {
    const double h = s.fd_step();
    detail::check_stencil(s, x, (second ? 4.0 : 2.0) * h);
    const int m = s.m;
    Jet j;
    j.f = f(x);
    for (int mu = 0; mu < m; ++mu) j.d1[mu] = detail::d1(f, x, mu, h);
    if (!second) return j;
    for (int mu = 0; mu < m; ++mu) {
        Vec e = Vec::Zero(m);
        e(mu) = h;
        j.d2[mu][mu] = (-(f(x + 2 * e) + f(x - 2 * e)) + 16.0 * (f(x + e) + f(x - e)) - 30.0 * j.f) / (12.0 * h * h);
        for (int nu = mu + 1; nu < m; ++nu) {
            Section g = [&](const Vec& y) { return detail::d1(f, y, nu, h); };
            j.d2[mu][nu] = detail::d1(g, x, mu, h);
            j.d2[nu][mu] = j.d2[mu][nu];
        }
    }
    return j;
}

// ---------------------------------------------------------------------------
// Operator application
// ---------------------------------------------------------------------------

/// (Pf)^a = g^{μν}∂_μ∂_ν f^a + A^ν{}^a{}_b ∂_ν f^b + B^a{}_b f^b.
inline CVec apply_wave_operator(const WaveOperator& P, const Section& f, const Vec& x) {
    const int m = P.base.m;
    Jet j = jet(P.base, f, x);
    Mat ginv = P.base.metric(x).inverse();
    FirstOrder A;
    P.bundle.A(x, A);
    CVec out = P.bundle.B(x) * j.f;
    for (int mu = 0; mu < m; ++mu) {
        out += A[mu] * j.d1[mu];
        for (int nu = 0; nu < m; ++nu) out += ginv(mu, nu) * j.d2[mu][nu];
    }
    return out;
}

/// Scalar covariant wave operator □φ = g^{μν}(∂_μ∂_νφ − Γ^λ_{μν}∂_λφ).
inline double box_scalar(const SpacetimeModel& s, const std::function<double(const Vec&)>& phi, const Vec& x) {
    Section f = [&](const Vec& y) {
        CVec v(1);
        v(0) = phi(y);
        return v;
    };
    Jet j = jet(s, f, x);
    Mat ginv = s.metric(x).inverse();
    Christoffel G = geometry::christoffels(s, x, false);
    double out = 0.0;
    for (int mu = 0; mu < s.m; ++mu)
        for (int nu = 0; nu < s.m; ++nu) {
            double v = j.d2[mu][nu](0).real();
            for (int l = 0; l < s.m; ++l) v -= G(l, mu, nu) * j.d1[l](0).real();
            out += ginv(mu, nu) * v;
        }
    return out;
}

/// Connection one-form ω_ν of the induced connection: ∇_ν f = ∂_ν f + ω_ν f.
/// ω_ν = ½ g_{νσ}(A^σ + g^{μκ}Γ^σ_{μκ}), the Levi-Civita contraction accounting for the coordinate principal part.
inline FirstOrder connection_form(const WaveOperator& P, const Vec& x) {
    const int m = P.base.m, r = P.bundle.r;
    Mat g = P.base.metric(x);
    Mat ginv = g.inverse();
    Christoffel G = geometry::christoffels(P.base, x, false);
    FirstOrder A;
    P.bundle.A(x, A);
    std::array<CMat, kMaxDim> Aeff;
    for (int s = 0; s < m; ++s) {
        double c = 0.0;
        for (int mu = 0; mu < m; ++mu)
            for (int k = 0; k < m; ++k) c += ginv(mu, k) * G(s, mu, k);
        Aeff[s] = A[s] + c * CMat::Identity(r, r);
    }
    FirstOrder w;
    for (int nu = 0; nu < m; ++nu) {
        w[nu] = CMat::Zero(r, r);
        for (int s = 0; s < m; ++s) w[nu] += 0.5 * g(nu, s) * Aeff[s];
    }
    return w;
}

/// Covariant scalar operator □_g + B: A^σ = −g^{μκ}Γ^σ_{μκ}, so the induced connection is trivial.
inline WaveOperator covariant_scalar_operator(const SpacetimeModel& s, double B = 0.0) {
    WaveOperator P{s, trivial_bundle(1, s.m, CMat::Constant(1, 1, B))};
    P.bundle.A = [s](const Vec& x, FirstOrder& A) {
        Mat ginv = s.metric(x).inverse();
        Christoffel G = geometry::christoffels(s, x, false);
        for (int sg = 0; sg < s.m; ++sg) {
            double c = 0.0;
            for (int mu = 0; mu < s.m; ++mu)
                for (int k = 0; k < s.m; ++k) c += ginv(mu, k) * G(sg, mu, k);
            A[sg] = CMat::Constant(1, 1, -c);
        }
    };
    return P;
}

/// ∇^{(P)}_v f at x.
inline CVec induced_connection(const WaveOperator& P, const Vec& v, const Section& f, const Vec& x) {
    Jet j = jet(P.base, f, x, false);
    FirstOrder w = connection_form(P, x);
    CVec out = CVec::Zero(P.bundle.r);
    for (int nu = 0; nu < P.base.m; ++nu) out += v(nu) * (j.d1[nu] + w[nu] * j.f);
    return out;
}

/// |Γ P Γ f − P f| at x.
inline double gamma_invariance_residual(const WaveOperator& P, const Section& f, const Vec& x) {
    Section gf = [&](const Vec& y) { return conj_apply(P.bundle, f(y)); };
    CVec lhs = conj_apply(P.bundle, apply_wave_operator(P, gf, x));
    return (lhs - apply_wave_operator(P, f, x)).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Parallel transport
// ---------------------------------------------------------------------------

struct TransportedField {
    std::vector<double> t;
    std::vector<Vec> x;
    std::vector<CVec> v;
};

/// Solves ∇^{(P)}_{u} v = 0 along the geodesic through the path's first sample,
/// reporting the fibre vector at every stored path parameter.
inline TransportedField parallel_transport(const WaveOperator& P, const GeodesicPath& path, const CVec& v0,
                                           double tol = 1e-11) {
    if (path.samples.empty()) fail(ErrorCode::StepFailure, "empty path");
    const int r = P.bundle.r;
    const auto& first = path.samples.front();
    geometry::RayOptions opt;
    opt.tol = tol;
    opt.extra_dim = 2 * r;
    for (int a = 0; a < r; ++a) {
        opt.extra0.push_back(v0(a).real());
        opt.extra0.push_back(v0(a).imag());
    }
    opt.extra = [&P, r](const Vec& x, const Vec& u, const double* e, double* de) {
        FirstOrder w = connection_form(P, x);
        CMat W = CMat::Zero(r, r);
        for (int nu = 0; nu < P.base.m; ++nu) W += u(nu) * w[nu];
        CVec v(r);
        for (int a = 0; a < r; ++a) v(a) = cd(e[2 * a], e[2 * a + 1]);
        CVec dv = -W * v;
        for (int a = 0; a < r; ++a) {
            de[2 * a] = dv(a).real();
            de[2 * a + 1] = dv(a).imag();
        }
    };
    std::vector<double> times;
    for (const auto& smp : path.samples) times.push_back(smp.t - first.t);
    geometry::RayResult rr = geometry::integrate_ray(P.base, first.x, first.u, times, opt);
    TransportedField out;
    for (const auto& st : rr.out) {
        out.t.push_back(st.t + first.t);
        out.x.push_back(st.x);
        CVec v(r);
        for (int a = 0; a < r; ++a) v(a) = cd(st.extra[2 * a], st.extra[2 * a + 1]);
        out.v.push_back(v);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Majorana gamma matrices and Dirac operators
// ---------------------------------------------------------------------------

inline std::vector<CMat> make_gamma_matrices(int m_dim) {
    CMat s1(2, 2), s2(2, 2), s3(2, 2), id = CMat::Identity(2, 2);
    s1 << 0, 1, 1, 0;
    s2 << 0, -kI, kI, 0;
    s3 << 1, 0, 0, -1;
    auto kron = [](const CMat& a, const CMat& b) {
        CMat k(a.rows() * b.rows(), a.cols() * b.cols());
        for (int i = 0; i < a.rows(); ++i)
            for (int j = 0; j < a.cols(); ++j) k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        return k;
    };
    if (m_dim == 3) return {s2, CMat(kI * s1), CMat(kI * s3)};
    if (m_dim == 4) return {kron(s1, s2), CMat(kI * kron(s3, id)), CMat(kI * kron(s1, s1)), CMat(kI * kron(s1, s3))};
    fail(ErrorCode::UnsupportedDimension, "Majorana representation available for m = 3, 4 only");
}

/// Max residual over the Clifford, adjoint and Majorana-conjugation relations.
inline double gamma_relation_residual(const std::vector<CMat>& g) {
    const int m = static_cast<int>(g.size()), n = static_cast<int>(g[0].rows());
    Mat eta = minkowski_eta(m);
    double r = 0.0;
    for (int a = 0; a < m; ++a) {
        for (int b = 0; b < m; ++b)
            r = std::max(r, (g[a] * g[b] + g[b] * g[a] - 2.0 * eta(a, b) * CMat::Identity(n, n)).cwiseAbs().maxCoeff());
        r = std::max(r, (g[a].adjoint() - eta(a, a) * g[a]).cwiseAbs().maxCoeff());
        r = std::max(r, (g[a].conjugate() + g[a]).cwiseAbs().maxCoeff());
    }
    return r;
}

enum class DiracVariant { Right, Left };  // D_▷ carries +i𝗆, D_◁ carries −i𝗆

struct DiracModel {
    int m_dim = 4;
    std::vector<CMat> gammas;
    double mass = 0.0;
    SpacetimeModel base;
    std::function<Mat(const Vec&)> frame_field;  // columns e_a^μ
};

inline DiracModel make_dirac(const SpacetimeModel& base, double mass) {
    DiracModel D;
    D.m_dim = base.m;
    D.gammas = make_gamma_matrices(base.m);
    D.mass = mass;
    D.base = base;
    SpacetimeModel b = base;
    D.frame_field = [b](const Vec& x) { return geometry::orthonormal_frame(b, x); };
    return D;
}

inline int spinor_rank(const DiracModel& D) { return static_cast<int>(D.gammas[0].rows()); }

/// c^μ = γ^a e_a^μ with γ^a = η^{ab}γ_b.
inline std::array<CMat, kMaxDim> clifford_vectors(const DiracModel& D, const Vec& x) {
    Mat E = D.frame_field(x);
    const int m = D.m_dim, n = spinor_rank(D);
    std::array<CMat, kMaxDim> c;
    for (int mu = 0; mu < m; ++mu) {
        c[mu] = CMat::Zero(n, n);
        for (int a = 0; a < m; ++a) c[mu] += (a == 0 ? 1.0 : -1.0) * E(mu, a) * D.gammas[a];
    }
    return c;
}

/// Spin connection Ω_μ = ¼ ω_μ{}^a{}_b γ_a γ^b with ω_μ{}^a{}_b = θ^a_ν(∂_μ e_b^ν + Γ^ν_{μλ} e_b^λ).
inline std::array<CMat, kMaxDim> spin_connection(const DiracModel& D, const Vec& x) {
    const int m = D.m_dim, n = spinor_rank(D);
    const double h = D.base.fd_step();
    Mat E = D.frame_field(x);
    Mat theta = E.inverse();
    Christoffel G = geometry::christoffels(D.base, x, false);
    std::array<CMat, kMaxDim> Om;
    for (int mu = 0; mu < m; ++mu) {
        Vec e = Vec::Zero(m);
        e(mu) = h;
        Mat dE = (8.0 * (D.frame_field(x + e) - D.frame_field(x - e)) -
                  (D.frame_field(x + 2 * e) - D.frame_field(x - 2 * e))) /
                 (12.0 * h);
        Mat cov = dE;
        for (int nu = 0; nu < m; ++nu)
            for (int b = 0; b < m; ++b)
                for (int l = 0; l < m; ++l) cov(nu, b) += G(nu, mu, l) * E(l, b);
        Mat w = theta * cov;  // w(a,b) = ω_μ^a_b
        Om[mu] = CMat::Zero(n, n);
        for (int a = 0; a < m; ++a)
            for (int b = 0; b < m; ++b)
                Om[mu] += 0.25 * w(a, b) * (b == 0 ? 1.0 : -1.0) * D.gammas[a] * D.gammas[b];
    }
    return Om;
}

/// d = c^μ Ω_μ.
inline CMat dirac_potential(const DiracModel& D, const Vec& x) {
    auto c = clifford_vectors(D, x);
    auto Om = spin_connection(D, x);
    CMat d = CMat::Zero(spinor_rank(D), spinor_rank(D));
    for (int mu = 0; mu < D.m_dim; ++mu) d += c[mu] * Om[mu];
    return d;
}

inline CVec dirac_apply(const DiracModel& D, DiracVariant v, const Section& f, const Vec& x) {
    detail::check_stencil(D.base, x, 4.0 * D.base.fd_step());
    Jet j = jet(D.base, f, x, false);
    auto c = clifford_vectors(D, x);
    CVec out = dirac_potential(D, x) * j.f;
    for (int mu = 0; mu < D.m_dim; ++mu) out += c[mu] * j.d1[mu];
    out += (v == DiracVariant::Right ? 1.0 : -1.0) * kI * D.mass * j.f;
    return out;
}

/// Wave operator D_▷D_◁ with A^ν = c^μ∂_μc^ν + c^ν d + d c^ν and B = c^μ∂_μ d + d² + 𝗆².
inline WaveOperator dirac_wave_operator(const DiracModel& D) {
    WaveOperator P;
    P.base = D.base;
    const int n = spinor_rank(D), m = D.m_dim;
    P.bundle.r = n;
    P.bundle.Gamma_conj = CMat::Identity(n, n);
    CMat g0 = D.gammas[0];
    P.bundle.h = [g0](const Vec&) { return g0; };
    P.bundle.A = [D, m](const Vec& x, FirstOrder& A) {
        const double h = D.base.fd_step();
        auto c = clifford_vectors(D, x);
        CMat d = dirac_potential(D, x);
        std::array<std::array<CMat, kMaxDim>, kMaxDim> dc;  // dc[mu][nu] = ∂_μ c^ν
        for (int mu = 0; mu < m; ++mu) {
            Vec e = Vec::Zero(m);
            e(mu) = h;
            auto p1 = clifford_vectors(D, x + e), m1 = clifford_vectors(D, x - e);
            auto p2 = clifford_vectors(D, x + 2 * e), m2 = clifford_vectors(D, x - 2 * e);
            for (int nu = 0; nu < m; ++nu) dc[mu][nu] = (8.0 * (p1[nu] - m1[nu]) - (p2[nu] - m2[nu])) / (12.0 * h);
        }
        for (int nu = 0; nu < m; ++nu) {
            A[nu] = c[nu] * d + d * c[nu];
            for (int mu = 0; mu < m; ++mu) A[nu] += c[mu] * dc[mu][nu];
        }
    };
    P.bundle.B = [D, m, n](const Vec& x) {
        const double h = D.base.fd_step();
        auto c = clifford_vectors(D, x);
        CMat d = dirac_potential(D, x);
        CMat B = d * d + D.mass * D.mass * CMat::Identity(n, n);
        for (int mu = 0; mu < m; ++mu) {
            Vec e = Vec::Zero(m);
            e(mu) = h;
            CMat dd = (8.0 * (dirac_potential(D, x + e) - dirac_potential(D, x - e)) -
                       (dirac_potential(D, x + 2 * e) - dirac_potential(D, x - 2 * e))) /
                      (12.0 * h);
            B += c[mu] * dd;
        }
        return B;
    };
    return P;
}

// ---------------------------------------------------------------------------
// Kernels sampled on a regular grid in the first argument
// ---------------------------------------------------------------------------

struct SampledKernel {
    int m = 0;
    Vec lo;
    double h = 0.0;
    std::vector<int> n;          // points per axis
    std::vector<CMat> values;    // row-major over the grid, last axis fastest

    std::size_t size() const {
        std::size_t s = 1;
        for (int k : n) s *= static_cast<std::size_t>(k);
        return s;
    }
    std::size_t index(const std::vector<int>& i) const {
        std::size_t k = 0;
        for (int a = 0; a < m; ++a) k = k * n[a] + i[a];
        return k;
    }
    std::vector<int> multi(std::size_t k) const {
        std::vector<int> i(m);
        for (int a = m - 1; a >= 0; --a) {
            i[a] = static_cast<int>(k % n[a]);
            k /= n[a];
        }
        return i;
    }
    Vec point(const std::vector<int>& i) const {
        Vec x = lo;
        for (int a = 0; a < m; ++a) x(a) += h * i[a];
        return x;
    }
};

inline SampledKernel sample_kernel(int m, const Vec& lo, double h, const std::vector<int>& n,
                                   const std::function<CMat(const Vec&)>& K) {
    SampledKernel s;
    s.m = m;
    s.lo = lo;
    s.h = h;
    s.n = n;
    s.values.resize(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) s.values[k] = K(s.point(s.multi(k)));
    return s;
}

/// S_▷ = D_▷ K in the first argument; the result lives on the grid shrunk by two points per side.
inline SampledKernel dirac_parametrix_factor(const DiracModel& D, const SampledKernel& K) {
    for (int k : K.n)
        if (k < 5) fail(ErrorCode::GridTooCoarse, "grid needs at least 5 points per axis");
    const int m = K.m;
    SampledKernel out;
    out.m = m;
    out.h = K.h;
    out.lo = K.lo + Vec::Constant(m, 2.0 * K.h);
    for (int k : K.n) out.n.push_back(k - 4);
    out.values.resize(out.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
        std::vector<int> i = out.multi(k);
        for (int& a : i) a += 2;
        Vec x = K.point(i);
        auto c = clifford_vectors(D, x);
        const CMat& K0 = K.values[K.index(i)];
        CMat v = dirac_potential(D, x) * K0 + kI * D.mass * K0;
        for (int mu = 0; mu < m; ++mu) {
            auto at = [&](int off) {
                std::vector<int> j = i;
                j[mu] += off;
                return K.values[K.index(j)];
            };
            CMat d = (8.0 * (at(1) - at(-1)) - (at(2) - at(-2))) / (12.0 * K.h);
            v += c[mu] * d;
        }
        out.values[k] = v;
    }
    return out;
}

}  // namespace hadamard::bundle
