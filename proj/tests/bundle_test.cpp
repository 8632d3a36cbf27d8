#include "hadamard/bundle.hpp"

#include <gtest/gtest.h>

using namespace hadamard;
using namespace hadamard::bundle;
using geometry::cube_chart;

namespace {

Vec vec(std::initializer_list<double> l) {
    Vec v(static_cast<int>(l.size()));
    int i = 0;
    for (double d : l) v(i++) = d;
    return v;
}

CMat cmat2(cd a, cd b, cd c, cd d) {
    CMat M(2, 2);
    M << a, b, c, d;
    return M;
}

// f = (sin(x0 + 2 x1), x0 x2^2 + i x1) on m = 3, with hand-written derivatives.
CVec f_val(const Vec& x) {
    CVec v(2);
    v << std::sin(x(0) + 2 * x(1)), x(0) * x(2) * x(2) + kI * x(1);
    return v;
}
std::array<CVec, 3> f_grad(const Vec& x) {
    double c = std::cos(x(0) + 2 * x(1));
    std::array<CVec, 3> g;
    for (auto& v : g) v = CVec::Zero(2);
    g[0] << c, x(2) * x(2);
    g[1] << 2 * c, kI;
    g[2] << 0.0, 2 * x(0) * x(2);
    return g;
}
CVec f_hess(const Vec& x, int a, int b) {
    double s = std::sin(x(0) + 2 * x(1));
    double w1[3] = {1, 2, 0};
    CVec v(2);
    v(0) = -w1[a] * w1[b] * s;
    v(1) = 0.0;
    if ((a == 0 && b == 2) || (a == 2 && b == 0)) v(1) = 2 * x(2);
    if (a == 2 && b == 2) v(1) = 2 * x(0);
    return v;
}

// nonabelian first-order data, Γ-compatible for Gamma_conj = swap
BundleModel test_bundle() {
    BundleModel b;
    b.r = 2;
    b.A = [](const Vec& x, FirstOrder& A) {
        A[0] = cmat2(0.3 * x(1), cd(0.1, 0.2), cd(0.1, -0.2), 0.3 * x(1));
        A[1] = cmat2(cd(0.0, 0.4), 0.5 * x(0), 0.5 * x(0), cd(0.0, -0.4));
        A[2] = cmat2(-0.2, cd(0.0, 0.3 * x(2)), cd(0.0, -0.3 * x(2)), -0.2);
    };
    b.B = [](const Vec& x) { return cmat2(cd(x(0), 0.5), 0.7, 0.7, cd(x(0), -0.5)); };
    b.Gamma_conj = cmat2(0, 1, 1, 0);
    b.h = [](const Vec&) { return CMat(CMat::Identity(2, 2)); };
    return b;
}

std::vector<geometry::SpacetimeModel> curved3() {
    return {geometry::make_conformal(3, cube_chart(3, 2.0), 1.0),
            geometry::make_ultrastatic_bump(3, cube_chart(3, 2.0), 0.3, 0.5)};
}

}  // namespace

TEST(WaveOperator, TrivialExamples) {
    WaveOperator P{geometry::make_minkowski(4, cube_chart(4, 2.0)), trivial_bundle(1, 4)};
    Section sq = [](const Vec& x) {
        CVec v(1);
        v(0) = x(0) * x(0);
        return v;
    };
    EXPECT_NEAR(std::abs(apply_wave_operator(P, sq, vec({0.1, 0.2, 0.3, 0.4}))(0) - 2.0), 0.0, 1e-8);
    Section one = [](const Vec&) { return CVec::Ones(1); };
    EXPECT_LT(std::abs(apply_wave_operator(P, one, Vec::Zero(4))(0)), 1e-12);
}

TEST(WaveOperator, MatchesSymbolicOracle) {
    auto s = geometry::make_conformal(3, cube_chart(3, 2.0), 1.0);
    WaveOperator P{s, test_bundle()};
    for (const Vec& x : {vec({0.3, -0.2, 0.5}), vec({-0.6, 0.4, 0.1})}) {
        Mat gi = s.metric(x).inverse();
        FirstOrder A;
        P.bundle.A(x, A);
        auto g = f_grad(x);
        CVec ref = P.bundle.B(x) * f_val(x);
        for (int a = 0; a < 3; ++a) {
            ref += A[a] * g[a];
            for (int b = 0; b < 3; ++b) ref += gi(a, b) * f_hess(x, a, b);
        }
        EXPECT_LT((apply_wave_operator(P, f_val, x) - ref).cwiseAbs().maxCoeff(), 1e-7);
    }
}

TEST(WaveOperator, StencilOutOfChart) {
    WaveOperator P{geometry::make_minkowski(3, cube_chart(3, 1.0)), trivial_bundle(1, 3)};
    Section one = [](const Vec&) { return CVec::Ones(1); };
    try {
        apply_wave_operator(P, one, vec({0.999, 0, 0}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::StencilOutOfChart);
    }
}

TEST(WaveOperator, GammaInvarianceAndBundleInvariants) {
    for (const auto& s : curved3()) {
        WaveOperator P{s, test_bundle()};
        EXPECT_LT(bundle_invariant_residual(P.bundle, Vec::Zero(3)), 1e-12);
        for (const Vec& x : {vec({0.3, -0.2, 0.5}), vec({-0.6, 0.4, 0.1})}) {
            EXPECT_LT(gamma_invariance_residual(P, f_val, x), 1e-8);
        }
    }
}

TEST(InducedConnection, FlatWithoutFirstOrderIsPartial) {
    WaveOperator P{geometry::make_minkowski(3, cube_chart(3, 2.0)), trivial_bundle(2, 3)};
    Vec x = vec({0.2, 0.1, -0.3});
    auto g = f_grad(x);
    for (int nu = 0; nu < 3; ++nu) {
        Vec v = Vec::Zero(3);
        v(nu) = 1.0;
        EXPECT_LT((induced_connection(P, v, f_val, x) - g[nu]).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(InducedConnection, DefiningIdentityCurved) {
    auto phi = [](const Vec& y) { return std::sin(0.3 * y(0) + 0.7 * y(1)) + y(2) * y(2) + 0.2 * y(0) * y(1); };
    for (const auto& s : curved3()) {
        WaveOperator P{s, test_bundle()};
        for (const Vec& x : {vec({0.3, -0.2, 0.5}), vec({-0.4, 0.6, -0.1})}) {
            const double h = s.fd_step();
            Vec dphi(3);
            for (int mu = 0; mu < 3; ++mu) {
                Vec e = Vec::Zero(3);
                e(mu) = h;
                dphi(mu) = (8 * (phi(x + e) - phi(x - e)) - (phi(x + 2 * e) - phi(x - 2 * e))) / (12 * h);
            }
            Vec grad = s.metric(x).inverse() * dphi;
            Section pf = [&](const Vec& y) { return CVec(phi(y) * f_val(y)); };
            CVec rhs = apply_wave_operator(P, pf, x) - phi(x) * apply_wave_operator(P, f_val, x) -
                       box_scalar(s, phi, x) * f_val(x);
            CVec lhs = 2.0 * induced_connection(P, grad, f_val, x);
            EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-6) << s.name;
        }
    }
}

TEST(InducedConnection, LinearInDirection) {
    WaveOperator P{curved3()[1], test_bundle()};
    Vec x = vec({0.1, 0.2, 0.3}), v = vec({1, 0.5, -0.2}), w = vec({0.3, -1, 0.4});
    CVec lhs = induced_connection(P, 2.0 * v - 3.0 * w, f_val, x);
    CVec rhs = 2.0 * induced_connection(P, v, f_val, x) - 3.0 * induced_connection(P, w, f_val, x);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ParallelTransport, TrivialIsConstant) {
    auto s = geometry::make_minkowski(3, cube_chart(3, 3.0));
    WaveOperator P{s, trivial_bundle(2, 3)};
    auto path = geometry::integrate_geodesic(s, Vec::Zero(3), vec({1, 0.4, 0.2}), 0.0, 1.0, 1e-10, 5);
    CVec v0(2);
    v0 << cd(1, 2), cd(-0.5, 0.1);
    auto tf = parallel_transport(P, path, v0);
    ASSERT_EQ(tf.v.size(), path.samples.size());
    for (const auto& v : tf.v) EXPECT_LT((v - v0).norm(), 1e-14);
}

TEST(ParallelTransport, RoundTripCompositionAndDenseOracle) {
    for (const auto& s : curved3()) {
        WaveOperator P{s, test_bundle()};
        Vec x0 = vec({-0.3, 0.1, 0.2}), u0 = vec({1.0, 0.3, -0.4});
        CVec v0(2);
        v0 << cd(0.4, -1.0), cd(1.2, 0.3);
        auto path = geometry::integrate_geodesic(s, x0, u0, 0.0, 1.0, 1e-11, 4);
        CVec v1 = parallel_transport(P, path, v0).v.back();
        const auto& end = path.samples.back();
        auto back = geometry::integrate_geodesic(s, end.x, -end.u, 0.0, 1.0, 1e-11, 1);
        EXPECT_LT((parallel_transport(P, back, v1).v.back() - v0).norm(), 1e-8) << s.name;

        auto p1 = geometry::integrate_geodesic(s, x0, u0, 0.0, 0.4, 1e-11, 1);
        const auto& mid = p1.samples.back();
        auto p2 = geometry::integrate_geodesic(s, mid.x, mid.u, 0.0, 0.6, 1e-11, 1);
        CVec vc = parallel_transport(P, p2, parallel_transport(P, p1, v0).v.back()).v.back();
        EXPECT_LT((vc - v1).norm(), 1e-8) << s.name;

        CVec vd = parallel_transport(P, path, v0, 1e-14).v.back();
        EXPECT_LT((vd - v1).norm(), 1e-6) << s.name;
        EXPECT_GT((v1 - v0).norm(), 1e-2);  // transport is not trivial here
    }
}

TEST(ParallelTransport, PreservesFormForSelfAdjointConnection) {
    auto s = geometry::make_minkowski(3, cube_chart(3, 3.0));
    BundleModel b = trivial_bundle(2, 3);
    b.A = [](const Vec& x, FirstOrder& A) {
        A[0] = cmat2(cd(0, 0.7), cd(0.3, 0.2 * x(1)), cd(-0.3, 0.2 * x(1)), cd(0, -0.1));
        A[1] = cmat2(cd(0, x(0)), 0.5, -0.5, 0.0);
        A[2] = cmat2(0.0, cd(0, 0.4), cd(0, 0.4), cd(0, 0.9));
    };
    WaveOperator P{s, b};
    auto path = geometry::integrate_geodesic(s, Vec::Zero(3), vec({1.0, 0.6, -0.3}), 0.0, 1.5, 1e-10, 6);
    CVec v0(2);
    v0 << cd(0.4, -1.0), cd(1.2, 0.3);
    for (const auto& v : parallel_transport(P, path, v0).v) EXPECT_NEAR(v.squaredNorm(), v0.squaredNorm(), 1e-8);
}

TEST(Gamma, ExplicitThreeDimensional) {
    auto g = make_gamma_matrices(3);
    CMat s2(2, 2);
    s2 << 0, -kI, kI, 0;
    EXPECT_EQ(g[0], s2);
    for (const auto& G : g) EXPECT_EQ(G.real(), Mat::Zero(2, 2));
    EXPECT_LT((g[0] * g[0] - CMat::Identity(2, 2)).norm(), 1e-15);
    EXPECT_LT((g[1] * g[1] + CMat::Identity(2, 2)).norm(), 1e-15);
    EXPECT_LT((g[1] * g[2] + g[2] * g[1]).norm(), 1e-15);
}

TEST(Gamma, AllRelationsBothDimensions) {
    for (int m : {3, 4}) {
        auto g = make_gamma_matrices(m);
        EXPECT_EQ(static_cast<int>(g.size()), m);
        EXPECT_LT(gamma_relation_residual(g), 1e-15);
        EXPECT_EQ(g[0].adjoint(), g[0]);
        for (int k = 1; k < m; ++k) EXPECT_EQ(g[k].adjoint(), CMat(-g[k]));
    }
    try {
        make_gamma_matrices(5);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::UnsupportedDimension);
    }
}

TEST(Dirac, FlatConstantSections) {
    CVec c(4);
    c << cd(1, 0), cd(0, 1), cd(2, -1), cd(0.5, 0.5);
    Section f = [&](const Vec&) { return c; };
    auto D0 = make_dirac(geometry::make_minkowski(4, cube_chart(4, 2.0)), 0.0);
    EXPECT_LT(dirac_apply(D0, DiracVariant::Right, f, Vec::Zero(4)).norm(), 1e-12);
    auto D2 = make_dirac(geometry::make_minkowski(4, cube_chart(4, 2.0)), 2.0);
    EXPECT_LT((dirac_apply(D2, DiracVariant::Right, f, Vec::Zero(4)) - 2.0 * kI * c).norm(), 1e-12);
    EXPECT_LT((dirac_apply(D2, DiracVariant::Left, f, Vec::Zero(4)) + 2.0 * kI * c).norm(), 1e-12);
}

namespace {

Section spinor_section(int n) {
    return [n](const Vec& x) {
        CVec v(n);
        for (int a = 0; a < n; ++a)
            v(a) = cd(std::sin(0.7 * x(0) + (a + 1) * 0.4 * x(1)), std::cos(0.3 * x(x.size() - 1) - 0.2 * a * x(0)));
        return v;
    };
}

std::vector<DiracModel> curved_dirac() {
    return {make_dirac(geometry::make_conformal(4, cube_chart(4, 2.0), 1.0), 1.3),
            make_dirac(geometry::make_ultrastatic_bump(3, cube_chart(3, 2.0), 0.3, 0.5), 0.7)};
}

}  // namespace

TEST(Dirac, AnticommutesWithConjugation) {
    for (const auto& D : curved_dirac()) {
        Section f = spinor_section(spinor_rank(D));
        Section cf = [&](const Vec& y) { return CVec(f(y).conjugate()); };
        Vec x = Vec::Constant(D.m_dim, 0.2);
        CVec lhs = dirac_apply(D, DiracVariant::Right, f, x).conjugate();
        CVec rhs = -dirac_apply(D, DiracVariant::Right, cf, x);
        EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Dirac, SquareIsWaveOperator) {
    for (const auto& D : curved_dirac()) {
        Section f = spinor_section(spinor_rank(D));
        Section left = [&](const Vec& y) { return dirac_apply(D, DiracVariant::Left, f, y); };
        WaveOperator P = dirac_wave_operator(D);
        for (double t : {-0.3, 0.25}) {
            Vec x = Vec::Constant(D.m_dim, 0.1);
            x(0) = t;
            CVec lhs = dirac_apply(D, DiracVariant::Right, left, x);
            CVec rhs = apply_wave_operator(P, f, x);
            EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-6);
        }
    }
}

TEST(Dirac, ScalarPrincipalSymbol) {
    for (const auto& D : curved_dirac()) {
        Vec x = Vec::Constant(D.m_dim, 0.15);
        auto c = clifford_vectors(D, x);
        Vec k = Vec::LinSpaced(D.m_dim, 0.7, -1.3);
        CMat ck = CMat::Zero(spinor_rank(D), spinor_rank(D));
        for (int mu = 0; mu < D.m_dim; ++mu) ck += k(mu) * c[mu];
        double gkk = k.dot(D.base.metric(x).inverse() * k);
        EXPECT_LT((ck * ck - gkk * CMat::Identity(ck.rows(), ck.cols())).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Dirac, InducedConnectionIsSpinConnection) {
    for (const auto& D : curved_dirac()) {
        Vec x = Vec::Constant(D.m_dim, -0.2);
        WaveOperator P = dirac_wave_operator(D);
        auto w = connection_form(P, x);
        auto Om = spin_connection(D, x);
        for (int mu = 0; mu < D.m_dim; ++mu) EXPECT_LT((w[mu] - Om[mu]).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(DiracParametrix, ConstantKernelAndLinearity) {
    auto D = make_dirac(geometry::make_minkowski(3, cube_chart(3, 2.0)), 0.0);
    auto K1 = sample_kernel(3, Vec::Constant(3, -0.1), 0.05, {6, 6, 6},
                            [](const Vec&) { return CMat(cd(2, 1) * CMat::Identity(2, 2)); });
    for (const auto& v : dirac_parametrix_factor(D, K1).values) EXPECT_LT(v.norm(), 1e-12);
    auto K2 = sample_kernel(3, Vec::Constant(3, -0.1), 0.05, {6, 6, 6},
                            [](const Vec& x) { return CMat(std::exp(x(0) - x(2)) * CMat::Identity(2, 2)); });
    SampledKernel sum = K2;
    for (std::size_t i = 0; i < sum.values.size(); ++i) sum.values[i] = 3.0 * K1.values[i] + K2.values[i];
    auto a = dirac_parametrix_factor(D, sum), b = dirac_parametrix_factor(D, K1), c = dirac_parametrix_factor(D, K2);
    for (std::size_t i = 0; i < a.values.size(); ++i)
        EXPECT_LT((a.values[i] - 3.0 * b.values[i] - c.values[i]).norm(), 1e-12);
    auto tiny = sample_kernel(3, Vec::Zero(3), 0.05, {4, 6, 6}, [](const Vec&) { return CMat::Identity(2, 2); });
    try {
        dirac_parametrix_factor(D, tiny);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::GridTooCoarse);
    }
}

TEST(DiracParametrix, FlatMasslessClosedForm) {
    // W = 1/σ, σ = |x⃗|² − (x0 + iε)²; oracle S = c^μ∂_μ W with c^0 = γ_0, c^k = −γ_k.
    const double eps = 0.5;
    auto D = make_dirac(geometry::make_minkowski(4, cube_chart(4, 2.0)), 0.0);
    auto sigma = [&](const Vec& x) { return x.tail(3).squaredNorm() - (x(0) + kI * eps) * (x(0) + kI * eps); };
    auto K = sample_kernel(4, vec({0.2, 0.1, -0.1, 0.3}), 0.01, {7, 7, 7, 7},
                           [&](const Vec& x) { return CMat(CMat::Identity(4, 4) / sigma(x)); });
    auto S = dirac_parametrix_factor(D, K);
    double worst = 0.0;
    for (std::size_t k = 0; k < S.size(); ++k) {
        Vec x = S.point(S.multi(k));
        cd s2 = sigma(x) * sigma(x);
        CMat ref = D.gammas[0] * (2.0 * (x(0) + kI * eps) / s2);
        for (int j = 1; j < 4; ++j) ref -= D.gammas[j] * (-2.0 * x(j) / s2);
        worst = std::max(worst, (S.values[k] - ref).cwiseAbs().maxCoeff());
    }
    EXPECT_LT(worst, 1e-4);
}
