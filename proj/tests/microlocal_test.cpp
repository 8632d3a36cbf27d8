#include "hadamard/hadamard.hpp"
#include "hadamard/microlocal.hpp"

#include <gtest/gtest.h>

using namespace hadamard;
using namespace hadamard::microlocal;
using geometry::cube_chart;

namespace {

Vec vec(std::initializer_list<double> l) {
    Vec v(static_cast<int>(l.size()));
    int i = 0;
    for (double d : l) v(i++) = d;
    return v;
}

template <class Fn>
std::optional<ErrorCode> code_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

constexpr double kH1 = 1.0 / 64.0;

SampledDistribution line(const std::function<cd(double)>& f) {
    return sample_scalar(vec({-4.0}), vec({kH1}), {513}, [&](const Vec& x) { return f(x(0)); });
}

// flagged signs at one probe: bit 0 = +1, bit 1 = −1
int flagged_signs(const WavefrontEstimate& e, double at) {
    int s = 0;
    for (const auto& x : e.entries)
        if (std::abs(x.point(0) - at) < 1e-12 && x.flagged) s |= x.dir(0) > 0 ? 1 : 2;
    return s;
}

// step resolved on the grid: arctan profile of width w, singular at scales above w
cd soft_step(double x, double w) { return cd(0.5 + std::atan(x / w) / kPi); }

EstimatorOptions opts1d() {
    EstimatorOptions o;
    o.window_scale = 1.0;
    return o;
}

// flat m = 3 massless G^(1) kernel in the difference variable z = y − x, time at index 0
SampledDistribution kernel3(int n, double h, double eps) {
    Vec o = Vec::Constant(3, -0.5 * (n - 1) * h);
    return sample_scalar(o, Vec::Constant(3, h), {n, n, n}, [&](const Vec& z) {
        double s = z(1) * z(1) + z(2) * z(2) - z(0) * z(0);
        return kernel_factor(3, KernelTerm::G1, kernel_argument(s, 0.0, z(0), eps));
    });
}

std::vector<ConeDirection> exact_future_cone(int count) {
    auto s = geometry::make_minkowski(3, cube_chart(3, 1.0));
    return difference_cone(predicted_R(s, past_null_seeds(s, Vec::Zero(3), count), 0.0, 0.5, 2));
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(Sampled, ValidationAndDerivative) {
    auto u = line([](double x) { return cd(x * x, 0.0); });
    EXPECT_EQ(u.size(), 513u);
    auto du = differentiate(u, 0);
    EXPECT_NEAR(du.values[0][300].real(), 2.0 * u.point(300)(0), 1e-12);
    SampledDistribution bad = u;
    bad.spacing(0) = 0.0;
    EXPECT_EQ(code_of([&] { bad.validate(); }), ErrorCode::ConfigError);
    bad = u;
    bad.values[0][3] = cd(std::nan(""), 0.0);
    EXPECT_EQ(code_of([&] { bad.validate(); }), ErrorCode::ConfigError);
}

TEST(Sampled, LinearPullbackMatchesComposition) {
    const double h = 0.02;
    auto f = [](const Vec& x) { return cd(std::exp(-2.0 * x.squaredNorm()) * std::cos(x(0) - x(1))); };
    auto u = sample_scalar(vec({-64 * h, -64 * h}), vec({h, h}), {129, 129}, f);
    Mat L(2, 2);
    L << 1.0, 0.4, 0.0, 1.0;
    auto v = linear_pullback(u, L, Vec::Zero(2));
    Mat Li = L.inverse();
    double err = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
        Vec x = v.point(k);
        if (x.cwiseAbs().maxCoeff() > 0.8) continue;
        err = std::max(err, std::abs(v.values[0][k] - f(Li * x)));
    }
    EXPECT_LT(err, 2.0 * h * h);
}

TEST(Estimator, DeltaSpike) {
    auto u = line([](double x) { return std::abs(x) < 0.5 * kH1 ? cd(1.0 / kH1) : cd(0.0); });
    auto e = estimate_wavefront(u, {vec({0.0}), vec({-2.0}), vec({2.0})}, opts1d());
    EXPECT_EQ(flagged_signs(e, 0.0), 3);
    EXPECT_EQ(flagged_signs(e, -2.0), 0);
    EXPECT_EQ(flagged_signs(e, 2.0), 0);
}

TEST(Estimator, GaussianIsClean) {
    auto u = line([](double x) { return cd(std::exp(-x * x)); });
    auto e = estimate_wavefront(u, {vec({0.0}), vec({-1.5}), vec({0.7})}, opts1d());
    EXPECT_TRUE(e.flagged().empty());
}

TEST(Estimator, Heaviside) {
    auto u = line([](double x) { return x >= 0 ? cd(1.0) : cd(0.0); });
    auto e = estimate_wavefront(u, {vec({0.0}), vec({-2.0}), vec({2.0})}, opts1d());
    EXPECT_EQ(flagged_signs(e, 0.0), 3);
    EXPECT_EQ(flagged_signs(e, -2.0), 0);
    EXPECT_EQ(flagged_signs(e, 2.0), 0);
}

TEST(Estimator, BoundaryValueOfHolomorphicFunction) {
    // 1/(x + iε₀) is holomorphic in the upper half plane side; its transform with e^{+ikx} lives on k < 0
    const double e0 = kH1;
    auto u = line([&](double x) { return 1.0 / cd(x, e0); });
    auto e = estimate_wavefront(u, {vec({0.0}), vec({2.0})}, opts1d());
    EXPECT_EQ(flagged_signs(e, 0.0), 2);
    EXPECT_EQ(flagged_signs(e, 2.0), 0);
    auto c = line([&](double x) { return 1.0 / cd(x, -e0); });
    EXPECT_EQ(flagged_signs(estimate_wavefront(c, {vec({0.0})}, opts1d()), 0.0), 1);
}

TEST(Estimator, WindowErrors) {
    auto u = line([](double x) { return cd(std::exp(-x * x)); });
    EXPECT_EQ(code_of([&] { estimate_wavefront(u, {vec({3.5})}, opts1d()); }), ErrorCode::WindowClipped);
    EstimatorOptions o;
    o.window_scale = 0.2;
    EXPECT_EQ(code_of([&] { estimate_wavefront(u, {vec({0.0})}, o); }), ErrorCode::GridTooCoarse);
}

TEST(Estimator, ConicInvariance) {
    // rescaling the grid spacing leaves flagged directions unchanged
    auto make = [](double h) {
        return sample_scalar(vec({-64 * h, -64 * h}), vec({h, h}), {129, 129},
                             [h](const Vec& x) { return soft_step(x(0) + 0.5 * x(1), h); });
    };
    EstimatorOptions o;
    auto a = wf_translation_invariant(make(0.01), o), b = wf_translation_invariant(make(0.03), o);
    ASSERT_EQ(a.entries.size(), b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) EXPECT_EQ(a.entries[i].flagged, b.entries[i].flagged);
    EXPECT_FALSE(a.flagged().empty());
}

TEST(Estimator, ConormalOfLineInTwoDimensions) {
    // Heaviside across x₀ + 0.5 x₁ = 0: flagged directions are ±(1, 0.5)/|·|
    const double h = 0.02;
    auto u = sample_scalar(vec({-64 * h, -64 * h}), vec({h, h}), {129, 129},
                           [h](const Vec& x) { return soft_step(x(0) + 0.5 * x(1), h); });
    auto e = wf_translation_invariant(u);
    Vec nrm = vec({1.0, 0.5}).normalized();
    for (const auto& x : e.entries) {
        double a = std::min(angle_between(x.dir, nrm), angle_between(x.dir, Vec(-nrm)));
        if (a > 10.0 * kPi / 180.0) {
            EXPECT_FALSE(x.flagged) << x.dir.transpose() << " N=" << x.exponent;
        }
        if (a < 0.5 * e.cell) {
            EXPECT_TRUE(x.flagged) << x.dir.transpose() << " N=" << x.exponent;
        }
    }
}

TEST(Estimator, SumBoundAndMorphismEquivariance) {
    const double h = 0.02;
    auto heav = [&](const Vec& nrm) {
        return sample_scalar(vec({-64 * h, -64 * h}), vec({h, h}), {129, 129},
                             [nrm, h](const Vec& x) { return soft_step(x.dot(nrm), h); });
    };
    // a step along a grid axis samples cleanly without smoothing
    auto u1 = sample_scalar(vec({-64 * h, -64 * h}), vec({h, h}), {129, 129},
                            [](const Vec& x) { return x(0) >= 0 ? cd(1.0) : cd(0.0); });
    auto u2 = heav(vec({0.3, 1.0}));
    SampledDistribution sum = u1;
    for (std::size_t k = 0; k < sum.size(); ++k) sum.values[0][k] += u2.values[0][k];
    auto e1 = wf_translation_invariant(u1), e2 = wf_translation_invariant(u2), es = wf_translation_invariant(sum);
    for (const auto& x : es.flagged()) {
        double best = kPi;
        for (const auto* e : {&e1, &e2})
            for (const auto& y : e->flagged()) best = std::min(best, angle_between(x.dir, y.dir));
        EXPECT_LE(best, es.cell + 1e-12) << x.dir.transpose();
    }
    // linear map: directions of u ∘ L⁻¹ are L⁻ᵀ images of those of u
    Mat L(2, 2);
    L << 1.0, 0.4, 0.0, 1.0;
    Mat Li = L.inverse();
    Vec n2 = vec({0.3, 1.0});
    auto v = sample_scalar(vec({-64 * h, -64 * h}), vec({h, h}), {129, 129},
                           [&](const Vec& x) { return soft_step(n2.dot(Li * x), h); });
    auto ev = wf_translation_invariant(v);
    Mat LiT = Li.transpose();
    for (const auto& x : ev.flagged()) {
        if (x.marginal) continue;
        double best = kPi;
        for (const auto& y : e2.flagged()) best = std::min(best, angle_between(x.dir, Vec((LiT * y.dir).normalized())));
        EXPECT_LE(best, ev.cell + 1e-12) << x.dir.transpose();
    }
    EXPECT_FALSE(ev.flagged().empty());
}

// ---------------------------------------------------------------------------

TEST(TranslationInvariant, GaussianKernelIsEmpty) {
    const int n = 48;
    const double h = 0.05;
    auto u = sample_scalar(Vec::Constant(3, -0.5 * (n - 1) * h), Vec::Constant(3, h), {n, n, n},
                           [](const Vec& z) { return cd(std::exp(-4.0 * z.squaredNorm())); });
    EXPECT_TRUE(wf_translation_invariant(u).flagged().empty());
}

TEST(TranslationInvariant, MasslessKernelConeMatchesNullCone) {
    const int n = 64;
    const double h = 0.05;
    auto u = kernel3(n, h, 1.5 * h);
    auto est = wf_translation_invariant(u);
    auto pred = exact_future_cone(64);
    MscReport r = msc_verdict(flagged_cone(est), pred, 10.0 * kPi / 180.0);
    EXPECT_GE(r.completeness, 0.9);
    EXPECT_GE(r.soundness, 0.9);
    // only one causal half: no flagged direction with k₀ < 0 beyond the marginal band
    for (const auto& e : est.flagged())
        if (!e.marginal) {
            EXPECT_GT(e.dir(0), 0.0) << e.dir.transpose();
        }
    // a discrete derivative does not enlarge the cone
    auto est_d = wf_translation_invariant(differentiate(u, 1));
    for (const auto& e : est_d.flagged()) {
        if (e.marginal) continue;
        double best = kPi;
        for (const auto& f : est.flagged()) best = std::min(best, angle_between(e.dir, f.dir));
        EXPECT_LE(best, est.cell + 1e-12) << e.dir.transpose();
    }
}

// ---------------------------------------------------------------------------

TEST(PredictedR, FlatStraightRay) {
    auto s = geometry::make_minkowski(4, cube_chart(4, 2.0));
    Vec xi = vec({-1.0, 1.0, 0.0, 0.0});
    auto R = predicted_R(s, {{Vec::Zero(4), xi}}, 0.0, 1.0, 4);
    ASSERT_EQ(R.samples.size(), 5u);
    for (std::size_t i = 0; i < R.samples.size(); ++i) {
        const auto& smp = R.samples[i];
        double t = 0.25 * i;
        // velocity g^{-1}ξ = (−1, −1, 0, 0)
        EXPECT_NEAR((smp.qp - vec({-t, -t, 0, 0})).norm(), 0.0, 1e-12);
        EXPECT_NEAR((smp.xip + xi).norm(), 0.0, 1e-12);
        EXPECT_EQ(geometry::null_classify(s, smp.q, smp.xi), geometry::NullClass::PastNull);
        EXPECT_EQ(geometry::null_classify(s, smp.qp, smp.xip), geometry::NullClass::FutureNull);
    }
}

TEST(PredictedR, SeedErrors) {
    auto s = geometry::make_minkowski(4, cube_chart(4, 2.0));
    EXPECT_EQ(code_of([&] { predicted_R(s, {{Vec::Zero(4), vec({0.0, 1.0, 0.0, 0.0})}}, 0.0, 1.0); }),
              ErrorCode::NonNullSeed);
    EXPECT_EQ(code_of([&] { predicted_R(s, {{Vec::Zero(4), vec({1.0, 1.0, 0.0, 0.0})}}, 0.0, 1.0); }),
              ErrorCode::NonNullSeed);
}

TEST(PredictedR, SymmetryAndCoparallelismOnCurvedMetric) {
    auto s = geometry::make_ultrastatic_bump(3, cube_chart(3, 2.0), 0.3, 0.5);
    Vec q = vec({0.1, -0.2, 0.1});
    auto seeds = past_null_seeds(s, q, 6);
    auto R = predicted_R(s, seeds, 0.0, 0.8, 4);
    for (const auto& smp : R.samples) {
        // (q′, −ξ′) ∼ (q, ξ) through the shared bicharacteristic
        EXPECT_TRUE(geometry::related(s, {smp.qp, Vec(-smp.xip)}, {smp.q, smp.xi}, 1e-6));
        EXPECT_EQ(geometry::null_classify(s, smp.qp, smp.xip, 1e-7), geometry::NullClass::FutureNull);
    }
    for (const auto& sd : seeds) EXPECT_LT(coparallel_residual(s, sd, 0.8), 1e-7);
}

TEST(Closure, FlatPairGivesOrbitProduct) {
    auto s = geometry::make_minkowski(3, cube_chart(3, 1.0));
    PairSample p{{Vec::Zero(3), vec({-1.0, 1.0, 0.0})}, {vec({0.2, 0.0, 0.1}), vec({1.0, 0.0, 1.0})}};
    auto c = pst_closure({p}, s, -0.5, 0.5, 4);
    EXPECT_EQ(c.size(), 81u);
    for (const auto& x : c) {
        EXPECT_NEAR((x.a.xi - p.a.xi).norm(), 0.0, 1e-12);
        Vec da = x.a.q - p.a.q;
        EXPECT_NEAR(da(0) - da(1), 0.0, 1e-12);  // velocity g⁻¹ξ = (1, 1, 0)
        EXPECT_NEAR(da(2), 0.0, 1e-12);
    }
}

TEST(Closure, IdempotentUpToFlowResolution) {
    for (const auto& s : {geometry::make_minkowski(3, cube_chart(3, 0.6)),
                          geometry::make_conformal(3, cube_chart(3, 0.6), 0.5)}) {
        auto seeds = past_null_seeds(s, Vec::Zero(3), 2);
        std::vector<PairSample> in{{seeds[0], {seeds[1].q, Vec(-seeds[1].xi)}}};
        const double T = 2.0;
        const int n = 16;
        auto once = pst_closure(in, s, -T, T, n);
        auto twice = pst_closure(once, s, -T, T, n);
        EXPECT_LT(set_distance(twice, once), 2.0 * T / n) << s.name;
        EXPECT_LT(set_distance(once, twice), 1e-12);
    }
}

TEST(Closure, ZeroCovectorRejected) {
    auto s = geometry::make_minkowski(3, cube_chart(3, 1.0));
    PairSample p{{Vec::Zero(3), Vec::Zero(3)}, {Vec::Zero(3), vec({1.0, 1.0, 0.0})}};
    EXPECT_TRUE(code_of([&] { pst_closure({p}, s, 0.0, 1.0); }).has_value());
}

TEST(Verdict, TrivialCases) {
    auto pred = exact_future_cone(16);
    MscReport same = msc_verdict(pred, pred, 1e-6);
    EXPECT_EQ(same.completeness, 1.0);
    EXPECT_EQ(same.soundness, 1.0);
    EXPECT_TRUE(same.pass);
    MscReport none = msc_verdict({}, pred, 0.1);
    EXPECT_EQ(none.completeness, 0.0);
    EXPECT_FALSE(none.pass);
    EXPECT_EQ(code_of([&] { msc_verdict(pred, {}, 0.1); }), ErrorCode::EmptyPrediction);
}
