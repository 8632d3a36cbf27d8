#pragma once

#include <Eigen/Dense>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_integration.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hadamard {

/// Largest spacetime dimension / fibre rank handled without heap allocation.
inline constexpr int kMaxDim = 8;

using cd   = std::complex<double>;
using Vec  = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat  = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;
using CVec = Eigen::Matrix<cd, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using CMat = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr cd kI{0.0, 1.0};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class ErrorCode {
    OutOfChart,
    SignatureError,
    StencilOutOfChart,
    StepFailure,
    NoConvergence,
    ConjugatePointSuspected,
    ZeroCovector,
    NonNullInput,
    UnsupportedDimension,
    GridTooCoarse,
    FanTooNarrow,
    BadParity,
    BranchCutHit,
    NonConvergent,
    NeedsDerivatives,
    WindowClipped,
    NonNullSeed,
    EmptyPrediction,
    SupportEscape,
    ConfigError,
};

inline const char* to_string(ErrorCode c) {
    switch (c) {
        case ErrorCode::OutOfChart: return "OutOfChart";
        case ErrorCode::SignatureError: return "SignatureError";
        case ErrorCode::StencilOutOfChart: return "StencilOutOfChart";
        case ErrorCode::StepFailure: return "StepFailure";
        case ErrorCode::NoConvergence: return "NoConvergence";
        case ErrorCode::ConjugatePointSuspected: return "ConjugatePointSuspected";
        case ErrorCode::ZeroCovector: return "ZeroCovector";
        case ErrorCode::NonNullInput: return "NonNullInput";
        case ErrorCode::UnsupportedDimension: return "UnsupportedDimension";
        case ErrorCode::GridTooCoarse: return "GridTooCoarse";
        case ErrorCode::FanTooNarrow: return "FanTooNarrow";
        case ErrorCode::BadParity: return "BadParity";
        case ErrorCode::BranchCutHit: return "BranchCutHit";
        case ErrorCode::NonConvergent: return "NonConvergent";
        case ErrorCode::NeedsDerivatives: return "NeedsDerivatives";
        case ErrorCode::WindowClipped: return "WindowClipped";
        case ErrorCode::NonNullSeed: return "NonNullSeed";
        case ErrorCode::EmptyPrediction: return "EmptyPrediction";
        case ErrorCode::SupportEscape: return "SupportEscape";
        case ErrorCode::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode c, const std::string& msg) { throw Error(c, msg); }

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

inline Mat minkowski_eta(int m, int time_axis = 0) {
    Mat e = Mat::Zero(m, m);
    for (int i = 0; i < m; ++i) e(i, i) = (i == time_axis) ? 1.0 : -1.0;
    return e;
}

/// η(x,x) with the time component at index 0.
inline double eta_norm(const Vec& x) {
    double s = x(0) * x(0);
    for (int i = 1; i < x.size(); ++i) s -= x(i) * x(i);
    return s;
}

/// C^1 smoothstep bridge on [0,1] extended by constants; C^∞ variant below.
inline double smooth_bridge(double u) {
    if (u <= 0.0) return 0.0;
    if (u >= 1.0) return 1.0;
    auto f = [](double v) { return v > 0.0 ? std::exp(-1.0 / v) : 0.0; };
    double a = f(u), b = f(1.0 - u);
    return a / (a + b);
}

/// Compactly supported C^∞ bump on (-1,1), equal to 1 at 0.
inline double bump(double u) {
    double a = std::abs(u);
    if (a >= 1.0) return 0.0;
    return std::exp(1.0 - 1.0 / (1.0 - a * a));
}

// ---------------------------------------------------------------------------
// Quadrature rules (GSL fixed-order tables)
// ---------------------------------------------------------------------------

struct Rule {
    std::vector<double> x;
    std::vector<double> w;
    std::size_t size() const { return x.size(); }
};

/// Gauss–Legendre nodes and weights on [a,b].
inline Rule gauss_legendre(int n, double a, double b) {
    Rule r;
    gsl_integration_glfixed_table* t = gsl_integration_glfixed_table_alloc(static_cast<size_t>(n));
    r.x.resize(n);
    r.w.resize(n);
    for (int i = 0; i < n; ++i) gsl_integration_glfixed_point(a, b, static_cast<size_t>(i), &r.x[i], &r.w[i], t);
    gsl_integration_glfixed_table_free(t);
    return r;
}

/// Gauss–Hermite rule for ∫ f(x) exp(-(x-c)^2/(2 s^2)) dx; weights include the Gaussian.
inline Rule gauss_hermite(int n, double c, double s) {
    Rule r;
    gsl_integration_fixed_workspace* w =
        gsl_integration_fixed_alloc(gsl_integration_fixed_hermite, static_cast<size_t>(n), 0.0, 1.0, 0.0, 0.0);
    const double* xs = gsl_integration_fixed_nodes(w);
    const double* ws = gsl_integration_fixed_weights(w);
    r.x.resize(n);
    r.w.resize(n);
    const double sc = std::sqrt(2.0) * s;
    for (int i = 0; i < n; ++i) {
        r.x[i] = c + sc * xs[i];
        r.w[i] = sc * ws[i];
    }
    gsl_integration_fixed_free(w);
    return r;
}

/// Composite Gauss–Legendre over consecutive breakpoints.
inline Rule composite_legendre(const std::vector<double>& breaks, int n_per) {
    Rule out;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
        if (breaks[i + 1] <= breaks[i]) continue;
        Rule r = gauss_legendre(n_per, breaks[i], breaks[i + 1]);
        out.x.insert(out.x.end(), r.x.begin(), r.x.end());
        out.w.insert(out.w.end(), r.w.begin(), r.w.end());
    }
    return out;
}

/// Nodes on [0, L] clustered at 0 with resolution `scale`: x = scale·sinh(u).
inline Rule sinh_clustered(int n, double L, double scale) {
    Rule out;
    if (L <= 0.0) return out;
    const double U = std::asinh(L / scale);
    Rule r = gauss_legendre(n, 0.0, U);
    out.x.resize(n);
    out.w.resize(n);
    for (int i = 0; i < n; ++i) {
        out.x[i] = scale * std::sinh(r.x[i]);
        out.w[i] = r.w[i] * scale * std::cosh(r.x[i]);
    }
    return out;
}

/// Fibonacci lattice of unit vectors on S^{d-1} for d ∈ {2,3,4}.
inline std::vector<Vec> fibonacci_directions(int d, int count) {
    std::vector<Vec> dirs;
    dirs.reserve(count);
    if (d == 1) {
        Vec a(1), b(1);
        a << 1.0;
        b << -1.0;
        return {a, b};
    }
    if (d == 2) {
        for (int i = 0; i < count; ++i) {
            double t = 2.0 * kPi * (i + 0.5) / count;
            Vec v(2);
            v << std::cos(t), std::sin(t);
            dirs.push_back(v);
        }
        return dirs;
    }
    if (d == 3) {
        const double ga = kPi * (3.0 - std::sqrt(5.0));
        for (int i = 0; i < count; ++i) {
            double z = 1.0 - 2.0 * (i + 0.5) / count;
            double r = std::sqrt(std::max(0.0, 1.0 - z * z));
            Vec v(3);
            v << z, r * std::cos(ga * i), r * std::sin(ga * i);
            dirs.push_back(v);
        }
        return dirs;
    }
    // d == 4: generalized spiral via Hopf-style coordinates with irrational rotations.
    const double phi1 = (1.0 + std::sqrt(5.0)) / 2.0;
    const double a1 = 1.0 / phi1, a2 = 1.0 / (phi1 * phi1 + 1.0);
    for (int i = 0; i < count; ++i) {
        double u = (i + 0.5) / count;
        double r1 = std::sqrt(u), r2 = std::sqrt(1.0 - u);
        double t1 = 2.0 * kPi * std::fmod(i * a1, 1.0);
        double t2 = 2.0 * kPi * std::fmod(i * a2, 1.0);
        Vec v(4);
        v << r1 * std::cos(t1), r2 * std::cos(t2), r1 * std::sin(t1), r2 * std::sin(t2);
        dirs.push_back(v);
    }
    return dirs;
}

inline double angle_between(const Vec& a, const Vec& b) {
    double c = a.dot(b) / (a.norm() * b.norm());
    return std::acos(std::clamp(c, -1.0, 1.0));
}

}  // namespace hadamard
