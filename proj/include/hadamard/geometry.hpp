#pragma once

#include "hadamard/core.hpp"

#include <boost/numeric/odeint.hpp>

#include <array>
#include <string>

namespace hadamard::geometry {

// ---------------------------------------------------------------------------
// Spacetime model
// ---------------------------------------------------------------------------

struct ChartBox {
    Vec lo, hi;

    bool contains(const Vec& x, double margin = 0.0) const {
        for (int i = 0; i < x.size(); ++i)
            if (x(i) < lo(i) + margin || x(i) > hi(i) - margin) return false;
        return true;
    }
    double extent() const { return (hi - lo).maxCoeff(); }
    Vec center() const { return 0.5 * (lo + hi); }
};

/// First derivatives of the metric: dg[l](mu,nu) = ∂_l g_{mu nu}.
using MetricDerivs = std::array<Mat, kMaxDim>;

struct SpacetimeModel {
    std::string name;
    int m = 0;
    int time_axis = 0;
    ChartBox chart;
    std::function<Mat(const Vec&)> metric;
    std::function<void(const Vec&, MetricDerivs&)> metric_derivs;  // optional
    double fd_fraction = 1e-3;

    double fd_step() const { return fd_fraction * chart.extent(); }
};

inline ChartBox cube_chart(int m, double half, const Vec& center = Vec()) {
    ChartBox c;
    c.lo = Vec::Constant(m, -half);
    c.hi = Vec::Constant(m, half);
    if (center.size() == m) {
        c.lo += center;
        c.hi += center;
    }
    return c;
}

inline SpacetimeModel make_minkowski(int m, const ChartBox& chart, int time_axis = 0) {
    SpacetimeModel s;
    s.name = "minkowski";
    s.m = m;
    s.time_axis = time_axis;
    s.chart = chart;
    const Mat eta = minkowski_eta(m, time_axis);
    s.metric = [eta](const Vec&) { return eta; };
    s.metric_derivs = [m](const Vec&, MetricDerivs& dg) {
        for (int l = 0; l < m; ++l) dg[l] = Mat::Zero(m, m);
    };
    return s;
}

/// g = a(t)^2 η with a(t) = 1 + c t^2, t the time coordinate.
inline SpacetimeModel make_conformal(int m, const ChartBox& chart, double c, int time_axis = 0) {
    SpacetimeModel s;
    s.name = "conformal";
    s.m = m;
    s.time_axis = time_axis;
    s.chart = chart;
    const Mat eta = minkowski_eta(m, time_axis);
    s.metric = [eta, c, time_axis](const Vec& x) {
        double t = x(time_axis);
        double a = 1.0 + c * t * t;
        return Mat(a * a * eta);
    };
    s.metric_derivs = [eta, c, m, time_axis](const Vec& x, MetricDerivs& dg) {
        double t = x(time_axis);
        double a = 1.0 + c * t * t;
        for (int l = 0; l < m; ++l) dg[l] = Mat::Zero(m, m);
        dg[time_axis] = 2.0 * a * (2.0 * c * t) * eta;
    };
    return s;
}

/// Ultrastatic: g = dt^2 - (1 + A exp(-|x - x_c|^2 / (2 w^2))) δ_ij dx^i dx^j.
inline SpacetimeModel make_ultrastatic_bump(int m, const ChartBox& chart, double amp, double width,
                                            const Vec& bump_center = Vec(), int time_axis = 0) {
    SpacetimeModel s;
    s.name = "ultrastatic-bump";
    s.m = m;
    s.time_axis = time_axis;
    s.chart = chart;
    Vec ctr = bump_center.size() == m ? bump_center : Vec(Vec::Zero(m));
    auto conf = [=](const Vec& x, Vec* grad) {
        double r2 = 0.0;
        for (int i = 0; i < m; ++i)
            if (i != time_axis) r2 += (x(i) - ctr(i)) * (x(i) - ctr(i));
        double e = amp * std::exp(-r2 / (2.0 * width * width));
        if (grad) {
            *grad = Vec::Zero(m);
            for (int i = 0; i < m; ++i)
                if (i != time_axis) (*grad)(i) = -e * (x(i) - ctr(i)) / (width * width);
        }
        return 1.0 + e;
    };
    s.metric = [=](const Vec& x) {
        double f = conf(x, nullptr);
        Mat g = Mat::Zero(m, m);
        for (int i = 0; i < m; ++i) g(i, i) = (i == time_axis) ? 1.0 : -f;
        return g;
    };
    s.metric_derivs = [=](const Vec& x, MetricDerivs& dg) {
        Vec grad;
        conf(x, &grad);
        for (int l = 0; l < m; ++l) {
            dg[l] = Mat::Zero(m, m);
            for (int i = 0; i < m; ++i)
                if (i != time_axis) dg[l](i, i) = -grad(l);
        }
    };
    return s;
}

// ---------------------------------------------------------------------------
// Metric access
// ---------------------------------------------------------------------------

inline void check_in_chart(const SpacetimeModel& s, const Vec& x, double margin = 0.0) {
    if (x.size() != s.m) fail(ErrorCode::OutOfChart, "point has wrong dimension");
    if (!s.chart.contains(x, margin)) fail(ErrorCode::OutOfChart, "point outside chart box");
}

/// Validated metric evaluation (symmetry and Lorentzian signature).
inline Mat metric_at(const SpacetimeModel& s, const Vec& x) {
    check_in_chart(s, x);
    Mat g = s.metric(x);
    if ((g - g.transpose()).cwiseAbs().maxCoeff() > 1e-12) fail(ErrorCode::SignatureError, "metric not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(g);
    int pos = 0, neg = 0;
    for (int i = 0; i < s.m; ++i) {
        if (es.eigenvalues()(i) > 0) ++pos;
        else if (es.eigenvalues()(i) < 0) ++neg;
    }
    if (pos != 1 || neg != s.m - 1) fail(ErrorCode::SignatureError, "metric signature is not (+,-,...,-)");
    return g;
}

/// ∂_l g_{mu nu}, analytic when provided, else 4th-order central differences.
inline void metric_derivatives(const SpacetimeModel& s, const Vec& x, MetricDerivs& dg, bool checked = true) {
    if (s.metric_derivs) {
        s.metric_derivs(x, dg);
        return;
    }
    const double h = s.fd_step();
    if (checked && !s.chart.contains(x, 2.0 * h)) fail(ErrorCode::StencilOutOfChart, "metric stencil leaves chart");
    for (int l = 0; l < s.m; ++l) {
        Vec e = Vec::Zero(s.m);
        e(l) = h;
        dg[l] = (8.0 * (s.metric(x + e) - s.metric(x - e)) - (s.metric(x + 2 * e) - s.metric(x - 2 * e))) / (12.0 * h);
    }
}

// ---------------------------------------------------------------------------
// Christoffel symbols
// ---------------------------------------------------------------------------

struct Christoffel {
    int m = 0;
    std::array<double, kMaxDim * kMaxDim * kMaxDim> c{};
    double& operator()(int l, int a, int b) { return c[(l * kMaxDim + a) * kMaxDim + b]; }
    double operator()(int l, int a, int b) const { return c[(l * kMaxDim + a) * kMaxDim + b]; }
};

inline Christoffel christoffel_from(const Mat& ginv, const MetricDerivs& dg, int m) {
    Christoffel G;
    G.m = m;
    for (int l = 0; l < m; ++l)
        for (int a = 0; a < m; ++a)
            for (int b = a; b < m; ++b) {
                double v = 0.0;
                for (int s = 0; s < m; ++s) v += ginv(l, s) * (dg[a](s, b) + dg[b](s, a) - dg[s](a, b));
                G(l, a, b) = 0.5 * v;
                G(l, b, a) = 0.5 * v;
            }
    return G;
}

/// Γ^l_{ab}(x); symmetric in the lower pair by construction.
inline Christoffel christoffels(const SpacetimeModel& s, const Vec& x, bool checked = true) {
    MetricDerivs dg;
    metric_derivatives(s, x, dg, checked);
    Mat ginv = s.metric(x).inverse();
    return christoffel_from(ginv, dg, s.m);
}

/// dG[k] = ∂_k Γ by 4th-order central differences of christoffels.
inline void christoffel_derivatives(const SpacetimeModel& s, const Vec& x, std::array<Christoffel, kMaxDim>& dG) {
    const double h = s.fd_step();
    for (int k = 0; k < s.m; ++k) {
        Vec e = Vec::Zero(s.m);
        e(k) = h;
        Christoffel p1 = christoffels(s, x + e, false), m1 = christoffels(s, x - e, false);
        Christoffel p2 = christoffels(s, x + 2 * e, false), m2 = christoffels(s, x - 2 * e, false);
        dG[k].m = s.m;
        for (std::size_t i = 0; i < p1.c.size(); ++i)
            dG[k].c[i] = (8.0 * (p1.c[i] - m1.c[i]) - (p2.c[i] - m2.c[i])) / (12.0 * h);
    }
}

// ---------------------------------------------------------------------------
// Orthonormal frames
// ---------------------------------------------------------------------------

/// Gram–Schmidt on the coordinate basis, time axis first; columns are e_0..e_{m-1}.
inline Mat orthonormal_frame(const SpacetimeModel& s, const Vec& p) {
    const int m = s.m;
    Mat g = s.metric(p);
    std::vector<int> order{s.time_axis};
    for (int i = 0; i < m; ++i)
        if (i != s.time_axis) order.push_back(i);
    Mat E = Mat::Zero(m, m);
    for (int a = 0; a < m; ++a) {
        Vec v = Vec::Zero(m);
        v(order[a]) = 1.0;
        for (int b = 0; b < a; ++b) {
            Vec eb = E.col(b);
            double nb = eb.dot(g * eb);
            v -= (v.dot(g * eb) / nb) * eb;
        }
        double n = v.dot(g * v);
        if ((a == 0 && n <= 0.0) || (a > 0 && n >= 0.0))
            fail(ErrorCode::SignatureError, "coordinate basis does not yield an orthonormal Lorentz frame");
        E.col(a) = v / std::sqrt(std::abs(n));
    }
    return E;
}

// ---------------------------------------------------------------------------
// Geodesic integration
// ---------------------------------------------------------------------------

struct GeodesicSample {
    double t;
    Vec x, u;
};

struct GeodesicPath {
    std::vector<GeodesicSample> samples;
    int steps = 0;
    bool chart_exit = false;
    double t_end = 0.0;

    /// Cubic Hermite interpolation of position and velocity between stored samples.
    GeodesicSample at(double t, const SpacetimeModel& s) const;
};

struct RayOptions {
    bool jacobi = false;  // integrate ∂x(t)/∂u(0) alongside
    int extra_dim = 0;
    std::function<void(const Vec& x, const Vec& u, const double* e, double* de)> extra;
    std::vector<double> extra0;
    double tol = 1e-10;
};

struct RayState {
    double t = 0.0;
    Vec x, u;
    Mat J, Jdot;  // ∂x(t)/∂u0 and its t-derivative
    std::vector<double> extra;
};

struct RayResult {
    std::vector<RayState> out;  // one per requested time
    std::vector<GeodesicSample> steps;
    int n_steps = 0;
    bool chart_exit = false;
};

namespace detail {

using State = std::vector<double>;

struct GeodesicRhs {
    const SpacetimeModel* s;
    const RayOptions* opt;

    void operator()(const State& y, State& dy, double) const {
        const int m = s->m;
        Vec x = Eigen::Map<const Eigen::VectorXd>(y.data(), m);
        Vec u = Eigen::Map<const Eigen::VectorXd>(y.data() + m, m);
        if (!s->chart.contains(x)) {
            // keep the stepper alive; the driver reports the chart exit
            std::fill(dy.begin(), dy.end(), 0.0);
            for (int i = 0; i < m; ++i) dy[i] = u(i);
            return;
        }
        Christoffel G = christoffels(*s, x, false);
        for (int l = 0; l < m; ++l) {
            dy[l] = u(l);
            double a = 0.0;
            for (int p = 0; p < m; ++p)
                for (int q = 0; q < m; ++q) a += G(l, p, q) * u(p) * u(q);
            dy[m + l] = -a;
        }
        std::size_t off = 2 * m;
        if (opt->jacobi) {
            std::array<Christoffel, kMaxDim> dG;
            christoffel_derivatives(*s, x, dG);
            const double* J = y.data() + off;
            const double* Jd = y.data() + off + m * m;
            double* dJ = dy.data() + off;
            double* dJd = dy.data() + off + m * m;
            for (int i = 0; i < m * m; ++i) dJ[i] = Jd[i];
            for (int c = 0; c < m; ++c)
                for (int l = 0; l < m; ++l) {
                    double a = 0.0;
                    for (int k = 0; k < m; ++k) {
                        double jk = J[k * m + c];
                        if (jk == 0.0) continue;
                        for (int p = 0; p < m; ++p)
                            for (int q = 0; q < m; ++q) a += dG[k](l, p, q) * jk * u(p) * u(q);
                    }
                    for (int p = 0; p < m; ++p)
                        for (int q = 0; q < m; ++q) a += 2.0 * G(l, p, q) * u(p) * Jd[q * m + c];
                    dJd[l * m + c] = -a;
                }
            off += 2 * m * m;
        }
        if (opt->extra_dim > 0) opt->extra(x, u, y.data() + off, dy.data() + off);
    }
};

inline RayState unpack(const State& y, double t, int m, const RayOptions& opt) {
    RayState r;
    r.t = t;
    r.x = Eigen::Map<const Eigen::VectorXd>(y.data(), m);
    r.u = Eigen::Map<const Eigen::VectorXd>(y.data() + m, m);
    std::size_t off = 2 * m;
    if (opt.jacobi) {
        r.J.resize(m, m);
        r.Jdot.resize(m, m);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) {
                r.J(i, j) = y[off + i * m + j];
                r.Jdot(i, j) = y[off + m * m + i * m + j];
            }
        off += 2 * m * m;
    }
    r.extra.assign(y.begin() + off, y.begin() + off + opt.extra_dim);
    return r;
}

}  // namespace detail

/// Integrates the geodesic (and optional variational / extra systems) from t=0 with
/// outputs at the requested parameter values (sorted by |t|, one sign).
inline RayResult integrate_ray(const SpacetimeModel& s, const Vec& x0, const Vec& u0, const std::vector<double>& times,
                               const RayOptions& opt = {}) {
    namespace odeint = boost::numeric::odeint;
    check_in_chart(s, x0);
    const int m = s.m;
    detail::State y(2 * m + (opt.jacobi ? 2 * m * m : 0) + opt.extra_dim, 0.0);
    for (int i = 0; i < m; ++i) {
        y[i] = x0(i);
        y[m + i] = u0(i);
    }
    if (opt.jacobi)
        for (int i = 0; i < m; ++i) y[2 * m + m * m + i * m + i] = 1.0;
    for (int i = 0; i < opt.extra_dim; ++i) y[2 * m + (opt.jacobi ? 2 * m * m : 0) + i] = opt.extra0.at(i);

    RayResult res;
    res.out.reserve(times.size());
    if (times.empty()) return res;
    const double t_final = times.back();
    const double dir = t_final >= 0.0 ? 1.0 : -1.0;
    detail::GeodesicRhs rhs{&s, &opt};

    std::size_t next = 0;
    while (next < times.size() && times[next] == 0.0) res.out.push_back(detail::unpack(y, 0.0, m, opt)), ++next;
    if (next == times.size()) return res;

    auto stepper = odeint::make_dense_output(opt.tol, opt.tol, odeint::runge_kutta_dopri5<detail::State>());
    double dt0 = dir * std::min(0.05, std::abs(t_final) / 8.0);
    stepper.initialize(y, 0.0, dt0);
    detail::State tmp(y.size());
    res.steps.push_back({0.0, x0, u0});
    try {
        while (next < times.size()) {
            auto [ta, tb] = stepper.do_step(rhs);
            (void)ta;
            ++res.n_steps;
            if (res.n_steps > 200000) fail(ErrorCode::StepFailure, "geodesic step budget exhausted");
            const detail::State& cur = stepper.current_state();
            Vec xc = Eigen::Map<const Eigen::VectorXd>(cur.data(), m);
            Vec uc = Eigen::Map<const Eigen::VectorXd>(cur.data() + m, m);
            res.steps.push_back({tb, xc, uc});
            while (next < times.size() && dir * times[next] <= dir * tb) {
                stepper.calc_state(times[next], tmp);
                res.out.push_back(detail::unpack(tmp, times[next], m, opt));
                ++next;
            }
            if (!s.chart.contains(xc)) {
                res.chart_exit = true;
                break;
            }
            if (std::abs(stepper.current_time_step()) < 1e-14 * std::max(1.0, std::abs(tb)))
                fail(ErrorCode::StepFailure, "step size underflow");
        }
    } catch (const odeint::step_adjustment_error& e) {
        fail(ErrorCode::StepFailure, e.what());
    }
    return res;
}

inline GeodesicSample GeodesicPath::at(double t, const SpacetimeModel& s) const {
    if (samples.empty()) fail(ErrorCode::StepFailure, "empty path");
    if (samples.size() == 1) return samples.front();
    const bool fwd = samples.back().t >= samples.front().t;
    std::size_t i = 0;
    while (i + 2 < samples.size() && (fwd ? samples[i + 1].t < t : samples[i + 1].t > t)) ++i;
    const GeodesicSample& a = samples[i];
    const GeodesicSample& b = samples[i + 1];
    const double h = b.t - a.t;
    const double tau = (t - a.t) / h;
    auto acc = [&](const GeodesicSample& q) {
        Christoffel G = christoffels(s, q.x, false);
        Vec r = Vec::Zero(s.m);
        for (int l = 0; l < s.m; ++l)
            for (int p = 0; p < s.m; ++p)
                for (int k = 0; k < s.m; ++k) r(l) -= G(l, p, k) * q.u(p) * q.u(k);
        return r;
    };
    const double h00 = 2 * tau * tau * tau - 3 * tau * tau + 1, h10 = tau * tau * tau - 2 * tau * tau + tau;
    const double h01 = -2 * tau * tau * tau + 3 * tau * tau, h11 = tau * tau * tau - tau * tau;
    Vec aa = acc(a), ab = acc(b);
    GeodesicSample r;
    r.t = t;
    r.x = h00 * a.x + h10 * h * a.u + h01 * b.x + h11 * h * b.u;
    r.u = h00 * a.u + h10 * h * aa + h01 * b.u + h11 * h * ab;
    return r;
}

/// Adaptive Dormand–Prince integration of ẍ^l = -Γ^l_{ab} ẋ^a ẋ^b over [t0, t1].
inline GeodesicPath integrate_geodesic(const SpacetimeModel& s, const Vec& x0, const Vec& u0, double t0, double t1,
                                       double tol = 1e-10, int n_out = 0) {
    if (!(tol > 0.0)) fail(ErrorCode::StepFailure, "tolerance must be positive");
    std::vector<double> times;
    const int n = std::max(n_out, 1);
    for (int i = 1; i <= n; ++i) times.push_back((t1 - t0) * i / n);
    RayOptions opt;
    opt.tol = tol;
    RayResult r = integrate_ray(s, x0, u0, times, opt);
    GeodesicPath path;
    path.steps = r.n_steps;
    path.chart_exit = r.chart_exit;
    // merge step endpoints and requested outputs, ordered by parameter
    std::vector<GeodesicSample> all = r.steps;
    for (const auto& o : r.out) all.push_back({o.t, o.x, o.u});
    std::sort(all.begin(), all.end(), [&](const auto& a, const auto& b) {
        return (t1 >= t0) ? a.t < b.t : a.t > b.t;
    });
    for (auto& smp : all) {
        if (!path.samples.empty() && std::abs(path.samples.back().t - (smp.t + t0)) < 1e-15) continue;
        if (r.chart_exit && !s.chart.contains(smp.x)) break;
        if ((t1 >= t0) ? smp.t > t1 - t0 : smp.t < t1 - t0) break;
        smp.t += t0;
        path.samples.push_back(smp);
    }
    path.t_end = path.samples.back().t;
    return path;
}

// ---------------------------------------------------------------------------
// Normal coordinates, world function, transport factor
// ---------------------------------------------------------------------------

/// ξ_p(x) = exp_p(Σ x_i e_i) with the Gram–Schmidt frame E at p.
inline Vec normal_coordinates(const SpacetimeModel& s, const Vec& p, const Vec& x_nc, const Mat& E, double tol = 1e-11) {
    if (x_nc.norm() == 0.0) return p;
    RayOptions opt;
    opt.tol = tol;
    RayResult r = integrate_ray(s, p, E * x_nc, {1.0}, opt);
    if (r.chart_exit || r.out.empty()) fail(ErrorCode::OutOfChart, "normal-coordinate geodesic leaves chart");
    return r.out.back().x;
}

inline Vec normal_coordinates(const SpacetimeModel& s, const Vec& p, const Vec& x_nc) {
    return normal_coordinates(s, p, x_nc, orthonormal_frame(s, p));
}

struct ShootResult {
    Vec v;          // initial coordinate velocity at p reaching q at t=1
    Vec u_end;      // velocity at q
    Mat J;          // ∂x(1)/∂v
    int iterations = 0;
    double residual = 0.0;
};

/// Damped Newton on the initial velocity; flat chord initial guess unless one is supplied.
inline ShootResult shoot(const SpacetimeModel& s, const Vec& p, const Vec& q, const Vec* guess = nullptr,
                         double res_tol = 1e-10, int max_iter = 50, double ode_tol = 1e-12) {
    check_in_chart(s, p);
    check_in_chart(s, q);
    ShootResult sr;
    sr.v = guess ? *guess : Vec(q - p);
    if ((q - p).norm() == 0.0) {
        sr.v = Vec::Zero(s.m);
        sr.u_end = sr.v;
        sr.J = Mat::Identity(s.m, s.m);
        return sr;
    }
    RayOptions opt;
    opt.jacobi = true;
    opt.tol = ode_tol;
    auto eval = [&](const Vec& v, RayState& st) -> bool {
        RayResult r = integrate_ray(s, p, v, {1.0}, opt);
        if (r.chart_exit || r.out.empty()) return false;
        st = r.out.back();
        return true;
    };
    RayState st;
    if (!eval(sr.v, st)) fail(ErrorCode::NoConvergence, "initial chord leaves chart");
    double res = (st.x - q).norm();
    for (int it = 0; it < max_iter; ++it) {
        sr.iterations = it;
        if (res <= res_tol) break;
        Eigen::JacobiSVD<Mat> svd(st.J);
        const auto& sv = svd.singularValues();
        if (sv(sv.size() - 1) < 1e-10 * sv(0)) fail(ErrorCode::ConjugatePointSuspected, "near-singular shooting Jacobian");
        Vec dv = st.J.partialPivLu().solve(Vec(q - st.x));
        double lam = 1.0;
        bool ok = false;
        for (int k = 0; k < 30; ++k) {
            RayState trial;
            Vec vt = sr.v + lam * dv;
            if (eval(vt, trial)) {
                double rt = (trial.x - q).norm();
                if (rt < res) {
                    sr.v = vt;
                    st = trial;
                    res = rt;
                    ok = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if (!ok) break;
    }
    sr.residual = res;
    if (res > res_tol) fail(ErrorCode::NoConvergence, "shooting residual " + std::to_string(res));
    sr.u_end = st.u;
    sr.J = st.J;
    return sr;
}

/// ξ_p^{-1}(q) in the frame E.
inline Vec inverse_normal_coordinates(const SpacetimeModel& s, const Vec& p, const Vec& q, const Mat& E,
                                      const Vec* guess_nc = nullptr) {
    Vec g;
    if (guess_nc) g = E * (*guess_nc);
    ShootResult sr = shoot(s, p, q, guess_nc ? &g : nullptr);
    return E.partialPivLu().solve(sr.v);
}

struct WorldFunctionResult {
    double s = 0.0;
    Vec grad_x, grad_y;
    double M = std::nan("");
    GeodesicPath connecting_geodesic;
    bool converged = false;
    double residual = 0.0;
};

/// s(p,q) = -g_p(v,v) with exp_p(v) = q; s > 0 for spacelike separation.
inline WorldFunctionResult world_function(const SpacetimeModel& s, const Vec& p, const Vec& q,
                                          bool with_path = false) {
    WorldFunctionResult w;
    ShootResult sr = shoot(s, p, q);
    Mat gp = s.metric(p), gq = s.metric(q);
    w.s = -sr.v.dot(gp * sr.v);
    w.grad_x = 2.0 * gp * sr.v;
    w.grad_y = -2.0 * gq * sr.u_end;
    w.converged = true;
    w.residual = sr.residual;
    if (with_path) w.connecting_geodesic = integrate_geodesic(s, p, sr.v, 0.0, 1.0, 1e-11, 16);
    return w;
}

/// M(x,y) = -½ □_x s(x,y) - m with x = p; zero in flat space by construction.
inline double m_factor(const SpacetimeModel& s, const Vec& p, const Vec& q, double h = -1.0) {
    const int m = s.m;
    if (h <= 0.0) h = s.fd_step();
    if (!s.chart.contains(p, 2.0 * h)) fail(ErrorCode::StencilOutOfChart, "m_factor stencil leaves chart");
    Mat H = Mat::Zero(m, m);  // H(mu, nu) = ∂_mu (∂_nu s)
    for (int mu = 0; mu < m; ++mu) {
        Vec e = Vec::Zero(m);
        e(mu) = h;
        Vec g1 = world_function(s, p + e, q).grad_x, g_1 = world_function(s, p - e, q).grad_x;
        Vec g2 = world_function(s, p + 2 * e, q).grad_x, g_2 = world_function(s, p - 2 * e, q).grad_x;
        H.row(mu) = ((8.0 * (g1 - g_1) - (g2 - g_2)) / (12.0 * h)).transpose();
    }
    H = 0.5 * (H + H.transpose()).eval();
    Vec gs = world_function(s, p, q).grad_x;
    Mat ginv = s.metric(p).inverse();
    Christoffel G = christoffels(s, p);
    double box = 0.0;
    for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) {
            double v = H(a, b);
            for (int l = 0; l < m; ++l) v -= G(l, a, b) * gs(l);
            box += ginv(a, b) * v;
        }
    return -0.5 * box - m;
}

// ---------------------------------------------------------------------------
// Null covectors and bicharacteristics
// ---------------------------------------------------------------------------

enum class NullClass { FutureNull, PastNull, NonNull };

inline const char* to_string(NullClass c) {
    switch (c) {
        case NullClass::FutureNull: return "FutureNull";
        case NullClass::PastNull: return "PastNull";
        default: return "NonNull";
    }
}

inline NullClass null_classify(const SpacetimeModel& s, const Vec& q, const Vec& xi, double tol = 1e-8) {
    if (xi.norm() == 0.0) fail(ErrorCode::ZeroCovector, "zero covector");
    Mat ginv = s.metric(q).inverse();
    Mat E = orthonormal_frame(s, q);
    Vec frame_comp = E.transpose() * xi;  // ξ(e_a)
    double aux = frame_comp.squaredNorm();
    double n = xi.dot(ginv * xi);
    if (std::abs(n) > tol * aux) return NullClass::NonNull;
    Vec up = ginv * xi;
    return up(s.time_axis) > 0.0 ? NullClass::FutureNull : NullClass::PastNull;
}

struct CotangentPoint {
    Vec q, xi;
};

/// Bicharacteristic through (q, ξ): null geodesic with velocity g^{-1}ξ and co-parallel ξ.
inline std::vector<CotangentPoint> propagate_null(const SpacetimeModel& s, const Vec& q, const Vec& xi, double t0,
                                                  double t1, int n_out = 32, double tol = 1e-11) {
    if (null_classify(s, q, xi) == NullClass::NonNull) fail(ErrorCode::NonNullInput, "covector is not null");
    Vec v = s.metric(q).inverse() * xi;
    std::vector<CotangentPoint> pts;
    auto run = [&](double tend, bool include_start) {
        std::vector<double> times;
        for (int i = include_start ? 0 : 1; i <= n_out; ++i) times.push_back(tend * i / n_out);
        RayOptions opt;
        opt.tol = tol;
        RayResult r = integrate_ray(s, q, v, times, opt);
        std::vector<CotangentPoint> out;
        for (const auto& st : r.out) {
            if (!s.chart.contains(st.x)) break;
            out.push_back({st.x, s.metric(st.x) * st.u});
        }
        return out;
    };
    if (t0 < 0.0) {
        auto back = run(t0, false);
        std::reverse(back.begin(), back.end());
        pts.insert(pts.end(), back.begin(), back.end());
    }
    auto fwd = run(t1, true);
    pts.insert(pts.end(), fwd.begin(), fwd.end());
    return pts;
}

/// Checks (q,ξ) ∼ (q',ξ'): a bicharacteristic from (q,ξ) passes through q' with covector ξ'.
inline bool related(const SpacetimeModel& s, const CotangentPoint& a, const CotangentPoint& b, double tol = 1e-6) {
    if (null_classify(s, a.q, a.xi) == NullClass::NonNull || null_classify(s, b.q, b.xi) == NullClass::NonNull)
        return false;
    if ((a.q - b.q).norm() < tol) return (a.xi - b.xi).norm() < tol * std::max(1.0, a.xi.norm());
    ShootResult sr;
    try {
        sr = shoot(s, a.q, b.q);
    } catch (const Error&) {
        return false;
    }
    Vec va = s.metric(a.q).inverse() * a.xi;
    // the connecting geodesic must be a positive or negative rescaling of the bicharacteristic
    double lam = sr.v.dot(va) / va.squaredNorm();
    if ((sr.v - lam * va).norm() > tol * std::max(1.0, sr.v.norm())) return false;
    Vec xib = s.metric(b.q) * sr.u_end / lam;
    return (xib - b.xi).norm() < tol * std::max(1.0, b.xi.norm()) * 10.0;
}

}  // namespace hadamard::geometry
