#pragma once

#include "hadamard/config.hpp"
#include "hadamard/suites.hpp"

#include <tbb/parallel_for.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <optional>

namespace hadamard::pipeline {

using json = nlohmann::ordered_json;
using config::Config;

// ---------------------------------------------------------------------------
// Exit codes
// ---------------------------------------------------------------------------

enum ExitCode { kExitOk = 0, kExitFail = 1, kExitConfig = 2 };

/// Errors caused by the configuration or by invalid user input; everything else is a numerical failure.
inline bool is_input_error(ErrorCode c) {
    switch (c) {
        case ErrorCode::ConfigError:
        case ErrorCode::NonNullSeed:
        case ErrorCode::NonNullInput:
        case ErrorCode::ZeroCovector:
        case ErrorCode::UnsupportedDimension:
        case ErrorCode::BadParity:
        case ErrorCode::OutOfChart:
        case ErrorCode::SignatureError:
        case ErrorCode::EmptyPrediction: return true;
        default: return false;
    }
}

inline int exit_code_for(ErrorCode c) { return is_input_error(c) ? kExitConfig : kExitFail; }

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct SpacetimeBlock {
    std::string name;
    int m = 3;
    geometry::ChartBox chart;
    int time_axis = 0;
    double c = 0.0;              // conformal
    double amp = 0.0, width = 0.0;  // ultrastatic-bump
    Vec bump_center;
};

struct BundleBlock {
    std::string kind;  // scalar | dirac
    double mass = 0.0;
};

struct SeriesBlock {
    int n = 0, K = 0;
    std::string time_function;  // coordinate | tilted
    double tilt = 0.0;
};

struct CoeffsBlock {
    int n_cheb = 7;
    double box_half = 0.3;
};

struct KernelBlock {
    int n = 64;
    double h = 0.05, eps = 0.075;
};

struct WavefrontBlock {
    double tol_deg = 10.0, threshold = 0.9;
};

struct PredictBlock {
    int seeds = 64, n_out = 2;
    double t1 = 0.5;
    std::optional<Vec> seed_covector;
};

struct ScalingBlock {
    std::vector<double> lambda;
    Vec f_center, fp_center;
    double f_width = 0.0, fp_width = 0.0;
    std::vector<double> f_vector, fp_vector;
    int n_outer = 4;
    std::string part;  // dirac: full | derivative | mass
};

struct VerifyBlock {
    std::vector<std::string> suites;
    int commutator_pairs = 5;
    int closure_steps = 8;
};

struct RunConfig {
    SpacetimeBlock spacetime;
    BundleBlock bundle;
    SeriesBlock series;
    Vec base_point;
    std::optional<CoeffsBlock> coeffs;
    std::optional<KernelBlock> kernel;
    std::optional<WavefrontBlock> wavefront;
    std::optional<PredictBlock> predict_r;
    std::optional<ScalingBlock> scaling;
    std::optional<VerifyBlock> verify;
    std::string output_dir;
    std::uint64_t seed = 0;
    Config source;

    template <class T>
    const T& require(const std::optional<T>& b, const std::string& name) const {
        if (!b) fail(ErrorCode::ConfigError, "missing section [" + name + "] in " + source.source());
        return *b;
    }
};

inline Vec to_vec(const std::vector<double>& v) {
    Vec x(static_cast<int>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) x(static_cast<int>(i)) = v[i];
    return x;
}

inline RunConfig parse_run_config(const Config& c) {
    RunConfig r;
    r.source = c;
    auto& st = r.spacetime;
    st.name = c.get_choice("spacetime.name", {"minkowski", "conformal", "ultrastatic-bump"});
    st.m = static_cast<int>(c.get_int("spacetime.m", 3, 4));
    const std::size_t m = static_cast<std::size_t>(st.m);
    st.chart.lo = to_vec(c.get_doubles("spacetime.chart_lo", m, m));
    st.chart.hi = to_vec(c.get_doubles("spacetime.chart_hi", m, m));
    for (int a = 0; a < st.m; ++a)
        if (!(st.chart.lo(a) < 0.0 && st.chart.hi(a) > 0.0))
            fail(ErrorCode::ConfigError, "spacetime.chart_lo/chart_hi must bracket the origin on every axis");
    st.time_axis = static_cast<int>(c.get_int("spacetime.time_axis", 0, st.m - 1));
    if (st.name == "conformal") st.c = c.get_double("spacetime.c", -10.0, 10.0);
    if (st.name == "ultrastatic-bump") {
        st.amp = c.get_double("spacetime.amp", -0.9, 10.0);
        st.width = c.get_double("spacetime.width", 1e-3, 1e3);
        st.bump_center = to_vec(c.get_doubles("spacetime.bump_center", m, m));
    }

    r.bundle.kind = c.get_choice("bundle.kind", {"scalar", "dirac"});
    r.bundle.mass = c.get_double("bundle.mass", 0.0, 100.0);

    r.series.n = static_cast<int>(c.get_int("series.n", 0, 4));
    r.series.K = static_cast<int>(c.get_int("series.K", 0, 6));
    r.series.time_function = c.get_choice("series.time_function", {"coordinate", "tilted"});
    if (r.series.time_function == "tilted") r.series.tilt = c.get_double("series.tilt", -0.5, 0.5);

    r.base_point = to_vec(c.get_doubles("probe.base_point", m, m));

    if (c.has_section("coeffs")) {
        CoeffsBlock b;
        b.n_cheb = static_cast<int>(c.get_int("coeffs.n_cheb", 3, 21));
        if (b.n_cheb % 2 == 0) fail(ErrorCode::ConfigError, "coeffs.n_cheb must be odd (the base point is a node)");
        b.box_half = c.get_double("coeffs.box_half", 1e-3, 10.0);
        r.coeffs = b;
    }
    if (c.has_section("kernel")) {
        KernelBlock b;
        b.n = static_cast<int>(c.get_int("kernel.n", 16, 128));
        b.h = c.get_double("kernel.h", 1e-4, 1.0);
        b.eps = c.get_double("kernel.eps", 1e-6, 1.0);
        r.kernel = b;
    }
    if (c.has_section("wavefront")) {
        WavefrontBlock b;
        b.tol_deg = c.get_double("wavefront.tol_deg", 0.1, 45.0);
        b.threshold = c.get_double("wavefront.threshold", 0.0, 1.0);
        r.wavefront = b;
    }
    if (c.has_section("predict_r")) {
        PredictBlock b;
        b.seeds = static_cast<int>(c.get_int("predict_r.seeds", 1, 4096));
        b.t1 = c.get_double("predict_r.t1", 0.0, 100.0);
        b.n_out = static_cast<int>(c.get_int("predict_r.n_out", 1, 256));
        if (c.has("predict_r.seed_covector")) b.seed_covector = to_vec(c.get_doubles("predict_r.seed_covector", m, m));
        r.predict_r = b;
    }
    if (c.has_section("scaling")) {
        ScalingBlock b;
        b.lambda = c.get_doubles("scaling.lambda", 1, 64, 0.0, 1.0);
        b.f_center = to_vec(c.get_doubles("scaling.f_center", m, m));
        b.fp_center = to_vec(c.get_doubles("scaling.fp_center", m, m));
        b.f_width = c.get_double("scaling.f_width", 1e-3, 10.0);
        b.fp_width = c.get_double("scaling.fp_width", 1e-3, 10.0);
        const std::size_t rk = r.bundle.kind == "dirac" ? (st.m == 3 ? 2 : 4) : 1;
        b.f_vector = c.get_doubles("scaling.f_vector", rk, rk);
        b.fp_vector = c.get_doubles("scaling.fp_vector", rk, rk);
        b.n_outer = static_cast<int>(c.get_int("scaling.n_outer", 2, 8));
        if (r.bundle.kind == "dirac") b.part = c.get_choice("scaling.part", {"full", "derivative", "mass"});
        r.scaling = b;
    }
    if (c.has_section("verify")) {
        VerifyBlock b;
        b.suites = c.get_strings("verify.suites");
        if (b.suites.empty()) fail(ErrorCode::ConfigError, "verify.suites is empty");
        for (const auto& s : b.suites)
            if (s != "cone" && s != "closure" && s != "commutator" && s != "scaling")
                fail(ErrorCode::ConfigError, "verify.suites: unknown suite '" + s + "'");
        // suite parameters are required when the suite is enabled and still validated when it is not
        auto enabled = [&](const char* n) { return std::find(b.suites.begin(), b.suites.end(), n) != b.suites.end(); };
        if (enabled("commutator") || c.has("verify.commutator_pairs"))
            b.commutator_pairs = static_cast<int>(c.get_int("verify.commutator_pairs", 1, 100));
        if (enabled("closure") || c.has("verify.closure_steps"))
            b.closure_steps = static_cast<int>(c.get_int("verify.closure_steps", 2, 64));
        r.verify = b;
    }
    r.output_dir = c.get_string("output.dir");
    r.seed = c.get_u64("run.seed");
    c.require_all_used();
    return r;
}

inline RunConfig load_run_config(const std::string& path) { return parse_run_config(Config::load(path)); }

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

inline geometry::SpacetimeModel make_spacetime(const SpacetimeBlock& b) {
    if (b.name == "minkowski") return geometry::make_minkowski(b.m, b.chart, b.time_axis);
    if (b.name == "conformal") return geometry::make_conformal(b.m, b.chart, b.c, b.time_axis);
    return geometry::make_ultrastatic_bump(b.m, b.chart, b.amp, b.width, b.bump_center, b.time_axis);
}

inline bool is_flat(const RunConfig& rc) { return rc.spacetime.name == "minkowski"; }
inline bool is_dirac(const RunConfig& rc) { return rc.bundle.kind == "dirac"; }

inline void require_coordinate_time_axis0(const RunConfig& rc, const std::string& what) {
    if (rc.spacetime.time_axis != 0)
        fail(ErrorCode::ConfigError, "spacetime.time_axis: " + what + " supports time axis 0 only");
}

/// P = □_g + 𝗆² for scalars, the squared Dirac operator otherwise.
inline bundle::WaveOperator make_operator(const RunConfig& rc, const geometry::SpacetimeModel& s) {
    if (is_dirac(rc)) return bundle::dirac_wave_operator(bundle::make_dirac(s, rc.bundle.mass));
    return bundle::covariant_scalar_operator(s, rc.bundle.mass * rc.bundle.mass);
}

inline std::function<double(const Vec&)> time_function(const RunConfig& rc) {
    const int ta = rc.spacetime.time_axis;
    if (rc.series.time_function == "coordinate") return [ta](const Vec& x) { return x(ta); };
    const double k = rc.series.tilt;
    const int sa = ta == 0 ? 1 : 0;
    return [ta, sa, k](const Vec& x) { return x(ta) + k * std::tanh(x(sa)); };
}

inline int fibre_rank(const RunConfig& rc) { return is_dirac(rc) ? (rc.spacetime.m == 3 ? 2 : 4) : 1; }

/// Constant coefficients of the flat operator (□ + 𝗆²)·1 in the fibre.
inline std::vector<CMat> flat_coefficients(const RunConfig& rc, int K) {
    const int r = fibre_rank(rc);
    std::vector<CMat> out;
    for (const CMat& u : flat_massive_coefficients(rc.bundle.mass, K)) out.push_back(u(0, 0) * CMat::Identity(r, r));
    return out;
}

inline int required_order(const RunConfig& rc) {
    const int m = rc.spacetime.m, n = rc.series.n;
    if (m % 2) return series_order(SeriesTerm::T, m, n);
    return std::max(series_order(SeriesTerm::U, m, n), series_order(SeriesTerm::V, m, n));
}

inline void require_series_order(const RunConfig& rc) {
    const int need = required_order(rc);
    if (rc.series.K < need)
        fail(ErrorCode::ConfigError, "series.K = " + std::to_string(rc.series.K) + " is below the order " +
                                         std::to_string(need) + " needed by series.n = " + std::to_string(rc.series.n));
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

inline std::string timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

inline json vec_json(const Vec& v) {
    json a = json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline json mat_json(const Mat& M) {
    json a = json::array();
    for (int i = 0; i < M.rows(); ++i) a.push_back(vec_json(M.row(i).transpose()));
    return a;
}

inline json cmat_json(const CMat& M) {
    json re = json::array(), im = json::array();
    for (int i = 0; i < M.rows(); ++i) {
        json rr = json::array(), ii = json::array();
        for (int j = 0; j < M.cols(); ++j) {
            rr.push_back(M(i, j).real());
            ii.push_back(M(i, j).imag());
        }
        re.push_back(rr);
        im.push_back(ii);
    }
    return {{"re", re}, {"im", im}};
}

struct Artifacts {
    std::filesystem::path dir;
    std::vector<std::string> written;

    explicit Artifacts(const std::string& d) : dir(d) {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec) fail(ErrorCode::ConfigError, "output.dir: cannot create '" + d + "': " + ec.message());
    }
    std::string path(const std::string& name) const { return (dir / name).string(); }
    void text(const std::string& name, const std::string& content) {
        std::ofstream f(path(name), std::ios::binary);
        if (!f) fail(ErrorCode::ConfigError, "output.dir: cannot write '" + path(name) + "'");
        f << content;
        written.push_back(name);
    }
    void json_file(const std::string& name, const json& j) { text(name, j.dump(2) + "\n"); }
};

/// Common header of every JSON artifact; "generated_at" is the only field that differs between reruns.
inline json header(const RunConfig& rc, const std::string& command) {
    return {{"command", command},
            {"generated_at", timestamp()},
            {"config", rc.source.source()},
            {"seed", rc.seed},
            {"spacetime", rc.spacetime.name},
            {"m", rc.spacetime.m},
            {"bundle", rc.bundle.kind},
            {"mass", rc.bundle.mass}};
}

struct CommandResult {
    int exit_code = kExitOk;
    json report;
};

// ---------------------------------------------------------------------------
// coeffs
// ---------------------------------------------------------------------------

inline CoefficientTable coefficient_table(const RunConfig& rc, const geometry::SpacetimeModel& s, int K, int n_cheb,
                                          double box_half) {
    TransportOptions o;
    o.K = K;
    o.n_cheb = n_cheb;
    o.box_half = box_half;
    return transport_coefficients(make_operator(rc, s), rc.base_point, o);
}

inline CommandResult cmd_coeffs(const RunConfig& rc) {
    const auto& b = rc.require(rc.coeffs, "coeffs");
    auto s = make_spacetime(rc.spacetime);
    CoefficientTable T = coefficient_table(rc, s, rc.series.K, b.n_cheb, b.box_half);
    const int r = T.r;
    json j = header(rc, "coeffs");
    j["base_point"] = vec_json(T.y);
    j["frame"] = mat_json(T.E);
    j["K"] = T.K;
    j["rank"] = r;
    json grid = {{"n_cheb", T.grid.n}, {"box_half", T.grid.R}, {"nodes_1d", T.grid.t},
                 {"layout", "node index k = sum_a i_a n^(m-1-a), last axis fastest; entry (i,j) of U_k at node"}};
    j["grid"] = grid;
    json U = json::array(), summary = json::object();
    json maxk = json::array();
    double u0dev = 0.0;
    for (int k = 0; k <= T.K; ++k) {
        json re = json::array(), im = json::array();
        double mx = 0.0;
        for (std::size_t q = 0; q < T.grid.size(); ++q) {
            CMat M = T.U[k].get(q);
            for (int a = 0; a < r; ++a)
                for (int c = 0; c < r; ++c) {
                    re.push_back(M(a, c).real());
                    im.push_back(M(a, c).imag());
                }
            if (k == 0) u0dev = std::max(u0dev, (M - CMat::Identity(r, r)).cwiseAbs().maxCoeff());
            mx = std::max(mx, M.cwiseAbs().maxCoeff());
        }
        U.push_back({{"k", k}, {"re", re}, {"im", im}});
        maxk.push_back(mx);
    }
    summary["max_abs_U0_minus_identity"] = u0dev;
    summary["max_abs_Uk"] = maxk;
    json origin = json::array();
    for (int k = 0; k <= T.K; ++k) origin.push_back(cmat_json(T.U[k].get(T.origin_node())));
    summary["Uk_at_base_point"] = origin;
    summary["n_nodes"] = T.grid.size();
    j["summary"] = summary;
    j["U"] = U;
    Artifacts out(rc.output_dir);
    out.json_file("coeffs.json", j);
    json rep = header(rc, "coeffs");
    rep["summary"] = summary;
    rep["files"] = out.written;
    return {kExitOk, rep};
}

// ---------------------------------------------------------------------------
// kernel
// ---------------------------------------------------------------------------

struct KernelGrid {
    microlocal::SampledDistribution samples;  // channel (a,b) = a·r + b
    Mat frame;                                // directions of z in chart coordinates: x ≈ base + frame·z
    double eps = 0.0;
    int rank = 1;
};

/// W(z) = K_ε(base, y(z)) on a centred cube, z = normal coordinates of y about the base point (the kernel is
/// sampled in its second slot; the table route evaluates K_ε(x(−z), base) which has the same leading singularity).
inline KernelGrid sample_kernel(const RunConfig& rc) {
    const auto& kb = rc.require(rc.kernel, "kernel");
    require_series_order(rc);
    const int m = rc.spacetime.m, r = fibre_rank(rc);
    auto s = make_spacetime(rc.spacetime);
    auto tf = time_function(rc);
    const double L = 0.5 * (kb.n - 1) * kb.h;
    KernelGrid out;
    out.eps = kb.eps;
    out.rank = r;

    SeriesEvaluator ev;
    std::optional<CoefficientTable> table;
    std::function<Vec(const Vec&)> xmap;  // normal coordinates X about base → chart point
    if (is_flat(rc)) {
        ev = constant_series(m, rc.series.n, flat_coefficients(rc, rc.series.K));
        out.frame = geometry::orthonormal_frame(s, rc.base_point);
        Mat E = out.frame;
        Vec b = rc.base_point;
        xmap = [E, b](const Vec& X) { return Vec(b + E * X); };
    } else {
        const auto& cb = rc.require(rc.coeffs, "coeffs");
        table = coefficient_table(rc, s, rc.series.K, cb.n_cheb, L * (1.0 + 1e-9));
        ev = assemble_series(*table, rc.series.n);
        out.frame = table->E;
        const CoefficientTable* t = &*table;
        xmap = [t, m](const Vec& X) {
            auto W = t->grid.weights(X);
            Vec x(m);
            std::vector<double> comp(t->grid.size());
            for (int a = 0; a < m; ++a) {
                for (std::size_t k = 0; k < comp.size(); ++k) comp[k] = t->x[k](a);
                x(a) = t->grid.interp(comp.data(), W);
            }
            return x;
        };
    }

    auto& u = out.samples;
    u.d = m;
    u.origin = Vec::Constant(m, -L);
    u.spacing = Vec::Constant(m, kb.h);
    u.n.assign(m, kb.n);
    u.values.assign(static_cast<std::size_t>(r * r), std::vector<cd>(u.size()));
    const double ty0 = tf(rc.base_point);
    const bool flat = is_flat(rc);
    auto value = [&](const Vec& z) -> CMat {
        const double sv = z.tail(m - 1).squaredNorm() - z(0) * z(0);
        cd arg;
        Vec X = z;
        if (flat) {
            arg = kernel_argument(sv, ty0, tf(xmap(z)), kb.eps);
        } else {
            X = -z;
            arg = kernel_argument(sv, tf(xmap(X)), ty0, kb.eps);
        }
        if (m % 2) return kernel_factor(m, KernelTerm::G1, arg) * ev(SeriesTerm::T, X, sv);
        return kernel_factor(m, KernelTerm::G1, arg) * ev(SeriesTerm::U, X, sv) +
               kernel_factor(m, KernelTerm::G2, arg) * ev(SeriesTerm::V, X, sv);
    };
    tbb::parallel_for(std::size_t(0), u.size(), [&](std::size_t k) {
        CMat W = value(u.point(k));
        for (int a = 0; a < r; ++a)
            for (int b = 0; b < r; ++b) u.values[static_cast<std::size_t>(a * r + b)][k] = W(a, b);
    });
    u.validate();
    return out;
}

inline CommandResult cmd_kernel(const RunConfig& rc) {
    KernelGrid g = sample_kernel(rc);
    const auto& u = g.samples;
    Artifacts out(rc.output_dir);
    {
        std::ofstream f(out.path("kernel.bin"), std::ios::binary);
        if (!f) fail(ErrorCode::ConfigError, "output.dir: cannot write kernel.bin");
        for (const auto& ch : u.values) f.write(reinterpret_cast<const char*>(ch.data()), ch.size() * sizeof(cd));
        out.written.push_back("kernel.bin");
    }
    // plot table: the kernel along the time axis and along the first spatial axis through z = 0
    std::ostringstream csv;
    csv << std::setprecision(17) << "axis,z,re,im\n";
    const int m = u.d, n = u.n[0];
    for (int axis : {0, 1})
        for (int i = 0; i < n; ++i) {
            std::vector<int> idx(m, n / 2);
            idx[axis] = i;
            const std::size_t k = u.index(idx);
            csv << axis << "," << u.point(k)(axis) << "," << u.values[0][k].real() << "," << u.values[0][k].imag()
                << "\n";
        }
    out.text("kernel_axes.csv", csv.str());
    double mx = 0.0;
    for (const auto& ch : u.values)
        for (const cd& v : ch) mx = std::max(mx, std::abs(v));
    json j = header(rc, "kernel");
    j["base_point"] = vec_json(rc.base_point);
    j["frame"] = mat_json(g.frame);
    j["grid"] = {{"n", u.n[0]}, {"spacing", u.spacing(0)}, {"origin", vec_json(u.origin)}};
    j["eps"] = g.eps;
    j["series_n"] = rc.series.n;
    j["time_function"] = rc.series.time_function;
    j["channels"] = u.channels();
    j["binary"] = {{"file", "kernel.bin"},
                   {"layout", "channel-major (a·rank + b), then grid points with the last axis fastest"},
                   {"scalar", "complex128 little-endian (re, im)"}};
    j["summary"] = {{"max_abs", mx}, {"points", u.size()}};
    out.json_file("kernel.json", j);
    json rep = header(rc, "kernel");
    rep["summary"] = j["summary"];
    rep["files"] = out.written;
    return {kExitOk, rep};
}

// ---------------------------------------------------------------------------
// wavefront / predict-r
// ---------------------------------------------------------------------------

inline json estimate_json(const microlocal::WavefrontEstimate& e) {
    json entries = json::array();
    for (const auto& x : e.entries)
        entries.push_back({{"point", vec_json(x.point)},
                           {"dir", vec_json(x.dir)},
                           {"exponent", std::isfinite(x.exponent) ? json(x.exponent) : json("inf")},
                           {"confidence", x.confidence},
                           {"flagged", x.flagged},
                           {"marginal", x.marginal}});
    std::size_t nf = 0;
    for (const auto& x : e.entries) nf += x.flagged;
    return {{"window_scale", e.window_scale},
            {"cell_deg", e.cell * 180.0 / kPi},
            {"n_directions", e.n_directions},
            {"n_flagged", nf},
            {"entries", entries}};
}

inline microlocal::WavefrontEstimate kernel_wavefront(const RunConfig& rc) {
    return microlocal::wf_translation_invariant(sample_kernel(rc).samples);
}

inline CommandResult cmd_wavefront(const RunConfig& rc) {
    auto e = kernel_wavefront(rc);
    json j = header(rc, "wavefront");
    j["estimate"] = estimate_json(e);
    Artifacts out(rc.output_dir);
    out.json_file("wavefront.json", j);
    json rep = header(rc, "wavefront");
    rep["summary"] = {{"n_directions", e.n_directions}, {"n_flagged", j["estimate"]["n_flagged"]}};
    rep["files"] = out.written;
    return {kExitOk, rep};
}

inline microlocal::PredictedSetR predict(const RunConfig& rc) {
    const auto& b = rc.require(rc.predict_r, "predict_r");
    auto s = make_spacetime(rc.spacetime);
    std::vector<geometry::CotangentPoint> seeds;
    if (b.seed_covector) {
        if (b.seed_covector->norm() == 0.0) fail(ErrorCode::ZeroCovector, "predict_r.seed_covector is zero");
        seeds.push_back({rc.base_point, *b.seed_covector});
    } else {
        seeds = microlocal::past_null_seeds(s, rc.base_point, b.seeds);
    }
    return microlocal::predicted_R(s, seeds, 0.0, b.t1, b.n_out);
}

inline CommandResult cmd_predict_r(const RunConfig& rc) {
    auto R = predict(rc);
    json samples = json::array();
    for (const auto& x : R.samples)
        samples.push_back({{"q", vec_json(x.q)}, {"xi", vec_json(x.xi)}, {"qp", vec_json(x.qp)}, {"xip", vec_json(x.xip)}});
    json j = header(rc, "predict-r");
    j["base_point"] = vec_json(rc.base_point);
    j["n_seeds"] = R.seeds.size();
    j["samples"] = samples;
    Artifacts out(rc.output_dir);
    out.json_file("predict_r.json", j);
    json rep = header(rc, "predict-r");
    rep["summary"] = {{"n_seeds", R.seeds.size()}, {"n_samples", R.samples.size()}};
    rep["files"] = out.written;
    return {kExitOk, rep};
}

// ---------------------------------------------------------------------------
// scaling
// ---------------------------------------------------------------------------

struct ScalingRun {
    scaling::ScalingReport report;
    bool pass = false;
    double tolerance = 0.0;
    std::string criterion;
};

inline ScalingRun run_scaling(const RunConfig& rc) {
    const auto& b = rc.require(rc.scaling, "scaling");
    require_coordinate_time_axis0(rc, "scaling");
    if (rc.series.time_function != "coordinate")
        fail(ErrorCode::ConfigError, "series.time_function: scaling pairings use the coordinate time");
    require_series_order(rc);
    const int m = rc.spacetime.m, r = fibre_rank(rc);
    auto s = make_spacetime(rc.spacetime);
    const bool dirac = is_dirac(rc);
    auto cvec = [&](const std::vector<double>& v) {
        CVec x(r);
        for (int i = 0; i < r; ++i) x(i) = v[static_cast<std::size_t>(i)];
        return x;
    };
    auto f = scaling::make_test_section(cvec(b.f_vector), b.f_center, b.f_width);
    auto fp = scaling::make_test_section(cvec(b.fp_vector), b.fp_center, b.fp_width);
    const double alpha = dirac ? scaling::car_exponent(m) : scaling::ccr_exponent(m);
    auto probe = scaling::make_probe(s, rc.base_point, alpha, r, b.lambda);

    std::vector<CMat> gammas;
    CMat theta = CMat::Identity(r, r);
    std::optional<bundle::DiracModel> D;
    if (dirac) {
        D = bundle::make_dirac(s, rc.bundle.mass);
        gammas = D->gammas;
        theta = gammas[0];
    }
    scaling::ReferenceSpec ref{m, theta, gammas, {}, {}};
    scaling::KernelPairing kp;
    scaling::PairingOptions o;
    o.n = rc.series.n;
    o.n_outer = b.n_outer;
    if (is_flat(rc)) {
        kp = dirac ? scaling::flat_kernel_pairing(m, flat_coefficients(rc, rc.series.K), rc.series.n, theta, gammas,
                                                  rc.bundle.mass)
                   : scaling::flat_kernel_pairing(m, flat_coefficients(rc, rc.series.K), rc.series.n, theta);
    } else {
        kp = scaling::curved_kernel_pairing(make_operator(rc, s), probe, o, D);
        // the same engine on Minkowski space, for the quadrature-matched reference
        auto flat = geometry::make_minkowski(m, rc.spacetime.chart);
        scaling::PairingOptions of = o;
        of.n = 0;
        std::optional<bundle::DiracModel> Df;
        bundle::WaveOperator Pf{flat, bundle::trivial_bundle(1, m)};
        if (dirac) {
            Df = bundle::make_dirac(flat, 0.0);
            Pf = bundle::dirac_wave_operator(*Df);
        }
        ref.matched = scaling::curved_kernel_pairing(Pf, scaling::make_probe(flat, rc.base_point, alpha, r), of, Df);
    }
    ScalingRun out;
    if (dirac) {
        const auto part = b.part == "full"         ? scaling::FirstSlot::Dirac
                          : b.part == "derivative" ? scaling::FirstSlot::DiracDerivative
                                                   : scaling::FirstSlot::DiracMass;
        out.report = scaling::dirac_scaling_limit(kp, probe, f, fp, ref, part);
    } else {
        out.report = scaling::scaling_limit_pairing(kp, probe, f, fp, ref);
    }
    const auto& rep = out.report;
    if (rep.matched) {
        out.tolerance = rep.quad_tol;
        out.criterion = "gap to the flat reference at the smallest lambda <= 5 x quadrature tolerance, decreasing";
        out.pass = rep.exact_gap.back() <= 5.0 * rep.quad_tol && rep.gap_decreasing;
    } else {
        out.tolerance = 2.0 * rep.max_error + 1e-12 * std::abs(rep.reference.value);
        // massive fields approach the massless reference like a power of λ; require at least first order
        const double linear = 1.1 * rep.lambda.back() / rep.lambda.front() * rep.gap.front();
        out.criterion = "gap to the flat reference at the smallest lambda <= 5 x extrapolation tolerance or shrinking "
                        "at least linearly in lambda, decreasing";
        out.pass = rep.gap_decreasing && (rep.gap.back() <= 5.0 * out.tolerance || rep.gap.back() <= linear + 5.0 * out.tolerance);
    }
    return out;
}

inline json scaling_run_json(const ScalingRun& s) {
    json j = suites::scaling_json(s.report);
    json eg = json::array();
    for (double g : s.report.exact_gap) eg.push_back(g);
    j["exact_gaps"] = eg;
    j["tolerance"] = s.tolerance;
    j["criterion"] = s.criterion;
    j["pass"] = s.pass;
    return j;
}

inline CommandResult cmd_scaling(const RunConfig& rc) {
    ScalingRun run = run_scaling(rc);
    json j = header(rc, "scaling");
    j["base_point"] = vec_json(rc.base_point);
    j["report"] = scaling_run_json(run);
    Artifacts out(rc.output_dir);
    out.json_file("scaling.json", j);
    std::ostringstream csv;
    csv << std::setprecision(17) << "lambda,re,im,error,reference_re,reference_im\n";
    for (std::size_t i = 0; i < run.report.lambda.size(); ++i)
        csv << run.report.lambda[i] << "," << run.report.values[i].value.real() << ","
            << run.report.values[i].value.imag() << "," << run.report.values[i].error << ","
            << run.report.reference.value.real() << "," << run.report.reference.value.imag() << "\n";
    out.text("scaling.csv", csv.str());
    json rep = header(rc, "scaling");
    rep["summary"] = {{"pass", run.pass}, {"final_gap", run.report.exact_gap.back()}, {"tolerance", run.tolerance}};
    rep["files"] = out.written;
    return {run.pass ? kExitOk : kExitFail, rep};
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

/// Estimated kernel cone against the second-slot covectors of R, expressed in the kernel's z coordinates.
inline suites::SuiteResult cone_suite(const RunConfig& rc) {
    suites::SuiteResult r{"cone"};
    const auto& wb = rc.require(rc.wavefront, "wavefront");
    require_coordinate_time_axis0(rc, "the cone suite");
    KernelGrid g = sample_kernel(rc);
    auto est = microlocal::wf_translation_invariant(g.samples);
    auto R = predict(rc);
    std::vector<microlocal::ConeDirection> pred;
    for (const auto& d : microlocal::difference_cone(R)) pred.push_back({Vec((g.frame.transpose() * d.dir).normalized()), false});
    auto v = microlocal::msc_verdict(microlocal::flagged_cone(est), pred, suites::deg(wb.tol_deg), wb.threshold);
    r.metrics = {{"completeness", v.completeness}, {"soundness", v.soundness},  {"n_predicted", v.n_predicted},
                 {"n_flagged", v.n_estimated},     {"n_marginal", v.n_marginal}, {"tol_deg", wb.tol_deg},
                 {"threshold", wb.threshold}};
    r.pass = v.pass;
    return r;
}

inline CommandResult cmd_verify(const RunConfig& rc) {
    const auto& vb = rc.require(rc.verify, "verify");
    std::vector<suites::SuiteResult> results;
    for (const auto& name : vb.suites) {
        if (name == "cone") {
            results.push_back(cone_suite(rc));
        } else if (name == "closure") {
            results.push_back(suites::closure_suite(make_spacetime(rc.spacetime), vb.closure_steps));
        } else if (name == "commutator") {
            if (!is_flat(rc) || is_dirac(rc) || rc.bundle.mass != 0.0)
                fail(ErrorCode::ConfigError, "verify.suites: commutator needs a flat massless scalar configuration");
            results.push_back(suites::commutator_suite({rc.spacetime.m}, vb.commutator_pairs, rc.seed));
        } else if (name == "scaling") {
            ScalingRun s = run_scaling(rc);
            results.push_back({"scaling", s.pass, scaling_run_json(s)});
        }
    }
    json j = header(rc, "verify");
    json arr = json::array(), failures = json::array();
    bool pass = true;
    for (const auto& s : results) {
        arr.push_back({{"name", s.name}, {"pass", s.pass}, {"metrics", s.metrics}});
        if (!s.pass) failures.push_back(s.name);
        pass = pass && s.pass;
    }
    j["suites"] = arr;
    j["failures"] = failures;
    j["pass"] = pass;
    Artifacts out(rc.output_dir);
    out.json_file("verify.json", j);
    json rep = j;
    rep["files"] = out.written;
    return {pass ? kExitOk : kExitFail, rep};
}

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"coeffs", "kernel", "wavefront", "predict-r", "scaling", "verify"};
    return names;
}

inline CommandResult run_command(const std::string& cmd, const RunConfig& rc) {
    if (cmd == "coeffs") return cmd_coeffs(rc);
    if (cmd == "kernel") return cmd_kernel(rc);
    if (cmd == "wavefront") return cmd_wavefront(rc);
    if (cmd == "predict-r") return cmd_predict_r(rc);
    if (cmd == "scaling") return cmd_scaling(rc);
    if (cmd == "verify") return cmd_verify(rc);
    fail(ErrorCode::ConfigError, "unknown command '" + cmd + "'");
}

}  // namespace hadamard::pipeline
