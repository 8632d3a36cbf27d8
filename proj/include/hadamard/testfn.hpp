#pragma once

#include "hadamard/core.hpp"

#include <map>

namespace hadamard {

// ---------------------------------------------------------------------------
// Polynomial × Gaussian test functions with exact flat derivatives
// ---------------------------------------------------------------------------

using Exponent = std::array<std::uint8_t, kMaxDim>;

/// f(x) = p(x − c) · exp(−½ (x−c)ᵀ A (x−c)), p a real polynomial.
struct PolyGaussian {
    int m = 0;
    Vec c;
    Mat A;
    std::map<Exponent, double> poly;

    static PolyGaussian gaussian(const Vec& center, const Mat& A, double amplitude = 1.0) {
        PolyGaussian g;
        g.m = static_cast<int>(center.size());
        g.c = center;
        g.A = A;
        g.poly[Exponent{}] = amplitude;
        return g;
    }
    static PolyGaussian isotropic(const Vec& center, double width, double amplitude = 1.0) {
        const int m = static_cast<int>(center.size());
        return gaussian(center, Mat::Identity(m, m) / (width * width), amplitude);
    }

    double operator()(const Vec& x) const {
        Vec y = x - c;
        double q = y.dot(A * y);
        double p = 0.0;
        for (const auto& [e, coef] : poly) {
            double t = coef;
            for (int i = 0; i < m; ++i)
                for (int k = 0; k < e[i]; ++k) t *= y(i);
            p += t;
        }
        return p * std::exp(-0.5 * q);
    }

    /// ∂_i f, again of polynomial × Gaussian form.
    PolyGaussian d(int i) const {
        PolyGaussian out = *this;
        out.poly.clear();
        for (const auto& [e, coef] : poly) {
            if (e[i] > 0) {
                Exponent f = e;
                f[i] -= 1;
                out.poly[f] += coef * e[i];
            }
            for (int j = 0; j < m; ++j) {
                if (A(i, j) == 0.0) continue;
                Exponent f = e;
                f[j] += 1;
                out.poly[f] -= coef * A(i, j);
            }
        }
        std::erase_if(out.poly, [](const auto& kv) { return kv.second == 0.0; });
        return out;
    }

    /// Flat wave operator ∂_0² − Σ_k ∂_k² (time coordinate at index 0).
    PolyGaussian box() const {
        PolyGaussian out = d(0).d(0);
        for (int k = 1; k < m; ++k) {
            PolyGaussian t = d(k).d(k);
            for (const auto& [e, coef] : t.poly) out.poly[e] -= coef;
        }
        std::erase_if(out.poly, [](const auto& kv) { return kv.second == 0.0; });
        return out;
    }

    PolyGaussian box_power(int j) const {
        PolyGaussian out = *this;
        for (int i = 0; i < j; ++i) out = out.box();
        return out;
    }

    /// x ↦ f(−x).
    PolyGaussian reflected() const {
        PolyGaussian out = *this;
        out.c = -c;
        out.poly.clear();
        for (const auto& [e, coef] : poly) {
            int deg = 0;
            for (int i = 0; i < m; ++i) deg += e[i];
            out.poly[e] = (deg % 2 ? -coef : coef);
        }
        return out;
    }

    int degree() const {
        int d = 0;
        for (const auto& [e, coef] : poly) {
            int k = 0;
            for (int i = 0; i < m; ++i) k += e[i];
            d = std::max(d, k);
        }
        return d;
    }

    /// Radius beyond which the Gaussian factor is below exp(−reach²/2) in every direction;
    /// the default reach widens with the polynomial degree.
    double extent(double reach = -1.0) const {
        if (reach <= 0.0) reach = 7.0 + 0.4 * degree();
        Eigen::SelfAdjointEigenSolver<Mat> es(A);
        return reach / std::sqrt(es.eigenvalues().minCoeff());
    }
};

/// F(z) = ∫ f(x) f′(x+z) dx for two Gaussians (constant polynomials).
inline PolyGaussian cross_correlation(const PolyGaussian& f, const PolyGaussian& fp) {
    if (f.poly.size() != 1 || fp.poly.size() != 1 || !f.poly.count(Exponent{}) || !fp.poly.count(Exponent{}))
        fail(ErrorCode::ConfigError, "cross_correlation expects plain Gaussians");
    const int m = f.m;
    Mat C = (f.A.inverse() + fp.A.inverse()).inverse();
    double amp = f.poly.at(Exponent{}) * fp.poly.at(Exponent{}) * std::pow(2.0 * kPi, 0.5 * m) /
                 std::sqrt((f.A + fp.A).determinant());
    return PolyGaussian::gaussian(fp.c - f.c, C, amp);
}

// ---------------------------------------------------------------------------
// Quadrature adapted to the flat null cone |z⃗| = |z₀|
// ---------------------------------------------------------------------------

/// Gauss–Legendre nodes on [a,b] clustered toward `toward` (a or b) at resolution `scale`.
inline Rule clustered_interval(double a, double b, double toward, double scale, int n) {
    Rule out;
    if (b <= a) return out;
    Rule r = sinh_clustered(n, b - a, scale);
    out.x.resize(r.size());
    out.w = r.w;
    const bool at_a = std::abs(toward - a) <= std::abs(toward - b);
    for (std::size_t i = 0; i < r.size(); ++i) out.x[i] = at_a ? a + r.x[i] : b - r.x[i];
    return out;
}

/// Unit vectors and weights on S^{d-1} (d = 1: the two points ±1).
struct SphereRule {
    std::vector<Vec> dir;
    std::vector<double> w;
};

inline SphereRule sphere_rule(int d, int n_azimuth, int n_polar) {
    SphereRule s;
    if (d == 1) {
        for (double v : {1.0, -1.0}) {
            Vec e(1);
            e << v;
            s.dir.push_back(e);
            s.w.push_back(1.0);
        }
        return s;
    }
    if (d == 2) {
        for (int i = 0; i < n_azimuth; ++i) {
            double t = 2.0 * kPi * i / n_azimuth;
            Vec e(2);
            e << std::cos(t), std::sin(t);
            s.dir.push_back(e);
            s.w.push_back(2.0 * kPi / n_azimuth);
        }
        return s;
    }
    if (d == 3) {
        Rule gl = gauss_legendre(n_polar, -1.0, 1.0);
        for (std::size_t j = 0; j < gl.size(); ++j) {
            double ct = gl.x[j], st = std::sqrt(1.0 - ct * ct);
            for (int i = 0; i < n_azimuth; ++i) {
                double p = 2.0 * kPi * (i + 0.5 * (j % 2)) / n_azimuth;
                Vec e(3);
                e << ct, st * std::cos(p), st * std::sin(p);
                s.dir.push_back(e);
                s.w.push_back(gl.w[j] * 2.0 * kPi / n_azimuth);
            }
        }
        return s;
    }
    fail(ErrorCode::UnsupportedDimension, "sphere rules implemented for spatial dimension ≤ 3");
}

struct ConeRule {
    int n_tau = 48;      // per τ sub-interval
    int n_rho = 32;      // per ρ sub-interval
    int n_azimuth = 24;
    int n_polar = 16;
};

/// Visits nodes (τ, ρ) of a product rule over τ∈[t_lo,t_hi], ρ∈[0,rho_max] with weights
/// including the radial measure ρ^{m−2}; nodes are clustered at τ = 0 and ρ = |τ| on scale `res`.
template <class Fn>
void for_each_cone_node(int m, double t_lo, double t_hi, double rho_max, double res, const ConeRule& rule, Fn&& fn) {
    std::vector<Rule> taus;
    if (t_lo < 0.0 && t_hi > 0.0) {
        taus.push_back(clustered_interval(t_lo, 0.0, 0.0, res, rule.n_tau));
        taus.push_back(clustered_interval(0.0, t_hi, 0.0, res, rule.n_tau));
    } else {
        double toward = (std::abs(t_lo) < std::abs(t_hi)) ? t_lo : t_hi;
        taus.push_back(clustered_interval(t_lo, t_hi, toward, res, 2 * rule.n_tau));
    }
    for (const Rule& tr : taus)
        for (std::size_t i = 0; i < tr.size(); ++i) {
            const double tau = tr.x[i], a = std::abs(tau);
            std::vector<Rule> rhos;
            if (a < rho_max) {
                rhos.push_back(clustered_interval(0.0, a, a, res, rule.n_rho));
                rhos.push_back(clustered_interval(a, rho_max, a, res, rule.n_rho));
            } else {
                rhos.push_back(clustered_interval(0.0, rho_max, rho_max, res, rule.n_rho));
            }
            for (const Rule& rr : rhos)
                for (std::size_t j = 0; j < rr.size(); ++j) {
                    double rho = rr.x[j];
                    fn(tau, rho, tr.w[i] * rr.w[j] * std::pow(rho, m - 2));
                }
        }
}

/// Nodes covering the solid cone ρ ≤ |τ| with ρ = |τ| sin ψ; weight includes ρ^{m−2} and the
/// Jacobian, and `cospow` receives cos ψ so callers can form η^{k} = (τ cos ψ)^{2k} smoothly.
template <class Fn>
void for_each_solid_cone_node(int m, double t_lo, double t_hi, int n_tau, int n_psi, Fn&& fn) {
    std::vector<Rule> taus;
    if (t_lo < 0.0 && t_hi > 0.0) {
        taus.push_back(gauss_legendre(n_tau, t_lo, 0.0));
        taus.push_back(gauss_legendre(n_tau, 0.0, t_hi));
    } else {
        taus.push_back(gauss_legendre(2 * n_tau, t_lo, t_hi));
    }
    Rule psi = gauss_legendre(n_psi, 0.0, 0.5 * kPi);
    for (const Rule& tr : taus)
        for (std::size_t i = 0; i < tr.size(); ++i) {
            const double tau = tr.x[i], a = std::abs(tau);
            for (std::size_t j = 0; j < psi.size(); ++j) {
                double c = std::cos(psi.x[j]), rho = a * std::sin(psi.x[j]);
                fn(tau, rho, c, tr.w[i] * psi.w[j] * a * c * std::pow(rho, m - 2));
            }
        }
}

}  // namespace hadamard
