#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

namespace rsf {

namespace detail {

// Lower-series evaluation of the regularized-free lower incomplete gamma
// gamma(s,x) = x^s e^-x * sum_n x^n / (s (s+1) ... (s+n)). Converges for x < s+1.
inline double lower_gamma_series(double s, double x) {
    double term = 1.0 / s;
    double sum = term;
    for (int n = 1; n < 500; ++n) {
        term *= x / (s + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-16) {
            break;
        }
    }
    return std::exp(-x + s * std::log(x)) * sum;
}

// Modified Lentz continued fraction for Gamma(s,x), valid for x >= s+1.
// Also valid at s = 0, where it evaluates the exponential integral E1(x).
inline double upper_gamma_cf(double s, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - s;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 500; ++i) {
        double an = -i * (i - s);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-16) {
            break;
        }
    }
    return std::exp(-x + s * std::log(x)) * h;
}

// E1(x) for 0 < x <= 1; series around zero.
inline double exp_int_e1_series(double x) {
    const double euler = 0.57721566490153286061;
    double sum = -euler - std::log(x);
    double term = 1.0;
    for (int k = 1; k < 60; ++k) {
        term *= -x / k;
        sum -= term / k;
        if (std::abs(term / k) < std::abs(sum) * 1e-17) {
            break;
        }
    }
    return sum;
}

} // namespace detail

// Upper incomplete gamma Gamma(s,x) = int_x^inf t^{s-1} e^-t dt, unnormalized.
// Series branch below x = s+1, continued fraction above. s = 0 (needed for
// nu = 1 marginalized densities) maps to the exponential integral E1(x).
inline double upper_incomplete_gamma(double s, double x) {
    if (!(s >= 0.0) || !(x >= 0.0)) {
        throw std::invalid_argument("upper_incomplete_gamma: need s >= 0, x >= 0");
    }
    if (s == 0.0) {
        if (x == 0.0) {
            throw std::invalid_argument("upper_incomplete_gamma: diverges at s = 0, x = 0");
        }
        return x <= 1.0 ? detail::exp_int_e1_series(x) : detail::upper_gamma_cf(0.0, x);
    }
    if (x == 0.0) {
        return std::tgamma(s);
    }
    if (x < s + 1.0) {
        return std::tgamma(s) - detail::lower_gamma_series(s, x);
    }
    return detail::upper_gamma_cf(s, x);
}

// gamma(s,x) = Gamma(s) - Gamma(s,x), s > 0.
inline double lower_incomplete_gamma(double s, double x) {
    if (!(s > 0.0) || !(x >= 0.0)) {
        throw std::invalid_argument("lower_incomplete_gamma: need s > 0, x >= 0");
    }
    if (x == 0.0) return 0.0;
    if (x < s + 1.0) {
        return detail::lower_gamma_series(s, x);
    }
    return std::tgamma(s) - detail::upper_gamma_cf(s, x);
}

// Chi density with nu degrees of freedom: x^{nu-1} e^{-x^2/2} / (2^{nu/2-1} Gamma(nu/2)).
inline double chi_pdf(double x, int nu) {
    if (nu < 1) throw std::invalid_argument("chi_pdf: nu >= 1");
    if (x < 0.0) return 0.0;
    if (x == 0.0) return nu == 1 ? std::sqrt(2.0 / 3.14159265358979323846) : 0.0;
    double log_norm = (0.5 * nu - 1.0) * std::log(2.0) + std::lgamma(0.5 * nu);
    return std::exp((nu - 1) * std::log(x) - 0.5 * x * x - log_norm);
}

inline double chi_cdf(double x, int nu) {
    if (nu < 1) throw std::invalid_argument("chi_cdf: nu >= 1");
    if (x <= 0.0) return 0.0;
    return lower_incomplete_gamma(0.5 * nu, 0.5 * x * x) / std::tgamma(0.5 * nu);
}

// Quantile by bisection on the CDF; terminates at |CDF(q) - p| <= 1e-10.
inline double chi_quantile(int nu, double p) {
    if (nu < 1 || !(p > 0.0 && p < 1.0)) {
        throw std::invalid_argument("chi_quantile: need nu >= 1, p in (0,1)");
    }
    double hi = 1.0;
    while (chi_cdf(hi, nu) < p) hi *= 2.0;
    double lo = 0.0;
    double mid = 0.5 * hi;
    for (int it = 0; it < 200; ++it) {
        mid = 0.5 * (lo + hi);
        double c = chi_cdf(mid, nu);
        if (std::abs(c - p) <= 1e-10) break;
        (c < p ? lo : hi) = mid;
    }
    return mid;
}

// G(x, kappa, nu) = (Gamma((nu-1)/2, x^2/2) - Gamma((nu-1)/2, kappa^2/2)) [x < kappa].
// Unbounded at x = 0 when nu = 1 (returns +inf there).
inline double g_function(double x, double kappa, int nu) {
    if (nu < 1 || !(kappa > 0.0)) throw std::invalid_argument("g_function: need nu >= 1, kappa > 0");
    if (x >= kappa || x < 0.0) return 0.0;
    double s = 0.5 * (nu - 1);
    if (s == 0.0 && x == 0.0) return std::numeric_limits<double>::infinity();
    return upper_incomplete_gamma(s, 0.5 * x * x) - upper_incomplete_gamma(s, 0.5 * kappa * kappa);
}

// Residual distribution obtained by averaging truncated-chi noise scales
// sigma uniformly over (0, sigma_bar]. The base density at sigma_bar = 1 is
// G(x,kappa,nu) / norm with the closed-form normalizer
//   norm = int_0^kappa G = sqrt(2) * gamma(nu/2, kappa^2/2),
// and scaling follows p(r; sigma_bar) = (1/sigma_bar) p(r/sigma_bar; 1).
// rho is the attenuation integral -int_0^r x p(x; sigma_bar) dx; its base
// antiderivative uses int_0^v Gamma(s,u) du = v Gamma(s,v) - Gamma(s+1,v) + Gamma(s+1).
// All constants are fixed at construction.
struct MarginalizedChiSpec {
    int nu;
    double kappa;
    double sigma_bar;
    double norm;         // int_0^kappa G(x, kappa, nu) dx
    double rho_base_min; // base rho at x >= kappa (most negative value)

    MarginalizedChiSpec(int nu_in, double kappa_in, double sigma_bar_in)
        : nu(nu_in), kappa(kappa_in), sigma_bar(sigma_bar_in) {
        if (nu < 1 || !(kappa > 0.0) || !(sigma_bar > 0.0)) {
            throw std::invalid_argument("MarginalizedChiSpec: need nu >= 1, kappa > 0, sigma_bar > 0");
        }
        double half_k2 = 0.5 * kappa * kappa;
        norm = std::sqrt(2.0) * lower_incomplete_gamma(0.5 * nu, half_k2);
        double s = 0.5 * (nu - 1);
        rho_base_min = -lower_incomplete_gamma(s + 1.0, half_k2) / norm;
    }

    double density_base(double x) const {
        if (x < 0.0 || x >= kappa) return 0.0;
        return g_function(x, kappa, nu) / norm;
    }

    double rho_base(double x) const {
        if (x <= 0.0) return 0.0;
        if (x >= kappa) return rho_base_min;
        double s = 0.5 * (nu - 1);
        double hx = 0.5 * x * x;
        double hk = 0.5 * kappa * kappa;
        double val = hx * (upper_incomplete_gamma(s, hx) - upper_incomplete_gamma(s, hk)) -
                     upper_incomplete_gamma(s + 1.0, hx) + std::tgamma(s + 1.0);
        return -val / norm;
    }
};

inline double marginalized_inlier_density(const MarginalizedChiSpec &spec, double r) {
    return spec.density_base(r / spec.sigma_bar) / spec.sigma_bar;
}

// Non-positive, zero at r = 0, constant for r >= sigma_bar * kappa.
// Satisfies rho(r; sigma_bar) = sigma_bar * rho(r / sigma_bar; 1) and
// -d/dr rho(r) / r = marginalized_inlier_density(r).
inline double magsac_rho(const MarginalizedChiSpec &spec, double r) {
    return spec.sigma_bar * spec.rho_base(r / spec.sigma_bar);
}

} // namespace rsf
