#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "rsf/scoring.hpp"

namespace rsf {

// Monotone non-increasing inlier density on [0, tau_max] discretized into
// K = eta.size() bins: log-weight of bin k is sum_{l > k} softplus(eta_l),
// exponentiated and normalized to unit mass. gamma and the outlier support
// r_max are fixed during fitting (a free gamma overfits).
struct MonotoneDensityParams {
    Eigen::VectorXd eta;
    double gamma = 0.5;
    double r_max = 100.0;
    double tau_max = 10.0;
};

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

namespace detail {

inline Eigen::VectorXd cumulative_log_weights(const Eigen::VectorXd &eta) {
    const Eigen::Index k = eta.size();
    Eigen::VectorXd w(k);
    double acc = 0.0;
    for (Eigen::Index i = k - 1; i >= 0; --i) {
        w(i) = acc; // strictly the bins after i, so the last bin carries 0
        acc += softplus(eta(i));
    }
    return w;
}

} // namespace detail

// Per-bin density values; sum * (tau_max / K) == 1.
inline Eigen::VectorXd density_from_params(const MonotoneDensityParams &p) {
    if (p.eta.size() == 0 || !(p.tau_max > 0.0)) {
        throw std::invalid_argument("density_from_params: empty eta or bad tau_max");
    }
    const double delta = p.tau_max / static_cast<double>(p.eta.size());
    Eigen::VectorXd w = detail::cumulative_log_weights(p.eta);
    const double wmax = w.maxCoeff();
    Eigen::VectorXd d = (w.array() - wmax).exp();
    d /= d.sum() * delta;
    return d;
}

struct DensityFitConfig {
    int max_iter = 2000;
    double tol = 1e-12; // relative objective improvement
};

// Maximum-likelihood fit of the monotone inlier density to a residual
// histogram under the mixture gamma * p_in + (1 - gamma) / r_max.
// Plain gradient ascent with backtracking on the mean log-likelihood;
// deterministic (eta starts at zero, no randomness anywhere).
inline MonotoneDensityParams fit_inlier_density(const ResidualHistogram &hist, double gamma,
                                                double r_max, const DensityFitConfig &cfg = {}) {
    if (!(gamma > 0.0 && gamma < 1.0) || !(r_max > 0.0)) {
        throw std::invalid_argument("fit_inlier_density: need gamma in (0,1), r_max > 0");
    }
    const Eigen::Index k = hist.counts.size();
    const double delta = hist.tau_max / static_cast<double>(k);
    const double total = hist.counts.sum();
    if (!(total > 0.0)) throw std::invalid_argument("fit_inlier_density: empty histogram");
    const double outlier_level = (1.0 - gamma) / r_max;

    MonotoneDensityParams p;
    p.eta = Eigen::VectorXd::Zero(k);
    p.gamma = gamma;
    p.r_max = r_max;
    p.tau_max = hist.tau_max;

    auto objective = [&](const Eigen::VectorXd &eta) {
        MonotoneDensityParams q = p;
        q.eta = eta;
        Eigen::VectorXd d = density_from_params(q);
        double ll = 0.0;
        for (Eigen::Index i = 0; i < k; ++i) {
            if (hist.counts(i) == 0.0) continue;
            ll += hist.counts(i) * std::log(gamma * d(i) + outlier_level);
        }
        return ll / total;
    };

    double obj = objective(p.eta);
    double step = 1.0;
    for (int it = 0; it < cfg.max_iter; ++it) {
        // Gradient via prefix sums: dL/deta_l = sigm(eta_l) (S_{<l} - Stot * C_l)
        // with S the posterior-weighted counts and C the density mass below l.
        Eigen::VectorXd d = density_from_params(p);
        Eigen::VectorXd post(k);
        for (Eigen::Index i = 0; i < k; ++i) {
            double pin = gamma * d(i);
            post(i) = hist.counts(i) * pin / (pin + outlier_level);
        }
        double stot = post.sum();
        Eigen::VectorXd grad(k);
        double s_below = 0.0;
        double c_below = 0.0;
        for (Eigen::Index l = 0; l < k; ++l) {
            grad(l) = sigmoid(p.eta(l)) * (s_below - stot * c_below) / total;
            s_below += post(l);
            c_below += d(l) * delta;
        }
        double gnorm = grad.norm();
        if (gnorm < 1e-14) break;
        bool improved = false;
        while (step > 1e-14) {
            Eigen::VectorXd cand = p.eta + step * grad;
            double cand_obj = objective(cand);
            if (cand_obj > obj) {
                double gain = cand_obj - obj;
                p.eta = cand;
                obj = cand_obj;
                improved = true;
                step *= 2.0;
                if (gain < cfg.tol * std::abs(obj)) improved = false; // converged
                break;
            }
            step *= 0.5;
        }
        if (!improved) break;
    }
    return p;
}

// Bin index where the inlier part drops below the outlier level, i.e. the
// residual beyond which the posterior is < 0.5; empty if it never does.
inline std::optional<double> equivalent_threshold(const MonotoneDensityParams &p) {
    Eigen::VectorXd d = density_from_params(p);
    const double delta = p.tau_max / static_cast<double>(d.size());
    const double outlier_level = (1.0 - p.gamma) / p.r_max;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (p.gamma * d(i) < outlier_level) {
            return (i + 0.5) * delta;
        }
    }
    return std::nullopt;
}

struct LearnedTable {
    ScoreTable table;
    bool informative = true;
};

// Score weights log(gamma p_in + (1 - gamma) / r_max) mapped affinely to
// [0, 1]. A (near) constant density cannot rank residuals and is flagged.
inline LearnedTable learned_score_table(const MonotoneDensityParams &p) {
    Eigen::VectorXd d = density_from_params(p);
    const double outlier_level = (1.0 - p.gamma) / p.r_max;
    Eigen::VectorXd s(d.size());
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        s(i) = std::log(p.gamma * d(i) + outlier_level);
    }
    LearnedTable out;
    out.table.tau_max = p.tau_max;
    out.table.bins = static_cast<int>(d.size());
    const double lo = s.minCoeff();
    const double hi = s.maxCoeff();
    if (hi - lo < 1e-12) {
        out.informative = false;
        out.table.weights = Eigen::VectorXd::Ones(d.size());
        return out;
    }
    out.table.weights = (s.array() - lo) / (hi - lo);
    return out;
}

} // namespace rsf
