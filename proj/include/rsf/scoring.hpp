#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "rsf/distributions.hpp"

namespace rsf {

// Numerically stable log(e^x + e^y).
inline double smax(double x, double y) {
    double hi = std::max(x, y);
    double lo = std::min(x, y);
    if (!std::isfinite(hi)) return hi;
    return hi + std::log1p(std::exp(lo - hi));
}

inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

enum class ScoreFamily { Ransac, Msac, GauMarginal, GauProfile, MagsacPlusPlus, Learned };

// Per-family score weights sampled at bin centers (k + 0.5) * tau_max / bins.
struct ScoreTable {
    double tau_max = 0.0;
    int bins = 0;
    Eigen::VectorXd weights;
};

// A scoring function, normalized so rho(0) = 1 and rho -> 0 for large
// residuals. sigma defaults to tau for the Gaussian-uniform families; the
// MagsacPlusPlus scale is sigma_bar = tau / kappa with kappa the 0.99 chi
// quantile, so its support ends exactly at tau.
struct ScoreSpec {
    ScoreFamily family = ScoreFamily::Msac;
    double tau = 1.0;
    double sigma = 1.0;
    int nu = 4;
    std::shared_ptr<const MarginalizedChiSpec> marginal; // MagsacPlusPlus only
    std::shared_ptr<const ScoreTable> table;             // Learned only

    static ScoreSpec ransac(double tau) { return make(ScoreFamily::Ransac, tau, tau); }
    static ScoreSpec msac(double tau) { return make(ScoreFamily::Msac, tau, tau); }
    static ScoreSpec gau_profile(double tau) { return make(ScoreFamily::GauProfile, tau, tau); }

    static ScoreSpec gau_marginal(double tau, std::optional<double> sigma = std::nullopt) {
        return make(ScoreFamily::GauMarginal, tau, sigma.value_or(tau));
    }

    static ScoreSpec magsac(double tau, int nu = 4) {
        ScoreSpec s = make(ScoreFamily::MagsacPlusPlus, tau, tau);
        s.nu = nu;
        double kappa = chi_quantile(nu, 0.99);
        s.marginal = std::make_shared<MarginalizedChiSpec>(nu, kappa, tau / kappa);
        return s;
    }

    static ScoreSpec learned(std::shared_ptr<const ScoreTable> table) {
        if (!table || table->bins <= 0) throw std::invalid_argument("ScoreSpec::learned: empty table");
        ScoreSpec s = make(ScoreFamily::Learned, table->tau_max, table->tau_max);
        s.table = std::move(table);
        return s;
    }

  private:
    static ScoreSpec make(ScoreFamily family, double tau, double sigma) {
        if (!(tau > 0.0) || !(sigma > 0.0)) throw std::invalid_argument("ScoreSpec: need tau, sigma > 0");
        ScoreSpec s;
        s.family = family;
        s.tau = tau;
        s.sigma = sigma;
        return s;
    }
};

namespace detail {

// Piecewise-linear table read with knots at bin centers; flat before the
// first center and after the last one, zero from tau_max on.
inline double table_value(const ScoreTable &t, double r) {
    if (r >= t.tau_max || r < 0.0) return 0.0;
    const double delta = t.tau_max / t.bins;
    const double pos = r / delta - 0.5;
    if (pos <= 0.0) return t.weights(0);
    if (pos >= t.bins - 1) return t.weights(t.bins - 1);
    const int k = static_cast<int>(pos);
    const double f = pos - k;
    return (1.0 - f) * t.weights(k) + f * t.weights(k + 1);
}

inline double table_slope(const ScoreTable &t, double r) {
    if (r >= t.tau_max || r < 0.0) return 0.0;
    const double delta = t.tau_max / t.bins;
    const double pos = r / delta - 0.5;
    if (pos <= 0.0 || pos >= t.bins - 1) return 0.0;
    const int k = static_cast<int>(pos);
    return (t.weights(k + 1) - t.weights(k)) / delta;
}

} // namespace detail

// Normalized score rho(r) in [0, 1].
inline double rho(const ScoreSpec &spec, double r) {
    r = std::abs(r);
    switch (spec.family) {
    case ScoreFamily::Ransac:
        return r < spec.tau ? 1.0 : 0.0;
    case ScoreFamily::Msac:
    case ScoreFamily::GauProfile: {
        double z = 1.0 - (r / spec.tau) * (r / spec.tau);
        return z > 0.0 ? z : 0.0;
    }
    case ScoreFamily::GauMarginal: {
        double inv2s2 = 0.5 / (spec.sigma * spec.sigma);
        return smax((spec.tau * spec.tau - r * r) * inv2s2, 0.0) /
               smax(spec.tau * spec.tau * inv2s2, 0.0);
    }
    case ScoreFamily::MagsacPlusPlus: {
        const MarginalizedChiSpec &m = *spec.marginal;
        double floor = m.sigma_bar * m.rho_base_min;
        return 1.0 - magsac_rho(m, r) / floor;
    }
    case ScoreFamily::Learned:
        return detail::table_value(*spec.table, r);
    }
    return 0.0;
}

// Posterior probability that a residual came from the inlier component.
// Defined for the GauMarginal family only, where it is sigm((tau^2 - r^2) / (2 sigma^2)).
inline double inlier_posterior(const ScoreSpec &spec, double r) {
    if (spec.family != ScoreFamily::GauMarginal) {
        throw std::invalid_argument("inlier_posterior: defined for GauMarginal only");
    }
    return sigmoid((spec.tau * spec.tau - r * r) * 0.5 / (spec.sigma * spec.sigma));
}

// IRLS weight -rho'(r) / r, analytic per family. Kinks take the inner
// derivative (Msac keeps 2/tau^2 up to and including tau).
inline double irls_weight(const ScoreSpec &spec, double r) {
    r = std::abs(r);
    switch (spec.family) {
    case ScoreFamily::Ransac:
        return 0.0;
    case ScoreFamily::Msac:
    case ScoreFamily::GauProfile:
        return r <= spec.tau ? 2.0 / (spec.tau * spec.tau) : 0.0;
    case ScoreFamily::GauMarginal: {
        double inv2s2 = 0.5 / (spec.sigma * spec.sigma);
        double beta = smax(spec.tau * spec.tau * inv2s2, 0.0);
        double z = (spec.tau * spec.tau - r * r) * inv2s2;
        return sigmoid(z) / (spec.sigma * spec.sigma * beta);
    }
    case ScoreFamily::MagsacPlusPlus: {
        const MarginalizedChiSpec &m = *spec.marginal;
        double floor = -m.sigma_bar * m.rho_base_min;
        return marginalized_inlier_density(m, r) / floor;
    }
    case ScoreFamily::Learned: {
        if (r == 0.0) return 0.0;
        return -detail::table_slope(*spec.table, r) / r;
    }
    }
    return 0.0;
}

// Histogram with half-open bins [k d, (k+1) d), d = tau_max / bins; residuals
// at a bin edge land in the upper bin, residuals >= tau_max in overflow.
struct ResidualHistogram {
    double tau_max = 0.0;
    int bins = 0;
    Eigen::VectorXd counts;
    int64_t overflow = 0;

    int64_t total() const { return static_cast<int64_t>(counts.sum()) + overflow; }
};

inline ResidualHistogram histogram_residuals(const Eigen::VectorXd &residuals, double tau_max, int bins) {
    if (!(tau_max > 0.0) || bins <= 0) throw std::invalid_argument("histogram_residuals: need tau_max > 0, bins > 0");
    ResidualHistogram h;
    h.tau_max = tau_max;
    h.bins = bins;
    h.counts = Eigen::VectorXd::Zero(bins);
    const double scale = bins / tau_max;
    for (Eigen::Index i = 0; i < residuals.size(); ++i) {
        const double r = residuals(i);
        if (!(r >= 0.0)) throw std::invalid_argument("histogram_residuals: negative or NaN residual");
        if (r >= tau_max) {
            ++h.overflow;
            continue;
        }
        int k = static_cast<int>(r * scale);
        if (k >= bins) k = bins - 1; // guards rounding at the top edge
        h.counts(k) += 1.0;
    }
    return h;
}

inline ScoreTable build_score_table(const ScoreSpec &spec, double tau_max, int bins) {
    if (!(tau_max > 0.0) || bins <= 0) throw std::invalid_argument("build_score_table: need tau_max > 0, bins > 0");
    ScoreTable t;
    t.tau_max = tau_max;
    t.bins = bins;
    t.weights.resize(bins);
    const double delta = tau_max / bins;
    for (int k = 0; k < bins; ++k) {
        t.weights(k) = rho(spec, (k + 0.5) * delta);
    }
    return t;
}

inline double score_from_histogram(const ScoreTable &table, const ResidualHistogram &hist) {
    if (table.bins != hist.bins || table.tau_max != hist.tau_max) {
        throw std::invalid_argument("score_from_histogram: table and histogram discretizations differ");
    }
    return table.weights.dot(hist.counts);
}

// One row per threshold, sampled like build_score_table. Learned scores have
// no threshold parameter and are rejected.
struct SweepMatrix {
    std::vector<double> thresholds;
    double tau_max = 0.0;
    int bins = 0;
    Eigen::MatrixXd w; // thresholds x bins
};

inline ScoreSpec spec_for_threshold(const ScoreSpec &like, double tau) {
    switch (like.family) {
    case ScoreFamily::Ransac:
        return ScoreSpec::ransac(tau);
    case ScoreFamily::Msac:
        return ScoreSpec::msac(tau);
    case ScoreFamily::GauProfile:
        return ScoreSpec::gau_profile(tau);
    case ScoreFamily::GauMarginal:
        // sigma tracks tau unless the template fixed a different ratio.
        return ScoreSpec::gau_marginal(tau, tau * (like.sigma / like.tau));
    case ScoreFamily::MagsacPlusPlus:
        return ScoreSpec::magsac(tau, like.nu);
    case ScoreFamily::Learned:
        throw std::invalid_argument("spec_for_threshold: Learned has no threshold parameter");
    }
    throw std::invalid_argument("spec_for_threshold: unknown family");
}

inline SweepMatrix build_sweep_matrix(const ScoreSpec &like, const std::vector<double> &thresholds,
                                      double tau_max, int bins) {
    SweepMatrix s;
    s.thresholds = thresholds;
    s.tau_max = tau_max;
    s.bins = bins;
    s.w.resize(static_cast<Eigen::Index>(thresholds.size()), bins);
    for (size_t i = 0; i < thresholds.size(); ++i) {
        s.w.row(static_cast<Eigen::Index>(i)) = build_score_table(spec_for_threshold(like, thresholds[i]), tau_max, bins).weights;
    }
    return s;
}

inline Eigen::VectorXd sweep_scores(const SweepMatrix &sweep, const ResidualHistogram &hist) {
    if (sweep.bins != hist.bins || sweep.tau_max != hist.tau_max) {
        throw std::invalid_argument("sweep_scores: sweep and histogram discretizations differ");
    }
    return sweep.w * hist.counts;
}

// Batch form: one histogram per column, result thresholds x histograms.
inline Eigen::MatrixXd sweep_scores_batch(const SweepMatrix &sweep, const Eigen::MatrixXd &histogram_columns) {
    if (histogram_columns.rows() != sweep.bins) {
        throw std::invalid_argument("sweep_scores_batch: histogram rows != sweep bins");
    }
    return sweep.w * histogram_columns;
}

} // namespace rsf
