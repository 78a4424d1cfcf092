#include "rsf/scoring.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

#include "oracles.hpp"
#include "rsf/random.hpp"

namespace rsf {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<ScoreSpec> family_draws(Rng &rng) {
    std::vector<ScoreSpec> specs;
    for (int k = 0; k < 4; ++k) {
        double tau = rng.uniform(0.3, 5.0);
        double sigma = tau * rng.uniform(0.5, 1.5);
        specs.push_back(ScoreSpec::ransac(tau));
        specs.push_back(ScoreSpec::msac(tau));
        specs.push_back(ScoreSpec::gau_profile(tau));
        specs.push_back(ScoreSpec::gau_marginal(tau, sigma));
        specs.push_back(ScoreSpec::magsac(tau, 2 * (k + 1)));
    }
    // Learned family: affinely normalized marginal table, so rho(0) = 1 exactly.
    ScoreTable t = build_score_table(ScoreSpec::gau_marginal(1.0), 10.0, 500);
    double lo = t.weights.minCoeff(), hi = t.weights.maxCoeff();
    t.weights = (t.weights.array() - lo) / (hi - lo);
    specs.push_back(ScoreSpec::learned(std::make_shared<ScoreTable>(std::move(t))));
    return specs;
}

TEST(Smax, StableSmoothMaximum) {
    EXPECT_NEAR(smax(0.0, 0.0), std::log(2.0), 1e-15);
    EXPECT_NEAR(smax(1000.0, 0.0), 1000.0, 1e-12);
    EXPECT_NEAR(smax(-1000.0, 0.0), 0.0, 1e-12);
    EXPECT_EQ(smax(-kInf, 0.0), 0.0);
    Rng rng(41);
    for (int k = 0; k < 100; ++k) {
        double a = rng.uniform(-50.0, 50.0), b = rng.uniform(-50.0, 50.0);
        double s = smax(a, b);
        EXPECT_GE(s, std::max(a, b)); // strict in exact arithmetic; log1p underflows for wide gaps
        EXPECT_LE(s, std::max(a, b) + std::log(2.0));
        EXPECT_NEAR(s, smax(b, a), 1e-15);
    }
}

TEST(Rho, NormalizedDecreasingAndVanishing) {
    Rng rng(42);
    for (const ScoreSpec &spec : family_draws(rng)) {
        EXPECT_NEAR(rho(spec, 0.0), 1.0, 1e-9);
        double prev = kInf;
        for (int i = 0; i <= 400; ++i) {
            double r = spec.tau * 3.0 * i / 400.0;
            double v = rho(spec, r);
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0 + 1e-12);
            EXPECT_LE(v, prev + 1e-12);
            prev = v;
        }
        for (double m : {10.0, 12.0, 20.0}) {
            EXPECT_LE(rho(spec, m * spec.tau), 1e-6);
        }
    }
}

TEST(Rho, WorkedValues) {
    EXPECT_NEAR(rho(ScoreSpec::msac(2.0), 1.0), 0.75, 1e-15);
    ScoreSpec ransac = ScoreSpec::ransac(1.5);
    EXPECT_EQ(rho(ransac, 1.4999999), 1.0);
    EXPECT_EQ(rho(ransac, 1.5), 0.0);
    ScoreSpec gm = ScoreSpec::gau_marginal(2.0, 1.3);
    double inv2s2 = 0.5 / (1.3 * 1.3);
    EXPECT_NEAR(rho(gm, 0.7), smax((4.0 - 0.49) * inv2s2, 0.0) / smax(4.0 * inv2s2, 0.0), 1e-15);
}

// A uniform inlier density makes both the profile and the marginal normalized
// scores collapse to the plain inlier-count indicator, exactly.
TEST(Rho, UniformInlierDensityGivesIndicator) {
    const double tau = 1.7;
    ScoreSpec indicator = ScoreSpec::ransac(tau);
    for (double log_ratio : {0.3, 2.0, 7.0}) {
        // log density ratio between inlier and outlier components: constant on
        // the support of the uniform inlier density, -inf beyond it.
        auto delta = [&](double r) { return r < tau ? log_ratio : -kInf; };
        for (int i = 0; i < 10000; ++i) {
            double r = 2.5 * tau * i / 10000.0;
            double profile = std::max(delta(r), 0.0) / std::max(delta(0.0), 0.0);
            double marginal = smax(delta(r), 0.0) / smax(delta(0.0), 0.0);
            double want = rho(indicator, r);
            ASSERT_NEAR(profile, want, 1e-12);
            ASSERT_NEAR(marginal, want, 1e-12);
        }
    }
}

// The profile normalized score of the Gaussian-uniform mixture loses its sigma
// dependence and equals the truncated quadratic.
TEST(Rho, GaussianProfileEqualsMsac) {
    Rng rng(43);
    for (int k = 0; k < 20; ++k) {
        double tau = rng.uniform(0.2, 6.0);
        double sigma = rng.uniform(0.05, 4.0);
        double inv2s2 = 0.5 / (sigma * sigma);
        ScoreSpec msac = ScoreSpec::msac(tau);
        ScoreSpec profile = ScoreSpec::gau_profile(tau);
        for (int i = 0; i <= 1000; ++i) {
            double r = 2.0 * tau * i / 1000.0;
            double symbolic = std::max((tau * tau - r * r) * inv2s2, 0.0) / ((tau * tau) * inv2s2);
            ASSERT_NEAR(symbolic, rho(msac, r), 1e-12);
            ASSERT_NEAR(rho(profile, r), rho(msac, r), 1e-12);
        }
    }
}

TEST(Rho, MarginalApproachesMsacAsSigmaVanishes) {
    for (double tau : {0.5, 1.0, 3.0}) {
        ScoreSpec gm = ScoreSpec::gau_marginal(tau, 0.01 * tau);
        ScoreSpec msac = ScoreSpec::msac(tau);
        double sup = 0.0;
        for (int i = 0; i <= 1000; ++i) {
            double r = 2.0 * tau * i / 1000.0;
            sup = std::max(sup, std::abs(rho(gm, r) - rho(msac, r)));
        }
        EXPECT_LE(sup, 1e-3);
    }
}

TEST(InlierPosterior, HalfAtThresholdAndMonotone) {
    Rng rng(44);
    for (int k = 0; k < 10; ++k) {
        double tau = rng.uniform(0.3, 4.0);
        ScoreSpec gm = ScoreSpec::gau_marginal(tau, tau * rng.uniform(0.5, 1.5));
        EXPECT_NEAR(inlier_posterior(gm, tau), 0.5, 1e-12);
        double prev = 1.1;
        for (int i = 0; i <= 200; ++i) {
            double p = inlier_posterior(gm, 3.0 * tau * i / 200.0);
            EXPECT_GT(p, 0.0);
            EXPECT_LT(p, 1.0);
            EXPECT_LT(p, prev);
            prev = p;
        }
    }
    EXPECT_NEAR(inlier_posterior(ScoreSpec::gau_marginal(1.0, 1.0), 0.0),
                0.6224593312018546, 1e-12);
    EXPECT_THROW(inlier_posterior(ScoreSpec::msac(1.0), 0.5), std::invalid_argument);
    EXPECT_THROW(inlier_posterior(ScoreSpec::ransac(1.0), 0.5), std::invalid_argument);
}

TEST(IrlsWeight, ProportionalToPosteriorForMarginal) {
    Rng rng(45);
    for (int k = 0; k < 10; ++k) {
        double tau = rng.uniform(0.3, 4.0);
        ScoreSpec gm = ScoreSpec::gau_marginal(tau, tau * rng.uniform(0.5, 1.5));
        double ref = irls_weight(gm, 0.5 * tau) / inlier_posterior(gm, 0.5 * tau);
        for (int i = 1; i <= 100; ++i) {
            double r = 3.0 * tau * i / 100.0;
            double ratio = irls_weight(gm, r) / inlier_posterior(gm, r);
            ASSERT_NEAR(ratio, ref, 1e-9 * ref);
        }
    }
}

TEST(IrlsWeight, MatchesFiniteDifferenceAwayFromKinks) {
    Rng rng(46);
    std::vector<ScoreSpec> specs = {
        ScoreSpec::msac(1.3),
        ScoreSpec::gau_profile(2.1),
        ScoreSpec::gau_marginal(1.8, 1.1),
        ScoreSpec::magsac(2.5, 4),
        ScoreSpec::magsac(1.0, 6),
    };
    for (const ScoreSpec &spec : specs) {
        for (int i = 1; i <= 60; ++i) {
            double r = 1.4 * spec.tau * i / 60.0;
            if (std::abs(r - spec.tau) < 0.02 * spec.tau) continue; // Msac kink
            double h = 1e-4 * spec.tau;
            double fd = -oracle::central_diff([&](double x) { return rho(spec, x); }, r, h) / r;
            ASSERT_NEAR(irls_weight(spec, r), fd, 1e-5) << "tau=" << spec.tau << " r=" << r;
        }
    }
    // Learned tables are piecewise linear; probe strictly inside segments.
    ScoreTable t = build_score_table(ScoreSpec::gau_marginal(1.0), 10.0, 100);
    ScoreSpec learned = ScoreSpec::learned(std::make_shared<ScoreTable>(t));
    const double delta = t.tau_max / t.bins;
    for (int k = 3; k < 40; ++k) {
        double r = (k + 1.0) * delta; // midpoint between centers k and k+1
        double fd = -oracle::central_diff([&](double x) { return rho(learned, x); }, r, 0.2 * delta) / r;
        ASSERT_NEAR(irls_weight(learned, r), fd, 1e-9);
    }
    EXPECT_EQ(irls_weight(ScoreSpec::ransac(1.0), 0.5), 0.0);
    EXPECT_NEAR(irls_weight(ScoreSpec::msac(2.0), 1.0), 0.5, 1e-15);
    EXPECT_EQ(irls_weight(ScoreSpec::msac(2.0), 2.0), 0.5); // inner derivative at the kink
    EXPECT_EQ(irls_weight(ScoreSpec::msac(2.0), 2.0000001), 0.0);
}

TEST(Histogram, BinAssignmentAndBookkeeping) {
    Eigen::VectorXd r(7);
    r << 0.0, 0.4999999, 0.5, 3.9999999, 7.9999999, 8.0, 100.0;
    ResidualHistogram h = histogram_residuals(r, 8.0, 16);
    EXPECT_EQ(h.counts(0), 2.0);  // 0.0 and 0.4999999
    EXPECT_EQ(h.counts(1), 1.0);  // bin edge 0.5 goes up
    EXPECT_EQ(h.counts(7), 1.0);
    EXPECT_EQ(h.counts(15), 1.0);
    EXPECT_EQ(h.overflow, 2);
    EXPECT_EQ(h.total(), 7);

    ResidualHistogram empty = histogram_residuals(Eigen::VectorXd(), 1.0, 4);
    EXPECT_EQ(empty.counts.sum(), 0.0);
    EXPECT_EQ(empty.overflow, 0);

    Eigen::VectorXd bad(1);
    bad << -0.1;
    EXPECT_THROW(histogram_residuals(bad, 1.0, 4), std::invalid_argument);
    bad << std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(histogram_residuals(bad, 1.0, 4), std::invalid_argument);
    EXPECT_THROW(histogram_residuals(r, 0.0, 4), std::invalid_argument);
    EXPECT_THROW(histogram_residuals(r, 1.0, 0), std::invalid_argument);
}

TEST(ScoreTable, CentersMonotoneAndIndicatorLayout) {
    ScoreTable ransac = build_score_table(ScoreSpec::ransac(5.0), 10.0, 500);
    for (int k = 0; k < 500; ++k) {
        EXPECT_EQ(ransac.weights(k), k < 250 ? 1.0 : 0.0);
    }
    Rng rng(47);
    for (const ScoreSpec &spec : family_draws(rng)) {
        ScoreTable t = build_score_table(spec, 4.0 * spec.tau, 400);
        EXPECT_GE(t.weights(0), 1.0 - 5e-3);
        for (int k = 1; k < t.bins; ++k) {
            EXPECT_LE(t.weights(k), t.weights(k - 1) + 1e-12);
        }
    }
}

TEST(ScoreTable, RansacScoreIsExactInlierCountAtBinEdgeThreshold) {
    Rng rng(48);
    ScoreTable table = build_score_table(ScoreSpec::ransac(5.0), 10.0, 500);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd r(300);
        for (int i = 0; i < r.size(); ++i) r(i) = rng.uniform(0.0, 12.0);
        ResidualHistogram h = histogram_residuals(r, 10.0, 500);
        double want = 0.0;
        for (int i = 0; i < r.size(); ++i) want += r(i) < 5.0 ? 1.0 : 0.0;
        EXPECT_EQ(score_from_histogram(table, h), want);
    }
}

TEST(ScoreTable, HistogramScoreWithinLipschitzBinningBound) {
    Rng rng(49);
    const double tau_max = 10.0;
    const int bins = 500;
    const double delta = tau_max / bins;
    std::vector<ScoreSpec> specs = {ScoreSpec::msac(2.0), ScoreSpec::gau_marginal(2.0),
                                    ScoreSpec::gau_profile(1.2), ScoreSpec::magsac(3.0, 4)};
    for (const ScoreSpec &spec : specs) {
        // |rho'(r)| = irls_weight(r) * r for the smooth families.
        double lipschitz = 0.0;
        for (int i = 1; i <= 20000; ++i) {
            double r = tau_max * i / 20000.0;
            lipschitz = std::max(lipschitz, irls_weight(spec, r) * r);
        }
        ScoreTable table = build_score_table(spec, tau_max, bins);
        for (int trial = 0; trial < 25; ++trial) {
            Eigen::VectorXd r(1000);
            for (int i = 0; i < r.size(); ++i) r(i) = rng.uniform(0.0, 1.1 * tau_max);
            ResidualHistogram h = histogram_residuals(r, tau_max, bins);
            double direct = 0.0;
            for (int i = 0; i < r.size(); ++i) direct += rho(spec, r(i));
            double tabled = score_from_histogram(table, h);
            double bound = (static_cast<double>(r.size()) - h.overflow) * lipschitz * delta * 0.5 +
                           static_cast<double>(h.overflow) * rho(spec, tau_max) + 1e-9 * r.size();
            ASSERT_LE(std::abs(direct - tabled), bound) << "trial " << trial;
        }
    }
}

TEST(Sweep, RowsMatchIndependentScoring) {
    Rng rng(50);
    std::vector<double> thresholds;
    for (int i = 0; i < 50; ++i) thresholds.push_back(0.2 * std::pow(1.08, i));
    ScoreSpec like = ScoreSpec::gau_marginal(1.0, 0.8);
    SweepMatrix sweep = build_sweep_matrix(like, thresholds, 10.0, 500);
    Eigen::VectorXd r(400);
    for (int i = 0; i < r.size(); ++i) r(i) = rng.uniform(0.0, 11.0);
    ResidualHistogram h = histogram_residuals(r, 10.0, 500);
    Eigen::VectorXd scores = sweep_scores(sweep, h);
    for (size_t t = 0; t < thresholds.size(); ++t) {
        ScoreSpec spec = spec_for_threshold(like, thresholds[t]);
        EXPECT_NEAR(spec.sigma / spec.tau, 0.8, 1e-12); // ratio preserved
        double want = score_from_histogram(build_score_table(spec, 10.0, 500), h);
        ASSERT_NEAR(scores(static_cast<Eigen::Index>(t)), want,
                    1e-12 * std::max(1.0, std::abs(want)));
    }
    // Batch form agrees column by column.
    Eigen::MatrixXd cols(500, 3);
    cols.col(0) = h.counts;
    cols.col(1) = 2.0 * h.counts;
    cols.col(2).setZero();
    Eigen::MatrixXd batch = sweep_scores_batch(sweep, cols);
    EXPECT_LE((batch.col(0) - scores).cwiseAbs().maxCoeff(), 1e-12 * scores.cwiseAbs().maxCoeff());
    EXPECT_LE((batch.col(1) - 2.0 * scores).cwiseAbs().maxCoeff(),
              1e-11 * scores.cwiseAbs().maxCoeff());
    EXPECT_EQ(batch.col(2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Sweep, FullGridUnderOneSecond) {
    Rng rng(51);
    std::vector<double> thresholds;
    for (int i = 0; i < 200; ++i) thresholds.push_back(0.1 * std::pow(100.0, i / 199.0));
    SweepMatrix sweep = build_sweep_matrix(ScoreSpec::msac(1.0), thresholds, 20.0, 500);
    Eigen::MatrixXd hists = Eigen::MatrixXd::Zero(500, 1000);
    for (int c = 0; c < hists.cols(); ++c) {
        for (int k = 0; k < 300; ++k) hists(static_cast<int>(rng.uniform_index(500)), c) += 1.0;
    }
    auto t0 = std::chrono::steady_clock::now();
    Eigen::MatrixXd scores = sweep_scores_batch(sweep, hists);
    auto t1 = std::chrono::steady_clock::now();
    EXPECT_EQ(scores.rows(), 200);
    EXPECT_EQ(scores.cols(), 1000);
    EXPECT_GT(scores.maxCoeff(), 0.0);
    EXPECT_LT(std::chrono::duration<double>(t1 - t0).count(), 1.0);
}

TEST(Sweep, AffineRescalingKeepsSelection) {
    Rng rng(52);
    const int models = 20, n = 500;
    ScoreSpec spec = ScoreSpec::gau_marginal(1.5);
    std::vector<Eigen::VectorXd> residuals(models);
    for (auto &r : residuals) {
        r.resize(n);
        for (int i = 0; i < n; ++i) r(i) = std::abs(rng.normal()) * rng.uniform(0.5, 4.0);
    }
    auto argmax_direct = [&](double a, double b) {
        int best = 0;
        double best_q = -kInf;
        for (int m = 0; m < models; ++m) {
            double q = 0.0;
            for (int i = 0; i < n; ++i) q += a * rho(spec, residuals[m](i)) + b;
            if (q > best_q) {
                best_q = q;
                best = m;
            }
        }
        return best;
    };
    int base = argmax_direct(1.0, 0.0);
    EXPECT_EQ(argmax_direct(7.3, 0.0), base);
    EXPECT_EQ(argmax_direct(0.01, -4.0), base);
    EXPECT_EQ(argmax_direct(250.0, 11.0), base);

    // Table scaling leaves the tabled selection unchanged as well.
    ScoreTable table = build_score_table(spec, 10.0, 200);
    auto argmax_table = [&](double a) {
        ScoreTable scaled = table;
        scaled.weights *= a;
        int best = 0;
        double best_q = -kInf;
        for (int m = 0; m < models; ++m) {
            double q = score_from_histogram(scaled, histogram_residuals(residuals[m], 10.0, 200));
            if (q > best_q) {
                best_q = q;
                best = m;
            }
        }
        return best;
    };
    EXPECT_EQ(argmax_table(19.0), argmax_table(1.0));
}

TEST(Errors, MismatchedDiscretizationsAndBadParams) {
    ScoreTable table = build_score_table(ScoreSpec::msac(1.0), 10.0, 100);
    ResidualHistogram h = histogram_residuals(Eigen::VectorXd(), 10.0, 200);
    EXPECT_THROW(score_from_histogram(table, h), std::invalid_argument);
    SweepMatrix sweep = build_sweep_matrix(ScoreSpec::msac(1.0), {0.5, 1.0}, 10.0, 100);
    EXPECT_THROW(sweep_scores(sweep, h), std::invalid_argument);
    EXPECT_THROW(sweep_scores_batch(sweep, Eigen::MatrixXd::Zero(99, 2)), std::invalid_argument);
    EXPECT_THROW(ScoreSpec::msac(0.0), std::invalid_argument);
    EXPECT_THROW(ScoreSpec::gau_marginal(1.0, -1.0), std::invalid_argument);
    EXPECT_THROW(ScoreSpec::learned(nullptr), std::invalid_argument);
    ScoreTable t = build_score_table(ScoreSpec::msac(1.0), 5.0, 50);
    ScoreSpec learned = ScoreSpec::learned(std::make_shared<ScoreTable>(t));
    EXPECT_THROW(spec_for_threshold(learned, 2.0), std::invalid_argument);
}

} // namespace
} // namespace rsf
