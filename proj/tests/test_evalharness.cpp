#include "rsf/evalharness.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "rsf/synth.hpp"

namespace {

using namespace rsf;

std::vector<SyntheticScene> essential_scenes(int count, int n, double gamma, double sigma_px,
                                             uint64_t seed0) {
    std::vector<SyntheticScene> scenes;
    scenes.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        scenes.push_back(generate_scene(essential_scene_config(n, gamma, sigma_px, seed0 + static_cast<uint64_t>(i))));
    }
    return scenes;
}

std::vector<ModelPool> minimal_pools(const std::vector<SyntheticScene> &scenes, int m, uint64_t seed0) {
    std::vector<ModelPool> pools;
    pools.reserve(scenes.size());
    for (size_t i = 0; i < scenes.size(); ++i) {
        pools.push_back(generate_pool(scenes[i], m, PoolMix{}, seed0 + static_cast<uint64_t>(i)));
    }
    return pools;
}

GridOptions essential_grid_options(int threads = 1) {
    GridOptions opt;
    opt.residual_unit = kEssentialPixel;
    opt.threads = threads;
    return opt;
}

TEST(DefaultThresholds, LogSpacedWithPinnedEndpoints) {
    std::vector<double> t = default_thresholds();
    ASSERT_EQ(t.size(), 200u);
    EXPECT_NEAR(t.front(), 0.1, 1e-12);
    EXPECT_NEAR(t.back(), 10.0, 1e-12);
    double ratio = t[1] / t[0];
    for (size_t i = 1; i + 1 < t.size(); ++i) {
        EXPECT_NEAR(t[i + 1] / t[i], ratio, 1e-9);
    }
    EXPECT_THROW(default_thresholds(1), std::invalid_argument);
    EXPECT_THROW(default_thresholds(10, -1.0, 5.0), std::invalid_argument);
    EXPECT_THROW(default_thresholds(10, 5.0, 5.0), std::invalid_argument);
}

TEST(ErrorGridTest, GroundTruthOnlyPoolScoresZeroEverywhere) {
    auto scenes = essential_scenes(3, 150, 0.8, 1.0, 400);
    std::vector<ModelPool> pools;
    PoolMix gt_only;
    gt_only.ground_truth = true;
    for (const auto &s : scenes) pools.push_back(generate_pool(s, 1, gt_only, 1));

    std::vector<double> taus = default_thresholds(10, 0.5, 8.0);
    for (Method m : {Method::Msac, Method::GauMarginal, Method::Oracle}) {
        ErrorGrid grid = precompute_error_grid(scenes, pools, m, taus, essential_grid_options());
        ASSERT_EQ(grid.errors.rows(), 3);
        ASSERT_EQ(grid.errors.cols(), 10);
        EXPECT_LE(grid.errors.maxCoeff(), 1e-6) << method_name(m);
    }
}

TEST(ErrorGridTest, OracleRowsAreConstantPoolMinimaAndDominateEveryMethod) {
    auto scenes = essential_scenes(6, 200, 0.8, 1.0, 500);
    auto pools = minimal_pools(scenes, 60, 4500);
    std::vector<double> taus = default_thresholds(15, 0.5, 8.0);
    GridOptions opt = essential_grid_options();

    ErrorGrid oracle = precompute_error_grid(scenes, pools, Method::Oracle, taus, opt);
    for (size_t i = 0; i < scenes.size(); ++i) {
        double want = pool_pose_errors(scenes[i], pools[i]).minCoeff();
        for (Eigen::Index t = 0; t < oracle.errors.cols(); ++t) {
            EXPECT_EQ(oracle.errors(static_cast<Eigen::Index>(i), t), want);
        }
    }
    for (Method m : {Method::Ransac, Method::Msac, Method::GauMarginal, Method::GauProfile,
                     Method::MagsacPlusPlus}) {
        ErrorGrid grid = precompute_error_grid(scenes, pools, m, taus, opt);
        for (Eigen::Index i = 0; i < grid.errors.rows(); ++i) {
            for (Eigen::Index t = 0; t < grid.errors.cols(); ++t) {
                EXPECT_LE(oracle.errors(i, t), grid.errors(i, t)) << method_name(m);
            }
        }
    }
}

TEST(ErrorGridTest, DeterministicAcrossThreadCounts) {
    auto scenes = essential_scenes(5, 150, 0.8, 1.0, 600);
    auto pools = minimal_pools(scenes, 40, 4600);
    std::vector<double> taus = default_thresholds(12, 0.5, 8.0);
    ErrorGrid a = precompute_error_grid(scenes, pools, Method::GauMarginal, taus, essential_grid_options(1));
    ErrorGrid b = precompute_error_grid(scenes, pools, Method::GauMarginal, taus, essential_grid_options(4));
    EXPECT_EQ(a.errors, b.errors);
    EXPECT_THROW(precompute_error_grid({}, {}, Method::Msac, taus), std::invalid_argument);
    std::vector<ModelPool> short_pools(pools.begin(), pools.end() - 1);
    EXPECT_THROW(precompute_error_grid(scenes, short_pools, Method::Msac, taus), std::invalid_argument);
}

// The histogram-sweep selection must agree with direct per-threshold scoring
// except where two pool scores sit within the discretization error, which is
// bounded by the score's Lipschitz constant times half a bin plus whatever
// mass the histogram truncates at tau_max.
TEST(ErrorGridTest, MatchesDirectSelectionOutsideBinningTolerance) {
    auto scenes = essential_scenes(3, 150, 0.8, 1.0, 700);
    auto pools = minimal_pools(scenes, 40, 4700);
    std::vector<double> taus = default_thresholds(20, 0.5, 8.0);
    GridOptions opt = essential_grid_options();

    for (Method method : {Method::Msac, Method::GauMarginal}) {
        ErrorGrid grid = precompute_error_grid(scenes, pools, method, taus, opt);
        ScoreSpec like = detail::method_template(method, opt);
        for (size_t i = 0; i < scenes.size(); ++i) {
            Eigen::VectorXd errs = pool_pose_errors(scenes[i], pools[i]);
            std::vector<Eigen::VectorXd> residuals_px;
            for (size_t j = 0; j < pools[i].size(); ++j) {
                residuals_px.push_back(residual_vector(pools[i].models[j], scenes[i].corrs) /
                                       opt.residual_unit);
            }
            for (size_t ti = 0; ti < taus.size(); ++ti) {
                ScoreSpec spec = spec_for_threshold(like, taus[ti]);
                // Steepest score slope over the histogram support bounds the
                // per-point binning error; truncated tail mass is exact.
                double step = opt.tau_max / 4000.0;
                double lip = 0.0;
                for (int k = 1; k <= 4000; ++k) {
                    double r = k * step;
                    lip = std::max(lip, irls_weight(spec, r) * r);
                }
                double bin = opt.tau_max / opt.bins;
                Eigen::VectorXd direct(static_cast<Eigen::Index>(pools[i].size()));
                Eigen::VectorXd bound(static_cast<Eigen::Index>(pools[i].size()));
                for (size_t j = 0; j < pools[i].size(); ++j) {
                    const Eigen::VectorXd &r = residuals_px[j];
                    double s = 0.0, over = 0.0;
                    int in_range = 0;
                    for (Eigen::Index k = 0; k < r.size(); ++k) {
                        if (!std::isfinite(r(k))) continue;
                        s += rho(spec, r(k));
                        if (r(k) < opt.tau_max) {
                            ++in_range;
                        } else {
                            over += rho(spec, r(k));
                        }
                    }
                    direct(static_cast<Eigen::Index>(j)) = s;
                    bound(static_cast<Eigen::Index>(j)) = in_range * lip * bin / 2.0 + over + 1e-9;
                }
                int direct_best = detail::argmax_lowest(direct);
                // The grid stores only the selected model's error; find which
                // models carry that error and take the best direct score among
                // them (several models can tie on error).
                double got = grid.errors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(ti));
                double grid_score = -std::numeric_limits<double>::infinity();
                double grid_bound = 0.0;
                for (Eigen::Index j = 0; j < errs.size(); ++j) {
                    if (errs(j) == got && direct(j) > grid_score) {
                        grid_score = direct(j);
                        grid_bound = bound(j);
                    }
                }
                double gap = direct(direct_best) - grid_score;
                EXPECT_LE(gap, bound(direct_best) + grid_bound)
                    << method_name(method) << " scene " << i << " tau " << taus[ti];
            }
        }
    }
}

// A pixel is a unit of account: running the same experiment with thresholds
// quoted in pixels (residual_unit set) or in raw scene units must select the
// same models.
TEST(ErrorGridTest, ResidualUnitOnlyChangesTheQuotingConvention) {
    auto scenes = essential_scenes(4, 200, 0.8, 1.0, 800);
    auto pools = minimal_pools(scenes, 50, 4800);
    std::vector<double> taus_px = default_thresholds(15, 0.5, 8.0);

    GridOptions px = essential_grid_options();
    GridOptions raw;
    raw.tau_max = px.tau_max * kEssentialPixel;
    raw.bins = px.bins;
    raw.residual_unit = 1.0;
    std::vector<double> taus_raw;
    for (double t : taus_px) taus_raw.push_back(t * kEssentialPixel);

    for (Method m : {Method::Msac, Method::GauMarginal, Method::MagsacPlusPlus}) {
        ErrorGrid a = precompute_error_grid(scenes, pools, m, taus_px, px);
        ErrorGrid b = precompute_error_grid(scenes, pools, m, taus_raw, raw);
        EXPECT_LE((a.errors - b.errors).cwiseAbs().maxCoeff(), 1e-12) << method_name(m);
    }
}

TEST(Metrics, MedianLowerAndMeanAverageAccuracy) {
    EXPECT_EQ(median_lower({0.0, 5.0, 10.0}), 5.0);
    EXPECT_EQ(median_lower({4.0, 1.0, 3.0, 2.0}), 2.0); // lower middle, no interpolation
    EXPECT_EQ(median_lower({7.0}), 7.0);
    EXPECT_THROW(median_lower({}), std::invalid_argument);

    auto [med0, maa0] = median_and_maa({0.0, 0.0, 0.0});
    EXPECT_EQ(med0, 0.0);
    EXPECT_EQ(maa0, 1.0);
    auto [med1, maa1] = median_and_maa({10.0, 25.0, 11.0});
    EXPECT_GE(med1, 10.0);
    EXPECT_EQ(maa1, 0.0);
    auto [med2, maa2] = median_and_maa({0.0, 5.0, 10.0});
    EXPECT_EQ(med2, 5.0);
    EXPECT_NEAR(maa2, 0.5, 1e-15);
    EXPECT_THROW(median_and_maa({1.0}, 0.0), std::invalid_argument);
}

TEST(LargeValidation, SingleInstanceCurveEqualsItsRowAndTiesGoLow) {
    ErrorGrid grid;
    grid.method = "msac";
    grid.thresholds = {1.0, 2.0, 3.0};
    grid.errors.resize(1, 3);
    grid.errors << 4.0, 2.0, 2.0;
    ValidationCurve c = large_validation(grid);
    EXPECT_EQ(c.median_error(0), 4.0);
    EXPECT_EQ(c.median_error(1), 2.0);
    EXPECT_EQ(c.median_error(2), 2.0);
    EXPECT_EQ(c.best_index, 1); // tie between thresholds 2 and 3

    grid.errors << 5.0, 5.0, 5.0;
    EXPECT_EQ(large_validation(grid).best_index, 0);
}

TEST(LargeValidation, OracleCurveIsFlat) {
    auto scenes = essential_scenes(5, 150, 0.8, 1.0, 900);
    auto pools = minimal_pools(scenes, 40, 4900);
    ErrorGrid oracle = precompute_error_grid(scenes, pools, Method::Oracle,
                                             default_thresholds(12, 0.5, 8.0), essential_grid_options());
    ValidationCurve c = large_validation(oracle);
    EXPECT_EQ(c.median_error.maxCoeff(), c.median_error.minCoeff());
    EXPECT_EQ(c.best_index, 0);
}

TEST(Sensitivity, FullValidationReproducesLargeValidationWithZeroSpread) {
    auto scenes = essential_scenes(24, 150, 0.8, 1.0, 1000);
    auto pools = minimal_pools(scenes, 60, 5000);
    std::vector<double> taus = default_thresholds(20, 0.5, 8.0);
    GridOptions opt = essential_grid_options();
    std::vector<SyntheticScene> val_s(scenes.begin(), scenes.begin() + 12);
    std::vector<SyntheticScene> test_s(scenes.begin() + 12, scenes.end());
    std::vector<ModelPool> val_p(pools.begin(), pools.begin() + 12);
    std::vector<ModelPool> test_p(pools.begin() + 12, pools.end());
    ErrorGrid val = precompute_error_grid(val_s, val_p, Method::GauMarginal, taus, opt);
    ErrorGrid test = precompute_error_grid(test_s, test_p, Method::GauMarginal, taus, opt);

    SensitivityReport rep = small_validation_sensitivity(val, test, {12}, 50, 77);
    ASSERT_EQ(rep.mean_error.size(), 1u);
    EXPECT_EQ(rep.std_error[0], 0.0);
    ValidationCurve val_curve = large_validation(val);
    ValidationCurve test_curve = large_validation(test);
    // The mean over identical trials re-rounds once per accumulation.
    double want = test_curve.median_error(val_curve.best_index);
    EXPECT_NEAR(rep.mean_error[0], want, 1e-12 * std::max(1.0, std::abs(want)));

    SensitivityReport again = small_validation_sensitivity(val, test, {12}, 50, 77);
    EXPECT_EQ(rep.mean_error, again.mean_error);
    EXPECT_EQ(rep.std_error, again.std_error);

    EXPECT_THROW(small_validation_sensitivity(val, test, {13}, 10, 1), std::invalid_argument);
    EXPECT_THROW(small_validation_sensitivity(val, test, {0}, 10, 1), std::invalid_argument);
    EXPECT_THROW(small_validation_sensitivity(val, test, {5}, 0, 1), std::invalid_argument);
    ErrorGrid other = val;
    other.thresholds[0] *= 2.0;
    EXPECT_THROW(small_validation_sensitivity(other, test, {5}, 10, 1), std::invalid_argument);
}

TEST(Sensitivity, ExpectedErrorDoesNotGrowWithValidationSize) {
    auto scenes = essential_scenes(60, 200, 0.8, 1.0, 1100);
    auto pools = minimal_pools(scenes, 150, 5100);
    std::vector<double> taus = default_thresholds(40, 0.3, 10.0);
    GridOptions opt = essential_grid_options();
    std::vector<SyntheticScene> val_s(scenes.begin(), scenes.begin() + 30);
    std::vector<SyntheticScene> test_s(scenes.begin() + 30, scenes.end());
    std::vector<ModelPool> val_p(pools.begin(), pools.begin() + 30);
    std::vector<ModelPool> test_p(pools.begin() + 30, pools.end());
    ErrorGrid val = precompute_error_grid(val_s, val_p, Method::GauMarginal, taus, opt);
    ErrorGrid test = precompute_error_grid(test_s, test_p, Method::GauMarginal, taus, opt);

    const int trials = 400;
    SensitivityReport rep = small_validation_sensitivity(val, test, {2, 5, 15, 30}, trials, 99);
    // Up to one standard deviation of the per-trial outcome: the full-size
    // validation picks a single threshold and can land slightly off the
    // average of many smaller draws.
    for (size_t k = 0; k + 1 < rep.n_values.size(); ++k) {
        double band = rep.std_error[k] + rep.std_error[k + 1];
        EXPECT_LE(rep.mean_error[k + 1], rep.mean_error[k] + band + 1e-12)
            << "n " << rep.n_values[k] << " -> " << rep.n_values[k + 1];
    }
}

TEST(MagsacGauFitTest, RecoversPublishedParametersWithinTolerance) {
    struct Want {
        int nu;
        double kappa, tau, sigma;
    };
    const Want wants[] = {{4, 3.6437, 1.0, 0.96}, {6, 4.1002, 2.0, 1.0}, {8, 4.4822, 2.51, 1.06}};
    auto t0 = std::chrono::steady_clock::now();
    for (const Want &w : wants) {
        MagsacGauFit fit = fit_magsac_to_gau(w.nu);
        EXPECT_NEAR(fit.kappa, w.kappa, 0.01) << "nu " << w.nu;
        EXPECT_NEAR(fit.tau, w.tau, 0.05) << "nu " << w.nu;
        EXPECT_NEAR(fit.sigma, w.sigma, 0.05) << "nu " << w.nu;
        if (w.nu == 4) EXPECT_LE(fit.sup_gap, 0.02);
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_LT(secs, 10.0);
    EXPECT_THROW(fit_magsac_to_gau(1), std::invalid_argument);
}

TEST(SelectivityTest, UnityAtZeroDecaysMonotonicallyRotationNoSlower) {
    auto scenes = essential_scenes(120, 300, 0.85, 1.0, 1200);
    ScoreSpec spec = ScoreSpec::gau_marginal(3.0 * kEssentialPixel, 1.0 * kEssentialPixel);
    std::vector<PerturbMode> modes = {PerturbMode::Pitch, PerturbMode::Yaw, PerturbMode::Roll,
                                      PerturbMode::RandomRot, PerturbMode::RandomTransRot};
    std::vector<double> thetas = {0.0, 2.0, 5.0, 10.0, 20.0};
    SelectivityResult res = selectivity_experiment(scenes, spec, modes, thetas, 321);
    EXPECT_EQ(res.scenes_used, 120);
    ASSERT_EQ(res.mean_relative.rows(), 5);
    ASSERT_EQ(res.mean_relative.cols(), 5);

    for (Eigen::Index m = 0; m < 5; ++m) {
        EXPECT_NEAR(res.mean_relative(m, 0), 1.0, 1e-9);
        for (Eigen::Index t = 0; t + 1 < 5; ++t) {
            EXPECT_LE(res.mean_relative(m, t + 1), res.mean_relative(m, t) + 0.03)
                << "mode " << m << " theta step " << t;
        }
    }
    // Pure-rotation perturbations hurt the score at least as much as the
    // mixed translation-rotation one of the same angle.
    for (Eigen::Index t = 1; t < 5; ++t) {
        double trans = res.mean_relative(4, t);
        for (Eigen::Index m = 0; m < 4; ++m) {
            EXPECT_LE(res.mean_relative(m, t), trans + 0.03) << "mode " << m << " theta " << thetas[static_cast<size_t>(t)];
        }
    }
}

TEST(SelectivityTest, ThrowsWhenEverySceneIsFiltered) {
    auto scenes = essential_scenes(3, 100, 0.5, 1.0, 1300);
    // Threshold far below the noise floor: every GT score ~ 0 < 5.
    ScoreSpec spec = ScoreSpec::gau_marginal(1e-5 * kEssentialPixel, 1e-5 * kEssentialPixel);
    EXPECT_THROW(selectivity_experiment(scenes, spec, {PerturbMode::Pitch}, {0.0, 5.0}, 1),
                 std::runtime_error);
}

TEST(ConsistencyTest, InlierCountsFallWithPoseErrorAndRiseWithThreshold) {
    auto scenes = essential_scenes(120, 300, 0.85, 1.0, 1400);
    std::vector<double> taus;
    for (double px : {0.5, 1.0, 2.0, 5.0, 10.0}) taus.push_back(px * kEssentialPixel);
    std::vector<double> bins = {0.0, 2.0, 5.0, 10.0, 20.0};
    ConsistencyResult res = consistency_experiment(scenes, taus, bins, 654);
    ASSERT_EQ(res.mean_inlier_count.rows(), 5);
    ASSERT_EQ(res.mean_inlier_count.cols(), 5);

    for (Eigen::Index t = 0; t < 5; ++t) {
        for (Eigen::Index b = 0; b + 1 < 5; ++b) {
            EXPECT_GT(res.mean_inlier_count(b, t), res.mean_inlier_count(b + 1, t))
                << "tau " << taus[static_cast<size_t>(t)] << " bin step " << b;
        }
    }
    for (Eigen::Index b = 0; b < 5; ++b) {
        for (Eigen::Index t = 0; t + 1 < 5; ++t) {
            EXPECT_LE(res.mean_inlier_count(b, t), res.mean_inlier_count(b, t + 1));
        }
    }
}

TEST(ConsistencyTest, GroundTruthOnCleanSceneCountsAllInliers) {
    std::vector<SyntheticScene> scene = {generate_scene(essential_scene_config(400, 0.999, 1e-7, 1500))};
    int true_inliers = 0;
    for (uint8_t l : scene[0].corrs.labels) true_inliers += l;
    ConsistencyResult res = consistency_experiment(scene, {1.0 * kEssentialPixel}, {0.0}, 1);
    EXPECT_GE(res.mean_inlier_count(0, 0), static_cast<double>(true_inliers));
    EXPECT_LE(res.mean_inlier_count(0, 0), 400.0);
    EXPECT_THROW(consistency_experiment({}, {1.0}, {0.0}, 1), std::invalid_argument);
}

TEST(GtInPool, ValidatedSelectionRecoversTheTruthForAllScoringMethods) {
    auto scenes = essential_scenes(20, 200, 0.8, 1.0, 1600);
    std::vector<ModelPool> pools;
    PoolMix mix;
    mix.ground_truth = true;
    for (size_t i = 0; i < scenes.size(); ++i) {
        pools.push_back(generate_pool(scenes[i], 200, mix, 5600 + static_cast<uint64_t>(i)));
    }
    std::vector<double> taus = default_thresholds(30, 0.5, 8.0);
    GridOptions opt = essential_grid_options();
    for (Method m : {Method::Msac, Method::GauMarginal, Method::MagsacPlusPlus}) {
        ErrorGrid grid = precompute_error_grid(scenes, pools, m, taus, opt);
        ValidationCurve c = large_validation(grid);
        EXPECT_LE(c.median_error(c.best_index), 0.01) << method_name(m);
    }
}

} // namespace
