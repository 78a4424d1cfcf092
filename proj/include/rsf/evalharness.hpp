#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "rsf/geometry.hpp"
#include "rsf/random.hpp"
#include "rsf/scoring.hpp"
#include "rsf/synth.hpp"

namespace rsf {

// Selection methods for threshold sweeps. Oracle picks the lowest-error pool
// model per instance (a bound, constant across thresholds); Learned has no
// threshold parameter and is not sweepable.
enum class Method { Ransac, Msac, GauMarginal, GauProfile, MagsacPlusPlus, Oracle };

inline const char *method_name(Method m) {
    switch (m) {
    case Method::Ransac: return "ransac";
    case Method::Msac: return "msac";
    case Method::GauMarginal: return "gau-marginal";
    case Method::GauProfile: return "gau-profile";
    case Method::MagsacPlusPlus: return "magsac";
    case Method::Oracle: return "oracle";
    }
    return "?";
}

// 200 log-spaced thresholds on [0.1, 10] unless configured otherwise.
inline std::vector<double> default_thresholds(int count = 200, double lo = 0.1, double hi = 10.0) {
    if (count < 2 || !(lo > 0.0) || !(hi > lo)) throw std::invalid_argument("default_thresholds: bad grid");
    std::vector<double> t(count);
    const double llo = std::log(lo), lhi = std::log(hi);
    for (int i = 0; i < count; ++i) {
        t[i] = std::exp(llo + (lhi - llo) * i / (count - 1));
    }
    return t;
}

struct GridOptions {
    double tau_max = 20.0;     // histogram support in pixels; scores truncate here
    int bins = 500;
    int nu = 4;                // MagsacPlusPlus degrees of freedom
    double sigma_over_tau = 1.0; // GauMarginal sigma as a fraction of tau
    double residual_unit = 1.0; // scene-unit length of one pixel (kEssentialPixel for Essential)
    int threads = 1;
};

// Pose errors of the per-threshold best-scoring pool model, one row per
// instance. Selection is argmax of the histogram score with ties broken
// toward the lowest model index.
struct ErrorGrid {
    std::string method;
    std::vector<double> thresholds;
    Eigen::MatrixXd errors; // instances x thresholds
};

namespace detail {

template <typename F> void parallel_for(int n, int threads, F &&fn) {
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&]() {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto &th : pool) th.join();
}

inline int argmax_lowest(const Eigen::VectorXd &v) {
    int best = 0;
    for (int i = 1; i < v.size(); ++i) {
        if (v(i) > v(best)) best = i;
    }
    return best;
}

inline ScoreSpec method_template(Method m, const GridOptions &opt) {
    switch (m) {
    case Method::Ransac: return ScoreSpec::ransac(1.0);
    case Method::Msac: return ScoreSpec::msac(1.0);
    case Method::GauMarginal: return ScoreSpec::gau_marginal(1.0, opt.sigma_over_tau);
    case Method::GauProfile: return ScoreSpec::gau_profile(1.0);
    case Method::MagsacPlusPlus: return ScoreSpec::magsac(1.0, opt.nu);
    case Method::Oracle: break;
    }
    throw std::invalid_argument("method_template: Oracle has no score spec");
}

} // namespace detail

// Pose error of every pool model against the scene's ground truth, in the
// pool's order.
inline Eigen::VectorXd pool_pose_errors(const SyntheticScene &scene, const ModelPool &pool) {
    if (!scene.gt_pose) throw std::invalid_argument("pool_pose_errors: scene has no ground-truth pose");
    Eigen::VectorXd e(pool.size());
    for (size_t j = 0; j < pool.size(); ++j) {
        Pose p = decompose_essential(pool.models[j], *scene.gt_pose);
        e(static_cast<Eigen::Index>(j)) = pose_error(p, *scene.gt_pose).e;
    }
    return e;
}

inline ErrorGrid precompute_error_grid(const std::vector<SyntheticScene> &scenes,
                                       const std::vector<ModelPool> &pools, Method method,
                                       const std::vector<double> &thresholds,
                                       const GridOptions &opt = {}) {
    if (scenes.size() != pools.size() || scenes.empty()) {
        throw std::invalid_argument("precompute_error_grid: scenes/pools size mismatch or empty");
    }
    ErrorGrid grid;
    grid.method = method_name(method);
    grid.thresholds = thresholds;
    grid.errors.resize(static_cast<Eigen::Index>(scenes.size()), static_cast<Eigen::Index>(thresholds.size()));

    SweepMatrix sweep;
    if (method != Method::Oracle) {
        sweep = build_sweep_matrix(detail::method_template(method, opt), thresholds, opt.tau_max, opt.bins);
    }

    detail::parallel_for(static_cast<int>(scenes.size()), opt.threads, [&](int i) {
        const SyntheticScene &scene = scenes[static_cast<size_t>(i)];
        const ModelPool &pool = pools[static_cast<size_t>(i)];
        Eigen::VectorXd errs = pool_pose_errors(scene, pool);
        if (method == Method::Oracle) {
            grid.errors.row(i).setConstant(errs.minCoeff());
            return;
        }
        Eigen::MatrixXd hcols(opt.bins, pool.size());
        for (size_t j = 0; j < pool.size(); ++j) {
            Eigen::VectorXd r = residual_vector(pool.models[j], scene.corrs) / opt.residual_unit;
            hcols.col(static_cast<Eigen::Index>(j)) = histogram_residuals(r, opt.tau_max, opt.bins).counts;
        }
        Eigen::MatrixXd scores = sweep_scores_batch(sweep, hcols); // thresholds x models
        for (Eigen::Index t = 0; t < scores.rows(); ++t) {
            grid.errors(i, t) = errs(detail::argmax_lowest(scores.row(t).transpose()));
        }
    });
    return grid;
}

// Lower-middle-element median (no interpolation for even sizes).
inline double median_lower(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median_lower: empty");
    size_t k = (v.size() - 1) / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<long>(k), v.end());
    return v[k];
}

// Median error and mean average accuracy (mean of max(0, 1 - e / cap),
// no binning) over a set of pose errors.
inline std::pair<double, double> median_and_maa(const std::vector<double> &errors, double cap = 10.0) {
    if (errors.empty() || !(cap > 0.0)) throw std::invalid_argument("median_and_maa: bad input");
    double maa = 0.0;
    for (double e : errors) maa += std::max(0.0, 1.0 - e / cap);
    return {median_lower(errors), maa / static_cast<double>(errors.size())};
}

struct ValidationCurve {
    std::vector<double> thresholds;
    Eigen::VectorXd median_error;
    int best_index = 0; // argmin, ties toward the lower threshold
};

inline ValidationCurve large_validation(const ErrorGrid &grid) {
    ValidationCurve c;
    c.thresholds = grid.thresholds;
    c.median_error.resize(grid.errors.cols());
    for (Eigen::Index t = 0; t < grid.errors.cols(); ++t) {
        std::vector<double> col(grid.errors.rows());
        for (Eigen::Index i = 0; i < grid.errors.rows(); ++i) col[static_cast<size_t>(i)] = grid.errors(i, t);
        c.median_error(t) = median_lower(col);
    }
    c.best_index = 0;
    for (Eigen::Index t = 1; t < c.median_error.size(); ++t) {
        if (c.median_error(t) < c.median_error(c.best_index)) c.best_index = static_cast<int>(t);
    }
    return c;
}

// Small-validation protocol: per validation size n, repeatedly draw n
// instances without replacement, pick the threshold minimizing their median,
// and record the full test median at that threshold. Mean quantifies the
// expected error, std the sensitivity to the validation draw.
struct SensitivityReport {
    std::vector<int> n_values;
    std::vector<double> mean_error;
    std::vector<double> std_error;
    int trials = 0;
};

inline SensitivityReport small_validation_sensitivity(const ErrorGrid &val, const ErrorGrid &test,
                                                      const std::vector<int> &n_values, int trials,
                                                      uint64_t seed) {
    if (val.thresholds != test.thresholds) {
        throw std::invalid_argument("small_validation_sensitivity: threshold grids differ");
    }
    if (trials < 1) throw std::invalid_argument("small_validation_sensitivity: trials >= 1");
    const int n_val = static_cast<int>(val.errors.rows());
    const Eigen::Index n_thresh = val.errors.cols();

    ValidationCurve test_curve = large_validation(test);

    SensitivityReport rep;
    rep.n_values = n_values;
    rep.trials = trials;
    for (size_t ni = 0; ni < n_values.size(); ++ni) {
        const int n = n_values[ni];
        if (n < 1 || n > n_val) throw std::invalid_argument("small_validation_sensitivity: bad n");
        double sum = 0.0, sum2 = 0.0;
        Rng rng(derive_seed(seed, ni));
        for (int trial = 0; trial < trials; ++trial) {
            // Partial Fisher-Yates for n distinct indices.
            std::vector<int> idx(n_val);
            for (int i = 0; i < n_val; ++i) idx[i] = i;
            for (int i = 0; i < n; ++i) {
                int j = i + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(n_val - i)));
                std::swap(idx[i], idx[j]);
            }
            int best_t = 0;
            double best_med = std::numeric_limits<double>::infinity();
            std::vector<double> col(n);
            for (Eigen::Index t = 0; t < n_thresh; ++t) {
                for (int i = 0; i < n; ++i) col[static_cast<size_t>(i)] = val.errors(idx[static_cast<size_t>(i)], t);
                double med = median_lower(col);
                if (med < best_med) {
                    best_med = med;
                    best_t = static_cast<int>(t);
                }
            }
            double e = test_curve.median_error(best_t);
            sum += e;
            sum2 += e * e;
        }
        double mean = sum / trials;
        double var = std::max(0.0, sum2 / trials - mean * mean);
        rep.mean_error.push_back(mean);
        rep.std_error.push_back(std::sqrt(var));
    }
    return rep;
}

// Least-squares fit of the Gaussian-uniform posterior to the marginalized
// density at sigma_bar = 1 over 512 points on [0, kappa], with both curves
// normalized to 1 at r = 0 so that only their shapes are compared; coarse
// grid then per-coordinate ternary refinement. sup_gap is the sup-norm
// distance between the two resulting normalized score curves on the same
// interval.
struct MagsacGauFit {
    int nu = 0;
    double kappa = 0.0;
    double tau = 0.0;
    double sigma = 0.0;
    double sup_gap = 0.0;
};

inline MagsacGauFit fit_magsac_to_gau(int nu) {
    if (nu < 2) throw std::invalid_argument("fit_magsac_to_gau: density unbounded for nu < 2");
    MagsacGauFit fit;
    fit.nu = nu;
    fit.kappa = chi_quantile(nu, 0.99);
    MarginalizedChiSpec spec(nu, fit.kappa, 1.0);

    const int n = 512;
    Eigen::VectorXd r(n), target(n);
    const double p0 = spec.density_base(0.0);
    for (int i = 0; i < n; ++i) {
        r(i) = fit.kappa * i / (n - 1);
        target(i) = spec.density_base(r(i)) / p0;
    }
    auto objective = [&](double tau, double sigma) {
        const double inv2s2 = 0.5 / (sigma * sigma);
        const double peak = sigmoid(tau * tau * inv2s2);
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            double d = sigmoid((tau * tau - r(i) * r(i)) * inv2s2) / peak - target(i);
            s += d * d;
        }
        return s;
    };

    double best = std::numeric_limits<double>::infinity();
    const double lo = 0.05 * fit.kappa, hi = fit.kappa;
    for (int i = 0; i < 64; ++i) {
        for (int j = 0; j < 64; ++j) {
            double tau = lo + (hi - lo) * i / 63.0;
            double sigma = lo + (hi - lo) * j / 63.0;
            double s = objective(tau, sigma);
            if (s < best) {
                best = s;
                fit.tau = tau;
                fit.sigma = sigma;
            }
        }
    }
    auto refine = [&](double center, auto eval) {
        double a = std::max(lo * 0.25, center - 0.1 * fit.kappa);
        double b = std::min(hi, center + 0.1 * fit.kappa);
        for (int it = 0; it < 120; ++it) {
            double m1 = a + (b - a) / 3.0, m2 = b - (b - a) / 3.0;
            if (eval(m1) < eval(m2)) b = m2; else a = m1;
        }
        return 0.5 * (a + b);
    };
    for (int round = 0; round < 4; ++round) {
        fit.tau = refine(fit.tau, [&](double x) { return objective(x, fit.sigma); });
        fit.sigma = refine(fit.sigma, [&](double x) { return objective(fit.tau, x); });
    }

    ScoreSpec magsac = ScoreSpec::magsac(fit.kappa, nu); // sigma_bar = 1
    ScoreSpec gau = ScoreSpec::gau_marginal(fit.tau, fit.sigma);
    double gap = 0.0;
    for (int i = 0; i < n; ++i) {
        gap = std::max(gap, std::abs(rho(magsac, r(i)) - rho(gau, r(i))));
    }
    fit.sup_gap = gap;
    return fit;
}

// Mean relative score Q(perturbed) / Q(ground truth) per mode and angle.
// Scores are plain sums of rho over all residuals; scenes whose ground-truth
// score falls below min_gt_score are excluded (uninformative geometry).
struct SelectivityResult {
    std::vector<PerturbMode> modes;
    std::vector<double> thetas_deg;
    Eigen::MatrixXd mean_relative; // modes x thetas
    int scenes_used = 0;
};

inline double direct_score(const ScoreSpec &spec, const GeometricModel &model,
                           const CorrespondenceSet &set) {
    double q = 0.0;
    for (const auto &c : set.points) {
        double r = sampson_residual(model, c);
        if (std::isfinite(r)) q += rho(spec, r);
    }
    return q;
}

inline SelectivityResult selectivity_experiment(const std::vector<SyntheticScene> &scenes,
                                                const ScoreSpec &spec,
                                                const std::vector<PerturbMode> &modes,
                                                const std::vector<double> &thetas_deg, uint64_t seed,
                                                double min_gt_score = 5.0) {
    SelectivityResult out;
    out.modes = modes;
    out.thetas_deg = thetas_deg;
    out.mean_relative = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(modes.size()),
                                              static_cast<Eigen::Index>(thetas_deg.size()));
    for (size_t si = 0; si < scenes.size(); ++si) {
        const SyntheticScene &scene = scenes[si];
        if (!scene.gt_pose) throw std::invalid_argument("selectivity_experiment: needs Essential scenes");
        double qgt = direct_score(spec, scene.gt_model, scene.corrs);
        if (qgt < min_gt_score) continue;
        ++out.scenes_used;
        for (size_t mi = 0; mi < modes.size(); ++mi) {
            for (size_t ti = 0; ti < thetas_deg.size(); ++ti) {
                Pose p = perturb_model(*scene.gt_pose, modes[mi], thetas_deg[ti],
                                       derive_seed(seed, (si * modes.size() + mi) * thetas_deg.size() + ti));
                double q = direct_score(spec, compose_essential(p), scene.corrs);
                out.mean_relative(static_cast<Eigen::Index>(mi), static_cast<Eigen::Index>(ti)) += q / qgt;
            }
        }
    }
    if (out.scenes_used == 0) throw std::runtime_error("selectivity_experiment: every scene filtered out");
    out.mean_relative /= static_cast<double>(out.scenes_used);
    return out;
}

// Mean inlier count (residual < tau) of models placed at prescribed pose
// errors, averaged over one shared scene set per error bin. Rotation and
// translation are both rotated by the bin angle about random axes, so the
// pose error equals the bin value exactly.
struct ConsistencyResult {
    std::vector<double> error_bins_deg;
    std::vector<double> taus;
    Eigen::MatrixXd mean_inlier_count; // bins x taus
};

inline ConsistencyResult consistency_experiment(const std::vector<SyntheticScene> &scenes,
                                                const std::vector<double> &taus,
                                                const std::vector<double> &error_bins_deg, uint64_t seed) {
    ConsistencyResult out;
    out.error_bins_deg = error_bins_deg;
    out.taus = taus;
    out.mean_inlier_count = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(error_bins_deg.size()),
                                                  static_cast<Eigen::Index>(taus.size()));
    if (scenes.empty()) throw std::invalid_argument("consistency_experiment: no scenes");
    for (size_t si = 0; si < scenes.size(); ++si) {
        const SyntheticScene &scene = scenes[si];
        if (!scene.gt_pose) throw std::invalid_argument("consistency_experiment: needs Essential scenes");
        for (size_t bi = 0; bi < error_bins_deg.size(); ++bi) {
            double theta = error_bins_deg[bi];
            Pose p = *scene.gt_pose;
            if (theta > 0.0) {
                p = perturb_model(p, PerturbMode::RandomRot, theta, derive_seed(seed, 2 * (si * error_bins_deg.size() + bi)));
                p = perturb_model(p, PerturbMode::RandomTransRot, theta, derive_seed(seed, 2 * (si * error_bins_deg.size() + bi) + 1));
            }
            Eigen::VectorXd r = residual_vector(compose_essential(p), scene.corrs);
            for (size_t ti = 0; ti < taus.size(); ++ti) {
                int count = 0;
                for (Eigen::Index i = 0; i < r.size(); ++i) {
                    if (r(i) < taus[ti]) ++count;
                }
                out.mean_inlier_count(static_cast<Eigen::Index>(bi), static_cast<Eigen::Index>(ti)) += count;
            }
        }
    }
    out.mean_inlier_count /= static_cast<double>(scenes.size());
    return out;
}

} // namespace rsf
