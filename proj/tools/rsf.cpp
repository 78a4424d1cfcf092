#include "rsf/io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace {

namespace fs = std::filesystem;
using namespace rsf;

// Usage mistakes exit with 2, runtime failures with 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

double unit_for(const SyntheticScene &scene) {
    return scene.config.kind == SceneKind::Essential ? kEssentialPixel : 1.0;
}

Method method_from_name(const std::string &name) {
    for (Method m : {Method::Ransac, Method::Msac, Method::GauMarginal, Method::GauProfile,
                     Method::MagsacPlusPlus, Method::Oracle}) {
        if (name == method_name(m)) return m;
    }
    throw UsageError("unknown method: " + name);
}

const char *mode_name(PerturbMode m) {
    switch (m) {
    case PerturbMode::Pitch: return "pitch";
    case PerturbMode::Yaw: return "yaw";
    case PerturbMode::Roll: return "roll";
    case PerturbMode::RandomRot: return "random-rot";
    case PerturbMode::RandomTransRot: return "random-trans-rot";
    }
    return "?";
}

// Scoring spec in scene units from pixel-denominated flags; sigma_px < 0
// selects the family default (sigma = tau). Table files store pixel ranges,
// so a loaded table is rescaled the same way.
ScoreSpec spec_from_flags(const std::string &family, double tau_px, double sigma_px, int nu,
                          const std::string &table_path, double unit) {
    const double tau = tau_px * unit;
    if (family == "ransac") return ScoreSpec::ransac(tau);
    if (family == "msac") return ScoreSpec::msac(tau);
    if (family == "gau-profile") return ScoreSpec::gau_profile(tau);
    if (family == "gau-marginal") {
        if (sigma_px < 0.0) return ScoreSpec::gau_marginal(tau);
        return ScoreSpec::gau_marginal(tau, sigma_px * unit);
    }
    if (family == "magsac") return ScoreSpec::magsac(tau, nu);
    if (family == "learned") {
        if (table_path.empty()) throw UsageError("--table is required for the learned family");
        ScoreTable t = score_table_from_json(read_json_file(table_path));
        t.tau_max *= unit;
        return ScoreSpec::learned(std::make_shared<ScoreTable>(std::move(t)));
    }
    throw UsageError("unknown family: " + family);
}

const std::vector<std::string> kFamilies{"ransac", "msac",   "gau-profile",
                                         "gau-marginal", "magsac", "learned"};

struct Common {
    uint64_t seed = 0;
    std::string out = ".";
    int threads = 1;
    std::string config;
    bool error_json = false;
};

// One subcommand: registered flags double as the schema of the optional JSON
// config file, and explicit flags always win over file values.
class Command {
  public:
    Command(CLI::App &app, const std::string &name, const std::string &desc)
        : cmd_(app.add_subcommand(name, desc)) {
        opt("seed", g.seed, "seed printed on every run; equal seeds give byte-identical outputs");
        opt("out", g.out, "output directory, created if missing");
        opt("threads", g.threads, "worker threads for instance-level fanout");
        cmd_->add_option("--config", g.config, "JSON file supplying defaults for any flag here");
        cmd_->add_flag("--error-json", g.error_json, "report failures as a JSON object on stderr");
    }
    virtual ~Command() = default;

    bool parsed() const { return cmd_->parsed(); }
    bool wants_error_json() const { return g.error_json; }

    void execute() {
        if (!g.config.empty()) apply_config(read_json_file(g.config));
        std::cout << "seed " << g.seed << "\n";
        fs::create_directories(g.out);
        run();
    }

  protected:
    virtual void run() = 0;

    template <typename T> CLI::Option *opt(const std::string &name, T &var, const std::string &desc) {
        CLI::Option *o = cmd_->add_option("--" + name, var, desc);
        setters_.emplace_back(name, o, [&var](const json &v) { var = v.get<T>(); });
        return o;
    }
    CLI::Option *flag(const std::string &name, bool &var, const std::string &desc) {
        CLI::Option *o = cmd_->add_flag("--" + name, var, desc);
        setters_.emplace_back(name, o, [&var](const json &v) { var = v.get<bool>(); });
        return o;
    }
    std::string out_path(const std::string &name) const { return (fs::path(g.out) / name).string(); }
    void wrote(const std::string &path) const { std::cout << "wrote " << path << "\n"; }

    Common g;
    CLI::App *cmd_;

  private:
    void apply_config(const json &cfg) {
        if (!cfg.is_object()) throw UsageError("config file must hold a JSON object");
        for (const auto &item : cfg.items()) {
            auto it = std::find_if(setters_.begin(), setters_.end(),
                                   [&](const auto &s) { return std::get<0>(s) == item.key(); });
            if (it == setters_.end()) throw UsageError("config key not recognized: " + item.key());
            if (std::get<1>(*it)->count() == 0) std::get<2>(*it)(item.value());
        }
    }

    std::vector<std::tuple<std::string, CLI::Option *, std::function<void(const json &)>>> setters_;
};

class SynthCmd : public Command {
  public:
    explicit SynthCmd(CLI::App &app) : Command(app, "synth", "generate a synthetic two-view scene") {
        opt("kind", kind_, "scene kind")->check(CLI::IsMember({"essential", "homography"}));
        opt("n", n_, "correspondence count");
        opt("gamma", gamma_, "inlier probability");
        opt("sigma", sigma_, "observation noise std in pixels");
    }

  protected:
    void run() override {
        SceneConfig cfg;
        if (kind_ == "essential") {
            cfg = essential_scene_config(n_, gamma_, sigma_, g.seed);
        } else if (kind_ == "homography") {
            cfg.kind = SceneKind::Homography;
            cfg.n = n_;
            cfg.gamma = gamma_;
            cfg.sigma = sigma_;
            cfg.seed = g.seed;
        } else {
            throw UsageError("unknown kind: " + kind_);
        }
        SyntheticScene scene = generate_scene(cfg);
        int inliers = 0;
        for (uint8_t l : scene.corrs.labels) inliers += l;
        std::cout << "scene " << kind_ << " n " << n_ << " gamma " << fmt9(gamma_) << " sigma "
                  << fmt9(sigma_) << "px inliers " << inliers << "\n";
        write_json_file(out_path("scene.json"), scene_to_json(scene));
        write_text_file(out_path("correspondences.csv"), correspondences_to_csv(scene.corrs));
        wrote(out_path("scene.json"));
        wrote(out_path("correspondences.csv"));
    }

  private:
    std::string kind_ = "essential";
    int n_ = 500;
    double gamma_ = 0.8;
    double sigma_ = 1.0;
};

class PoolCmd : public Command {
  public:
    explicit PoolCmd(CLI::App &app)
        : Command(app, "pool", "sample a candidate-model pool for a stored scene") {
        opt("scene", scene_, "scene JSON path");
        opt("m", m_, "pool size");
        opt("perturbation", perturbation_, "fraction of models perturbed from ground truth");
        opt("perturb-theta-max", theta_max_, "largest perturbation angle in degrees");
        flag("ground-truth", ground_truth_, "append the ground-truth model");
    }

  protected:
    void run() override {
        if (scene_.empty()) throw UsageError("--scene is required");
        SyntheticScene scene = scene_from_json(read_json_file(scene_));
        PoolMix mix;
        mix.perturbation = perturbation_;
        mix.ground_truth = ground_truth_;
        mix.perturb_theta_max = theta_max_;
        ModelPool pool = generate_pool(scene, m_, mix, g.seed);
        int counts[3] = {0, 0, 0};
        for (ModelProvenance p : pool.provenance) ++counts[static_cast<int>(p)];
        std::cout << "pool " << pool.size() << " models: minimal " << counts[0] << " perturbation "
                  << counts[1] << " ground-truth " << counts[2] << "\n";
        write_json_file(out_path("pool.json"), pool_to_json(pool));
        wrote(out_path("pool.json"));
    }

  private:
    std::string scene_;
    int m_ = 1000;
    double perturbation_ = 0.0;
    double theta_max_ = 10.0;
    bool ground_truth_ = false;
};

class ScoreCmd : public Command {
  public:
    explicit ScoreCmd(CLI::App &app)
        : Command(app, "score", "score every pool model against a scene") {
        opt("scene", scene_, "scene JSON path");
        opt("pool", pool_, "pool JSON path");
        opt("family", family_, "scoring function")->check(CLI::IsMember(kFamilies));
        opt("tau", tau_, "decision threshold in pixels");
        opt("sigma", sigma_, "inlier scale in pixels; negative means sigma = tau");
        opt("nu", nu_, "degrees of freedom for the magsac family");
        opt("table", table_, "learned score table JSON (learned family)");
    }

  protected:
    void run() override {
        if (scene_.empty() || pool_.empty()) throw UsageError("--scene and --pool are required");
        SyntheticScene scene = scene_from_json(read_json_file(scene_));
        ModelPool pool = pool_from_json(read_json_file(pool_));
        if (pool.size() == 0) throw std::runtime_error("pool is empty");
        ScoreSpec spec = spec_from_flags(family_, tau_, sigma_, nu_, table_, unit_for(scene));
        Eigen::VectorXd q(static_cast<Eigen::Index>(pool.size()));
        for (size_t j = 0; j < pool.size(); ++j) {
            q(static_cast<Eigen::Index>(j)) = direct_score(spec, pool.models[j], scene.corrs);
        }
        std::ostringstream csv;
        csv << "model,score\n";
        for (Eigen::Index j = 0; j < q.size(); ++j) csv << j << ',' << fmt9(q(j)) << '\n';
        write_text_file(out_path("scores.csv"), csv.str());
        int best = detail::argmax_lowest(q);
        std::cout << "best model " << best << " score " << fmt9(q(best)) << "\n";
        wrote(out_path("scores.csv"));
    }

  private:
    std::string scene_, pool_, table_;
    std::string family_ = "msac";
    double tau_ = 1.0;
    double sigma_ = -1.0;
    int nu_ = 4;
};

class SweepCmd : public Command {
  public:
    explicit SweepCmd(CLI::App &app)
        : Command(app, "sweep",
                  "threshold sweep over scene/pool pairs: error grids, validation curves, "
                  "chosen thresholds") {
        opt("scene", scenes_, "scene JSON paths, one per instance");
        opt("pool", pools_, "pool JSON paths, matched to --scene by position");
        opt("method", methods_, "scoring methods to sweep");
        opt("t-count", t_count_, "threshold count");
        opt("t-lo", t_lo_, "lowest threshold in pixels");
        opt("t-hi", t_hi_, "highest threshold in pixels");
        opt("tau-max", tau_max_, "histogram support in pixels");
        opt("bins", bins_, "histogram bins");
        opt("nu", nu_, "magsac degrees of freedom");
        opt("sigma-over-tau", sigma_over_tau_, "gau-marginal sigma as a fraction of tau");
    }

  protected:
    void run() override {
        if (scenes_.empty()) throw UsageError("--scene is required at least once");
        if (scenes_.size() != pools_.size()) {
            throw UsageError("--scene and --pool counts differ");
        }
        std::vector<SyntheticScene> scenes;
        std::vector<ModelPool> pools;
        for (size_t i = 0; i < scenes_.size(); ++i) {
            scenes.push_back(scene_from_json(read_json_file(scenes_[i])));
            pools.push_back(pool_from_json(read_json_file(pools_[i])));
            if (scenes.back().config.kind != scenes.front().config.kind) {
                throw std::runtime_error("scenes mix kinds; thresholds would be ambiguous");
            }
        }
        GridOptions opt;
        opt.tau_max = tau_max_;
        opt.bins = bins_;
        opt.nu = nu_;
        opt.sigma_over_tau = sigma_over_tau_;
        opt.residual_unit = unit_for(scenes.front());
        opt.threads = g.threads;
        std::vector<double> thresholds = default_thresholds(t_count_, t_lo_, t_hi_);

        json chosen = json::object();
        for (const std::string &name : methods_) {
            ErrorGrid grid = precompute_error_grid(scenes, pools, method_from_name(name), thresholds, opt);
            write_text_file(out_path("grid_" + name + ".csv"), error_grid_to_csv(grid));
            write_json_file(out_path("grid_" + name + ".json"), error_grid_header_to_json(grid));
            ValidationCurve curve = large_validation(grid);
            std::ostringstream c;
            c << "threshold,median_error\n";
            for (size_t t = 0; t < curve.thresholds.size(); ++t) {
                c << fmt9(curve.thresholds[t]) << ','
                  << fmt9(curve.median_error(static_cast<Eigen::Index>(t))) << '\n';
            }
            write_text_file(out_path("curve_" + name + ".csv"), c.str());
            chosen[name] = json{{"threshold", thresholds[static_cast<size_t>(curve.best_index)]},
                                {"median_error", curve.median_error(curve.best_index)}};
            std::cout << "method " << name << " threshold "
                      << fmt9(thresholds[static_cast<size_t>(curve.best_index)]) << " median_error "
                      << fmt9(curve.median_error(curve.best_index)) << "\n";
        }
        write_json_file(out_path("chosen.json"), chosen);
        wrote(out_path("chosen.json"));
    }

  private:
    std::vector<std::string> scenes_, pools_;
    std::vector<std::string> methods_{"msac"};
    int t_count_ = 200;
    double t_lo_ = 0.1;
    double t_hi_ = 10.0;
    double tau_max_ = 20.0;
    int bins_ = 500;
    int nu_ = 4;
    double sigma_over_tau_ = 1.0;
};

class LoCmd : public Command {
  public:
    explicit LoCmd(CLI::App &app)
        : Command(app, "lo", "locally optimize the best-scored pool model, with trace output") {
        opt("scene", scene_, "scene JSON path (essential)");
        opt("pool", pool_, "pool JSON path");
        opt("family", family_, "scoring function")->check(CLI::IsMember(kFamilies));
        opt("tau", tau_, "decision threshold in pixels");
        opt("sigma", sigma_, "inlier scale in pixels; negative means sigma = tau");
        opt("nu", nu_, "degrees of freedom for the magsac family");
        opt("table", table_, "learned score table JSON (learned family)");
        opt("max-iter", max_iter_, "outer iterations");
    }

  protected:
    void run() override {
        if (scene_.empty() || pool_.empty()) throw UsageError("--scene and --pool are required");
        SyntheticScene scene = scene_from_json(read_json_file(scene_));
        if (!scene.gt_pose) {
            throw std::runtime_error("local optimization needs an essential scene with a stored pose");
        }
        ModelPool pool = pool_from_json(read_json_file(pool_));
        if (pool.size() == 0) throw std::runtime_error("pool is empty");
        ScoreSpec spec = spec_from_flags(family_, tau_, sigma_, nu_, table_, unit_for(scene));

        int best = 0;
        double best_q = -std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < pool.size(); ++j) {
            double q = direct_score(spec, pool.models[j], scene.corrs);
            if (q > best_q) {
                best_q = q;
                best = static_cast<int>(j);
            }
        }
        Pose start = decompose_essential(pool.models[static_cast<size_t>(best)], *scene.gt_pose);
        LmaConfig cfg;
        cfg.max_iter = max_iter_;
        auto [pose, trace] = irls_lma(spec, start, scene.corrs, cfg);

        std::cout << "start model " << best << " error " << fmt9(pose_error(start, *scene.gt_pose).e)
                  << "deg final error " << fmt9(pose_error(pose, *scene.gt_pose).e) << "deg iters "
                  << trace.iters.size() << "\n";
        write_text_file(out_path("lo_trace.csv"), trace_to_csv(trace));
        write_json_file(out_path("lo_pose.json"), pose_to_json(pose));
        write_json_file(out_path("lo_model.json"), model_to_json(compose_essential(pose)));
        wrote(out_path("lo_trace.csv"));
        wrote(out_path("lo_pose.json"));
        wrote(out_path("lo_model.json"));
    }

  private:
    std::string scene_, pool_, table_;
    std::string family_ = "gau-marginal";
    double tau_ = 3.0;
    double sigma_ = -1.0;
    int nu_ = 4;
    int max_iter_ = 25;
};

class LearnCmd : public Command {
  public:
    explicit LearnCmd(CLI::App &app)
        : Command(app, "learn",
                  "fit a monotone inlier density to ground-truth residuals and emit a score table") {
        opt("scene", scene_, "scene JSON path");
        opt("gamma", gamma_, "mixture inlier fraction; negative means the scene's value");
        opt("r-max", r_max_, "outlier support in pixels");
        opt("tau-max", tau_max_, "histogram and table range in pixels");
        opt("bins", bins_, "histogram bins, also the table size");
    }

  protected:
    void run() override {
        if (scene_.empty()) throw UsageError("--scene is required");
        SyntheticScene scene = scene_from_json(read_json_file(scene_));
        const double gamma = gamma_ > 0.0 ? gamma_ : scene.config.gamma;
        Eigen::VectorXd r = residual_vector(scene.gt_model, scene.corrs) / unit_for(scene);
        ResidualHistogram hist = histogram_residuals(r, tau_max_, bins_);
        MonotoneDensityParams params = fit_inlier_density(hist, gamma, r_max_);
        LearnedTable learned = learned_score_table(params);
        std::optional<double> tau_eq = equivalent_threshold(params);

        std::cout << "gamma " << fmt9(gamma) << " equivalent_threshold "
                  << (tau_eq ? fmt9(*tau_eq) + "px" : std::string("none")) << " informative "
                  << (learned.informative ? "yes" : "no") << "\n";
        write_json_file(out_path("density.json"), density_params_to_json(params));
        json table = score_table_to_json(learned.table);
        table["informative"] = learned.informative;
        write_json_file(out_path("table.json"), table);
        wrote(out_path("density.json"));
        wrote(out_path("table.json"));
    }

  private:
    std::string scene_;
    double gamma_ = -1.0;
    double r_max_ = 100.0;
    double tau_max_ = 10.0;
    int bins_ = 500;
};

class MagsacFitCmd : public Command {
  public:
    explicit MagsacFitCmd(CLI::App &app)
        : Command(app, "magsac-fit",
                  "fit the Gaussian-uniform posterior to the marginalized chi density") {
        opt("nu", nus_, "degrees of freedom to fit");
    }

  protected:
    void run() override {
        json fits = json::array();
        for (int nu : nus_) {
            MagsacGauFit f = fit_magsac_to_gau(nu);
            fits.push_back(json{{"nu", f.nu},
                                {"kappa", f.kappa},
                                {"tau", f.tau},
                                {"sigma", f.sigma},
                                {"sup_gap", f.sup_gap}});
            std::cout << "nu " << f.nu << " kappa " << fmt9(f.kappa) << " tau " << fmt9(f.tau)
                      << " sigma " << fmt9(f.sigma) << " sup_gap " << fmt9(f.sup_gap) << "\n";
        }
        write_json_file(out_path("magsac_fit.json"), json{{"fits", fits}});
        wrote(out_path("magsac_fit.json"));
    }

  private:
    std::vector<int> nus_{4, 6, 8};
};

class SensitivityCmd : public Command {
  public:
    explicit SensitivityCmd(CLI::App &app)
        : Command(app, "sensitivity",
                  "expected test error and spread of threshold choices from small validation sets") {
        opt("val-header", val_header_, "validation grid header JSON");
        opt("val-csv", val_csv_, "validation grid CSV");
        opt("test-header", test_header_, "test grid header JSON");
        opt("test-csv", test_csv_, "test grid CSV");
        opt("n", n_values_, "validation sizes to probe");
        opt("trials", trials_, "random validation draws per size");
    }

  protected:
    void run() override {
        if (val_header_.empty() || val_csv_.empty() || test_header_.empty() || test_csv_.empty()) {
            throw UsageError("--val-header, --val-csv, --test-header, --test-csv are required");
        }
        ErrorGrid val = error_grid_from_files(read_json_file(val_header_), read_text_file(val_csv_));
        ErrorGrid test = error_grid_from_files(read_json_file(test_header_), read_text_file(test_csv_));
        SensitivityReport rep = small_validation_sensitivity(val, test, n_values_, trials_, g.seed);
        std::ostringstream csv;
        csv << "n,mean,std\n";
        for (size_t i = 0; i < rep.n_values.size(); ++i) {
            csv << rep.n_values[i] << ',' << fmt9(rep.mean_error[i]) << ',' << fmt9(rep.std_error[i])
                << '\n';
            std::cout << "n " << rep.n_values[i] << " mean " << fmt9(rep.mean_error[i]) << " std "
                      << fmt9(rep.std_error[i]) << "\n";
        }
        write_text_file(out_path("sensitivity.csv"), csv.str());
        wrote(out_path("sensitivity.csv"));
    }

  private:
    std::string val_header_, val_csv_, test_header_, test_csv_;
    std::vector<int> n_values_{5, 10, 20};
    int trials_ = 200;
};

// Selectivity and consistency run over freshly generated scene batches; the
// batch is fully determined by the printed seed.
class SelectivityCmd : public Command {
  public:
    explicit SelectivityCmd(CLI::App &app)
        : Command(app, "selectivity",
                  "relative score of perturbed ground truth per perturbation mode and angle") {
        opt("scenes", scene_count_, "number of generated essential scenes");
        opt("n", n_, "correspondences per scene");
        opt("gamma", gamma_, "inlier probability");
        opt("sigma", sigma_, "observation noise std in pixels");
        opt("family", family_, "scoring function")->check(CLI::IsMember(kFamilies));
        opt("tau", tau_, "decision threshold in pixels");
        opt("score-sigma", score_sigma_, "inlier scale in pixels; negative means sigma = tau");
        opt("nu", nu_, "degrees of freedom for the magsac family");
        opt("table", table_, "learned score table JSON (learned family)");
        opt("thetas", thetas_, "perturbation angles in degrees");
        opt("min-gt-score", min_gt_score_, "drop scenes whose ground-truth score is lower");
    }

  protected:
    void run() override {
        std::vector<SyntheticScene> scenes;
        for (int i = 0; i < scene_count_; ++i) {
            scenes.push_back(generate_scene(
                essential_scene_config(n_, gamma_, sigma_, g.seed + static_cast<uint64_t>(i))));
        }
        ScoreSpec spec = spec_from_flags(family_, tau_, score_sigma_, nu_, table_, kEssentialPixel);
        std::vector<PerturbMode> modes{PerturbMode::Pitch, PerturbMode::Yaw, PerturbMode::Roll,
                                       PerturbMode::RandomRot, PerturbMode::RandomTransRot};
        SelectivityResult res = selectivity_experiment(scenes, spec, modes, thetas_, g.seed,
                                                       min_gt_score_);
        std::ostringstream csv;
        csv << "mode,theta_deg,mean_relative\n";
        std::cout << "scenes_used " << res.scenes_used << "\n";
        for (size_t mi = 0; mi < modes.size(); ++mi) {
            std::cout << mode_name(modes[mi]) << ":";
            for (size_t ti = 0; ti < thetas_.size(); ++ti) {
                double v = res.mean_relative(static_cast<Eigen::Index>(mi), static_cast<Eigen::Index>(ti));
                csv << mode_name(modes[mi]) << ',' << fmt9(thetas_[ti]) << ',' << fmt9(v) << '\n';
                std::cout << ' ' << fmt9(v);
            }
            std::cout << "\n";
        }
        write_text_file(out_path("selectivity.csv"), csv.str());
        wrote(out_path("selectivity.csv"));
    }

  private:
    int scene_count_ = 120;
    int n_ = 300;
    double gamma_ = 0.85;
    double sigma_ = 1.0;
    std::string family_ = "gau-marginal";
    double tau_ = 3.0;
    double score_sigma_ = -1.0;
    int nu_ = 4;
    std::string table_;
    std::vector<double> thetas_{0.0, 2.0, 5.0, 10.0, 20.0};
    double min_gt_score_ = 5.0;
};

class ConsistencyCmd : public Command {
  public:
    explicit ConsistencyCmd(CLI::App &app)
        : Command(app, "consistency",
                  "mean inlier count of models placed at prescribed pose errors") {
        opt("scenes", scene_count_, "number of generated essential scenes");
        opt("n", n_, "correspondences per scene");
        opt("gamma", gamma_, "inlier probability");
        opt("sigma", sigma_, "observation noise std in pixels");
        opt("taus", taus_, "inlier thresholds in pixels");
        opt("bins", bins_, "pose-error bins in degrees");
    }

  protected:
    void run() override {
        std::vector<SyntheticScene> scenes;
        for (int i = 0; i < scene_count_; ++i) {
            scenes.push_back(generate_scene(
                essential_scene_config(n_, gamma_, sigma_, g.seed + static_cast<uint64_t>(i))));
        }
        std::vector<double> taus_scene(taus_.size());
        for (size_t i = 0; i < taus_.size(); ++i) taus_scene[i] = taus_[i] * kEssentialPixel;
        ConsistencyResult res = consistency_experiment(scenes, taus_scene, bins_, g.seed);
        std::ostringstream csv;
        csv << "error_bin_deg,tau_px,mean_inlier_count\n";
        for (size_t bi = 0; bi < bins_.size(); ++bi) {
            std::cout << "bin " << fmt9(bins_[bi]) << "deg:";
            for (size_t ti = 0; ti < taus_.size(); ++ti) {
                double v = res.mean_inlier_count(static_cast<Eigen::Index>(bi), static_cast<Eigen::Index>(ti));
                csv << fmt9(bins_[bi]) << ',' << fmt9(taus_[ti]) << ',' << fmt9(v) << '\n';
                std::cout << ' ' << fmt9(v);
            }
            std::cout << "\n";
        }
        write_text_file(out_path("consistency.csv"), csv.str());
        wrote(out_path("consistency.csv"));
    }

  private:
    int scene_count_ = 120;
    int n_ = 300;
    double gamma_ = 0.85;
    double sigma_ = 1.0;
    std::vector<double> taus_{0.5, 1.0, 2.0, 5.0, 10.0};
    std::vector<double> bins_{0.0, 2.0, 5.0, 10.0, 20.0};
};

class ReportCmd : public Command {
  public:
    explicit ReportCmd(CLI::App &app)
        : Command(app, "report", "aggregate stored error grids into one summary JSON") {
        opt("grids", grids_, "directory scanned for grid_*.json headers with matching CSVs");
        opt("cap", cap_, "pose-error cap in degrees for mean average accuracy");
        opt("sens-n", sens_n_, "validation size for the sensitivity section; 0 means half");
        opt("trials", trials_, "sensitivity trials");
        flag("no-fit", no_fit_, "skip the chi-density fit section");
    }

  protected:
    void run() override {
        std::vector<fs::path> headers;
        if (fs::is_directory(grids_)) {
            for (const auto &entry : fs::directory_iterator(grids_)) {
                const std::string name = entry.path().filename().string();
                if (name.rfind("grid_", 0) == 0 && entry.path().extension() == ".json") {
                    headers.push_back(entry.path());
                }
            }
        }
        std::sort(headers.begin(), headers.end());
        if (headers.empty()) {
            throw std::runtime_error("no grid headers (grid_*.json) found in " + grids_);
        }
        std::vector<std::string> missing;
        for (const fs::path &h : headers) {
            fs::path csv = h;
            csv.replace_extension(".csv");
            if (!fs::exists(csv)) missing.push_back(csv.string());
        }
        if (!missing.empty()) {
            std::string msg = "missing grid CSVs:";
            for (const std::string &m : missing) msg += " " + m;
            throw std::runtime_error(msg);
        }

        json methods = json::object();
        for (const fs::path &h : headers) {
            fs::path csv = h;
            csv.replace_extension(".csv");
            ErrorGrid grid = error_grid_from_files(read_json_file(h.string()),
                                                   read_text_file(csv.string()));
            ValidationCurve curve = large_validation(grid);
            std::vector<double> best_col(static_cast<size_t>(grid.errors.rows()));
            for (Eigen::Index i = 0; i < grid.errors.rows(); ++i) {
                best_col[static_cast<size_t>(i)] = grid.errors(i, curve.best_index);
            }
            auto [median, maa] = median_and_maa(best_col, cap_);
            int ns = sens_n_ > 0 ? sens_n_
                                 : std::max(1, static_cast<int>(grid.errors.rows()) / 2);
            SensitivityReport rep = small_validation_sensitivity(grid, grid, {ns}, trials_, g.seed);
            methods[grid.method] =
                json{{"threshold", grid.thresholds[static_cast<size_t>(curve.best_index)]},
                     {"median", median},
                     {"maa", maa},
                     {"sensitivity",
                      json{{"n", ns}, {"mean", rep.mean_error[0]}, {"std", rep.std_error[0]}}}};
            std::cout << "method " << grid.method << " threshold "
                      << fmt9(grid.thresholds[static_cast<size_t>(curve.best_index)]) << " median "
                      << fmt9(median) << " maa " << fmt9(maa) << " sens_std "
                      << fmt9(rep.std_error[0]) << "\n";
        }
        json out{{"methods", methods}};
        if (!no_fit_) {
            json fits = json::array();
            for (int nu : {4, 6, 8}) {
                MagsacGauFit f = fit_magsac_to_gau(nu);
                fits.push_back(json{{"nu", f.nu},
                                    {"kappa", f.kappa},
                                    {"tau", f.tau},
                                    {"sigma", f.sigma},
                                    {"sup_gap", f.sup_gap}});
                std::cout << "fit nu " << f.nu << " tau " << fmt9(f.tau) << " sigma "
                          << fmt9(f.sigma) << "\n";
            }
            out["magsac_fit"] = fits;
        }
        write_json_file(out_path("report.json"), out);
        wrote(out_path("report.json"));
    }

  private:
    std::string grids_ = ".";
    double cap_ = 10.0;
    int sens_n_ = 0;
    int trials_ = 200;
    bool no_fit_ = false;
};

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"scoring functions for robust two-view estimation: synthetic scenes, threshold "
                 "sweeps, local optimization, and evaluation reports"};
    app.require_subcommand(1);

    std::vector<std::unique_ptr<Command>> commands;
    commands.push_back(std::make_unique<SynthCmd>(app));
    commands.push_back(std::make_unique<PoolCmd>(app));
    commands.push_back(std::make_unique<ScoreCmd>(app));
    commands.push_back(std::make_unique<SweepCmd>(app));
    commands.push_back(std::make_unique<LoCmd>(app));
    commands.push_back(std::make_unique<LearnCmd>(app));
    commands.push_back(std::make_unique<MagsacFitCmd>(app));
    commands.push_back(std::make_unique<SensitivityCmd>(app));
    commands.push_back(std::make_unique<SelectivityCmd>(app));
    commands.push_back(std::make_unique<ConsistencyCmd>(app));
    commands.push_back(std::make_unique<ReportCmd>(app));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    Command *active = nullptr;
    for (const auto &c : commands) {
        if (c->parsed()) active = c.get();
    }
    if (active == nullptr) {
        std::cerr << app.help();
        return 2;
    }
    try {
        active->execute();
    } catch (const UsageError &e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception &e) {
        if (active->wants_error_json()) {
            std::cerr << rsf::json{{"error", e.what()}}.dump() << "\n";
        } else {
            std::cerr << "error: " << e.what() << "\n";
        }
        return 1;
    }
    return 0;
}
