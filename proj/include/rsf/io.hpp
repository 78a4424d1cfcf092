#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsf/evalharness.hpp"
#include "rsf/geometry.hpp"
#include "rsf/learnscore.hpp"
#include "rsf/localopt.hpp"
#include "rsf/scoring.hpp"
#include "rsf/synth.hpp"

namespace rsf {

using json = nlohmann::json;

// Text outputs round floating point to 9 significant digits so reruns diff
// cleanly; JSON keeps full round-trip precision for values meant to be re-read.
inline std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline void write_text_file(const std::string &path, const std::string &content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::string read_text_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline json read_json_file(const std::string &path) { return json::parse(read_text_file(path)); }

inline void write_json_file(const std::string &path, const json &j) {
    write_text_file(path, j.dump(2) + "\n");
}

// --- models ---------------------------------------------------------------

inline std::string model_kind_name(ModelKind k) {
    switch (k) {
    case ModelKind::Homography: return "homography";
    case ModelKind::Essential: return "essential";
    case ModelKind::Fundamental: return "fundamental";
    }
    return "?";
}

inline ModelKind model_kind_from_name(const std::string &s) {
    if (s == "homography") return ModelKind::Homography;
    if (s == "essential") return ModelKind::Essential;
    if (s == "fundamental") return ModelKind::Fundamental;
    throw std::invalid_argument("unknown model kind: " + s);
}

inline json model_to_json(const GeometricModel &m) {
    std::vector<double> vals(9);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) vals[static_cast<size_t>(3 * i + j)] = m.m(i, j);
    return json{{"kind", model_kind_name(m.kind)}, {"matrix", vals}};
}

inline GeometricModel model_from_json(const json &j) {
    GeometricModel m;
    m.kind = model_kind_from_name(j.at("kind").get<std::string>());
    const auto vals = j.at("matrix").get<std::vector<double>>();
    if (vals.size() != 9) throw std::invalid_argument("model matrix needs 9 row-major values");
    for (int i = 0; i < 3; ++i)
        for (int jj = 0; jj < 3; ++jj) m.m(i, jj) = vals[static_cast<size_t>(3 * i + jj)];
    return m;
}

inline json pose_to_json(const Pose &p) {
    return json{{"q", {p.q(0), p.q(1), p.q(2), p.q(3)}}, {"t", {p.t(0), p.t(1), p.t(2)}}};
}

inline Pose pose_from_json(const json &j) {
    Pose p;
    const auto q = j.at("q").get<std::vector<double>>();
    const auto t = j.at("t").get<std::vector<double>>();
    if (q.size() != 4 || t.size() != 3) throw std::invalid_argument("pose needs q[4], t[3]");
    p.q = Eigen::Vector4d(q[0], q[1], q[2], q[3]);
    p.t = Eigen::Vector3d(t[0], t[1], t[2]);
    p.renormalize();
    return p;
}

// --- correspondences ------------------------------------------------------

// CSV columns u_x,u_y,v_x,v_y plus label when the set carries labels.
inline std::string correspondences_to_csv(const CorrespondenceSet &set) {
    std::ostringstream out;
    const bool lab = set.has_labels();
    out << (lab ? "u_x,u_y,v_x,v_y,label\n" : "u_x,u_y,v_x,v_y\n");
    for (size_t i = 0; i < set.size(); ++i) {
        const Correspondence &c = set.points[i];
        out << fmt9(c.u.x()) << ',' << fmt9(c.u.y()) << ',' << fmt9(c.v.x()) << ',' << fmt9(c.v.y());
        if (lab) out << ',' << static_cast<int>(set.labels[i]);
        out << '\n';
    }
    return out.str();
}

inline CorrespondenceSet correspondences_from_csv(const std::string &text) {
    CorrespondenceSet set;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (first) {
            first = false;
            char *end = nullptr;
            std::strtod(cells[0].c_str(), &end);
            if (end == cells[0].c_str()) continue; // header row
        }
        if (cells.size() != 4 && cells.size() != 5) {
            throw std::invalid_argument("correspondence CSV rows need 4 or 5 columns");
        }
        Correspondence c;
        c.u = Eigen::Vector2d(std::stod(cells[0]), std::stod(cells[1]));
        c.v = Eigen::Vector2d(std::stod(cells[2]), std::stod(cells[3]));
        set.points.push_back(c);
        if (cells.size() == 5) set.labels.push_back(static_cast<uint8_t>(std::stoi(cells[4]) != 0));
    }
    if (!set.labels.empty() && set.labels.size() != set.points.size()) {
        throw std::invalid_argument("correspondence CSV mixes labeled and unlabeled rows");
    }
    return set;
}

// --- scenes ---------------------------------------------------------------

inline json scene_config_to_json(const SceneConfig &c) {
    return json{{"kind", c.kind == SceneKind::Homography ? "homography" : "essential"},
                {"n", c.n},
                {"gamma", c.gamma},
                {"sigma", c.sigma},
                {"image_extent", c.image_extent},
                {"seed", c.seed}};
}

inline SceneConfig scene_config_from_json(const json &j) {
    SceneConfig c;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "homography") c.kind = SceneKind::Homography;
    else if (kind == "essential") c.kind = SceneKind::Essential;
    else throw std::invalid_argument("unknown scene kind: " + kind);
    c.n = j.at("n").get<int>();
    c.gamma = j.at("gamma").get<double>();
    c.sigma = j.at("sigma").get<double>();
    c.image_extent = j.at("image_extent").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

inline json scene_to_json(const SyntheticScene &s) {
    json j{{"config", scene_config_to_json(s.config)}, {"gt_model", model_to_json(s.gt_model)}};
    if (s.gt_pose) j["gt_pose"] = pose_to_json(*s.gt_pose);
    json pts = json::array();
    for (size_t i = 0; i < s.corrs.size(); ++i) {
        const Correspondence &c = s.corrs.points[i];
        pts.push_back({c.u.x(), c.u.y(), c.v.x(), c.v.y()});
    }
    j["correspondences"] = pts;
    if (s.corrs.has_labels()) {
        std::vector<int> lab(s.corrs.labels.begin(), s.corrs.labels.end());
        j["labels"] = lab;
    }
    return j;
}

inline SyntheticScene scene_from_json(const json &j) {
    SyntheticScene s;
    s.config = scene_config_from_json(j.at("config"));
    s.gt_model = model_from_json(j.at("gt_model"));
    if (j.contains("gt_pose")) s.gt_pose = pose_from_json(j.at("gt_pose"));
    for (const auto &row : j.at("correspondences")) {
        const auto vals = row.get<std::vector<double>>();
        if (vals.size() != 4) throw std::invalid_argument("correspondence rows need 4 values");
        s.corrs.points.push_back({Eigen::Vector2d(vals[0], vals[1]), Eigen::Vector2d(vals[2], vals[3])});
    }
    if (j.contains("labels")) {
        for (int v : j.at("labels").get<std::vector<int>>()) {
            s.corrs.labels.push_back(static_cast<uint8_t>(v != 0));
        }
        if (s.corrs.labels.size() != s.corrs.points.size()) {
            throw std::invalid_argument("labels/correspondences length mismatch");
        }
    }
    return s;
}

// --- pools ----------------------------------------------------------------

inline const char *provenance_name(ModelProvenance p) {
    switch (p) {
    case ModelProvenance::MinimalSample: return "minimal";
    case ModelProvenance::Perturbation: return "perturbation";
    case ModelProvenance::GroundTruth: return "ground-truth";
    }
    return "?";
}

inline ModelProvenance provenance_from_name(const std::string &s) {
    if (s == "minimal") return ModelProvenance::MinimalSample;
    if (s == "perturbation") return ModelProvenance::Perturbation;
    if (s == "ground-truth") return ModelProvenance::GroundTruth;
    throw std::invalid_argument("unknown provenance: " + s);
}

inline json pool_to_json(const ModelPool &pool) {
    json models = json::array();
    for (size_t i = 0; i < pool.size(); ++i) {
        json m = model_to_json(pool.models[i]);
        m["provenance"] = provenance_name(pool.provenance[i]);
        models.push_back(std::move(m));
    }
    return json{{"models", models}};
}

inline ModelPool pool_from_json(const json &j) {
    ModelPool pool;
    for (const auto &m : j.at("models")) {
        pool.models.push_back(model_from_json(m));
        pool.provenance.push_back(provenance_from_name(m.at("provenance").get<std::string>()));
    }
    return pool;
}

// --- learned densities and score tables -----------------------------------

inline json density_params_to_json(const MonotoneDensityParams &p) {
    std::vector<double> eta(p.eta.data(), p.eta.data() + p.eta.size());
    return json{{"eta", eta}, {"gamma", p.gamma}, {"r_max", p.r_max}, {"tau_max", p.tau_max}};
}

inline MonotoneDensityParams density_params_from_json(const json &j) {
    MonotoneDensityParams p;
    const auto eta = j.at("eta").get<std::vector<double>>();
    p.eta = Eigen::Map<const Eigen::VectorXd>(eta.data(), static_cast<Eigen::Index>(eta.size()));
    p.gamma = j.at("gamma").get<double>();
    p.r_max = j.at("r_max").get<double>();
    p.tau_max = j.at("tau_max").get<double>();
    return p;
}

inline json score_table_to_json(const ScoreTable &t) {
    std::vector<double> w(t.weights.data(), t.weights.data() + t.weights.size());
    return json{{"tau_max", t.tau_max}, {"K", t.bins}, {"weights", w}};
}

inline ScoreTable score_table_from_json(const json &j) {
    ScoreTable t;
    t.tau_max = j.at("tau_max").get<double>();
    t.bins = j.at("K").get<int>();
    const auto w = j.at("weights").get<std::vector<double>>();
    if (static_cast<int>(w.size()) != t.bins) throw std::invalid_argument("score table weights/K mismatch");
    t.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    return t;
}

// --- sweeps, traces, grids ------------------------------------------------

inline std::string sweep_to_csv(const std::vector<double> &thresholds, const Eigen::VectorXd &scores) {
    if (static_cast<Eigen::Index>(thresholds.size()) != scores.size()) {
        throw std::invalid_argument("sweep_to_csv: size mismatch");
    }
    std::ostringstream out;
    out << "threshold,score\n";
    for (size_t i = 0; i < thresholds.size(); ++i) {
        out << fmt9(thresholds[i]) << ',' << fmt9(scores(static_cast<Eigen::Index>(i))) << '\n';
    }
    return out.str();
}

inline std::string trace_to_csv(const OptTrace &trace) {
    std::ostringstream out;
    out << "iter,objective,step_norm,accepted\n";
    for (const OptIter &it : trace.iters) {
        out << it.iter << ',' << fmt9(it.objective_after) << ',' << fmt9(it.step_norm) << ','
            << (it.accepted ? 1 : 0) << '\n';
    }
    return out.str();
}

inline std::string error_grid_to_csv(const ErrorGrid &grid) {
    std::ostringstream out;
    out << "instance,threshold,error\n";
    for (Eigen::Index i = 0; i < grid.errors.rows(); ++i) {
        for (Eigen::Index t = 0; t < grid.errors.cols(); ++t) {
            out << i << ',' << fmt9(grid.thresholds[static_cast<size_t>(t)]) << ','
                << fmt9(grid.errors(i, t)) << '\n';
        }
    }
    return out.str();
}

inline json error_grid_header_to_json(const ErrorGrid &grid) {
    return json{{"method", grid.method},
                {"instances", grid.errors.rows()},
                {"thresholds", grid.thresholds}};
}

inline ErrorGrid error_grid_from_files(const json &header, const std::string &csv) {
    ErrorGrid grid;
    grid.method = header.at("method").get<std::string>();
    grid.thresholds = header.at("thresholds").get<std::vector<double>>();
    const Eigen::Index rows = header.at("instances").get<Eigen::Index>();
    const Eigen::Index cols = static_cast<Eigen::Index>(grid.thresholds.size());
    grid.errors.resize(rows, cols);
    grid.errors.setConstant(std::numeric_limits<double>::quiet_NaN());
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line); // header
    Eigen::Index i = 0, t = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string a, b, c;
        std::getline(ls, a, ',');
        std::getline(ls, b, ',');
        std::getline(ls, c, ',');
        i = std::stol(a);
        if (i < 0 || i >= rows || t >= cols) throw std::invalid_argument("error grid CSV out of range");
        grid.errors(i, t) = std::stod(c);
        t = (t + 1) % cols;
    }
    if (!grid.errors.allFinite()) throw std::invalid_argument("error grid CSV incomplete");
    return grid;
}

} // namespace rsf
