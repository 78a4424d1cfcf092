#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "rsf/geometry.hpp"
#include "rsf/random.hpp"

namespace rsf {

enum class SceneKind { Homography, Essential };

struct SceneConfig {
    SceneKind kind = SceneKind::Essential;
    int n = 500;               // number of correspondences
    double gamma = 0.8;        // inlier probability per correspondence
    double sigma = 1.0;        // isotropic noise in R^4, same unit as coordinates
    double image_extent = 1000.0; // both views cover [-extent/2, extent/2]^2
    uint64_t seed = 0;
};

struct SyntheticScene {
    SceneConfig config;
    GeometricModel gt_model;
    std::optional<Pose> gt_pose; // Essential only
    CorrespondenceSet corrs;
};

enum class ModelProvenance { MinimalSample, Perturbation, GroundTruth };

struct ModelPool {
    std::vector<GeometricModel> models;
    std::vector<ModelProvenance> provenance;

    size_t size() const { return models.size(); }
};

enum class PerturbMode { Pitch, Yaw, Roll, RandomRot, RandomTransRot };

// Rotates R by theta about a fixed or random axis (t unchanged), or rotates t
// by theta about a random axis orthogonal to it (R unchanged). Either way the
// pose error of the result against the input is exactly theta.
inline Pose perturb_model(const Pose &gt, PerturbMode mode, double theta_deg, uint64_t seed) {
    const double theta = theta_deg * (3.14159265358979323846 / 180.0);
    Rng rng(seed);
    Eigen::Vector3d axis;
    switch (mode) {
    case PerturbMode::Pitch:
        axis = Eigen::Vector3d::UnitX();
        break;
    case PerturbMode::Yaw:
        axis = Eigen::Vector3d::UnitY();
        break;
    case PerturbMode::Roll:
        axis = Eigen::Vector3d::UnitZ();
        break;
    case PerturbMode::RandomRot:
    case PerturbMode::RandomTransRot: {
        do {
            axis = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
        } while (axis.norm() < 1e-12);
        axis.normalize();
        break;
    }
    }
    Pose out = gt;
    if (mode == PerturbMode::RandomTransRot) {
        Eigen::Vector3d that = gt.t.normalized();
        axis -= axis.dot(that) * that;
        while (axis.norm() < 1e-8) { // resampled if the draw was parallel to t
            axis = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
            axis -= axis.dot(that) * that;
        }
        axis.normalize();
        out.t = Eigen::AngleAxisd(theta, axis) * gt.t;
    } else {
        Eigen::Matrix3d q = Eigen::AngleAxisd(theta, axis).toRotationMatrix();
        out.q = rotmat_to_quat(q * gt.R());
    }
    out.renormalize();
    return out;
}

namespace detail {

inline Eigen::Vector3d random_unit_vector(Rng &rng) {
    Eigen::Vector3d v;
    do {
        v = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    } while (v.norm() < 1e-12);
    return v.normalized();
}

// Relative pose with rotation angle uniform in [0, 30] degrees about a random
// axis and a uniformly random unit baseline.
inline Pose random_relative_pose(Rng &rng) {
    Eigen::Vector3d axis = random_unit_vector(rng);
    double angle = rng.uniform(0.0, 30.0 * 3.14159265358979323846 / 180.0);
    Eigen::Matrix3d r = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
    return Pose{rotmat_to_quat(r), random_unit_vector(rng)};
}

constexpr double kMinDepth = 4.0;
constexpr double kMaxDepth = 8.0;

} // namespace detail

// Essential scenes use normalized image coordinates u = X/Z: the box [-1,1]^2
// is a 90-degree field of view. Wider boxes make the homogeneous (u, v, 1)
// lift degenerate toward (u, v, 0) and leave the last row and column of an
// essential matrix unobservable from noisy minimal samples. The conventional
// pixel is defined by a 1000 x 1000 image over that field of view (f = 500
// px), so lengths in pixels convert at 0.002 coordinate units per pixel.
constexpr double kEssentialExtent = 2.0;
constexpr double kEssentialPixel = 0.002;

inline SceneConfig essential_scene_config(int n, double gamma, double sigma_px, uint64_t seed) {
    SceneConfig c;
    c.kind = SceneKind::Essential;
    c.n = n;
    c.gamma = gamma;
    c.sigma = sigma_px * kEssentialPixel;
    c.image_extent = kEssentialExtent;
    c.seed = seed;
    return c;
}

// Synthetic scene following a fixed generative model: a ground-truth model
// (plane-induced homography or essential matrix from a random relative pose
// with rotation <= 30 deg and unit baseline), true correspondences from 3D
// points uniform in a depth slab in front of both cameras, then per point a
// Bernoulli(gamma) inlier label; inliers get isotropic N(0, sigma^2 I4) noise
// in coordinate units, outliers are uniform in both image boxes. Coordinates
// are the ones the model acts on directly, spanning [-extent/2, extent/2].
inline SyntheticScene generate_scene(const SceneConfig &config) {
    if (config.n < 8 || !(config.gamma > 0.0 && config.gamma < 1.0) || !(config.sigma > 0.0) ||
        !(config.image_extent > 0.0)) {
        throw std::invalid_argument("generate_scene: invalid config");
    }
    Rng rng(config.seed);
    const double half = 0.5 * config.image_extent;

    SyntheticScene scene;
    scene.config = config;

    Pose pose = detail::random_relative_pose(rng);
    const Eigen::Matrix3d r = pose.R();

    Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
    if (config.kind == SceneKind::Homography) {
        // Plane through (0, 0, z0) with a normal tilted at most ~60 deg from
        // the optical axis, so rays from the image box still intersect it.
        double z0 = rng.uniform(detail::kMinDepth, detail::kMaxDepth);
        Eigen::Vector3d n;
        do {
            n = detail::random_unit_vector(rng);
        } while (std::abs(n.z()) < 0.5);
        if (n.z() < 0.0) n = -n;
        double d = n.dot(Eigen::Vector3d(0.0, 0.0, z0));
        h = r + pose.t * n.transpose() / d;
        scene.gt_model = GeometricModel{ModelKind::Homography, h};
    } else {
        scene.gt_model = compose_essential(pose);
        scene.gt_pose = pose;
    }

    auto project2 = [&](const Eigen::Vector3d &x1, Eigen::Vector2d &v) {
        Eigen::Vector3d x2 = r * x1 + pose.t;
        if (x2.z() < 0.1) return false;
        v = x2.head<2>() / x2.z();
        return std::abs(v.x()) <= half && std::abs(v.y()) <= half;
    };

    // True correspondence on the model manifold, uniform over the first image.
    auto sample_true = [&](Eigen::Vector2d &u, Eigen::Vector2d &v) {
        for (int attempt = 0; attempt < 10000; ++attempt) {
            u = Eigen::Vector2d(rng.uniform(-half, half), rng.uniform(-half, half));
            Eigen::Vector3d x1;
            if (config.kind == SceneKind::Homography) {
                Eigen::Vector3d w = h * Eigen::Vector3d(u.x(), u.y(), 1.0);
                if (std::abs(w.z()) < 1e-12) continue;
                v = w.head<2>() / w.z();
                if (std::abs(v.x()) <= half && std::abs(v.y()) <= half) return;
                continue;
            }
            double z = rng.uniform(detail::kMinDepth, detail::kMaxDepth);
            x1 = Eigen::Vector3d(u.x() * z, u.y() * z, z);
            if (project2(x1, v)) return;
        }
        throw std::runtime_error("generate_scene: could not place points in both views");
    };

    scene.corrs.points.resize(config.n);
    scene.corrs.labels.resize(config.n);
    for (int i = 0; i < config.n; ++i) {
        bool inlier = rng.uniform() < config.gamma;
        scene.corrs.labels[i] = inlier ? 1 : 0;
        Correspondence c;
        if (inlier) {
            sample_true(c.u, c.v);
            c.u.x() += config.sigma * rng.normal();
            c.u.y() += config.sigma * rng.normal();
            c.v.x() += config.sigma * rng.normal();
            c.v.y() += config.sigma * rng.normal();
        } else {
            c.u = Eigen::Vector2d(rng.uniform(-half, half), rng.uniform(-half, half));
            c.v = Eigen::Vector2d(rng.uniform(-half, half), rng.uniform(-half, half));
        }
        scene.corrs.points[i] = c;
    }
    return scene;
}

namespace detail {

// Hartley normalization: centroid to the origin, mean distance sqrt(2).
inline Eigen::Matrix3d normalizing_transform(const std::vector<Eigen::Vector2d> &pts) {
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    for (const auto &p : pts) c += p;
    c /= static_cast<double>(pts.size());
    double mean_dist = 0.0;
    for (const auto &p : pts) mean_dist += (p - c).norm();
    mean_dist /= static_cast<double>(pts.size());
    double s = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
    Eigen::Matrix3d t;
    t << s, 0.0, -s * c.x(), 0.0, s, -s * c.y(), 0.0, 0.0, 1.0;
    return t;
}

inline bool three_collinear(const std::vector<Eigen::Vector2d> &pts, double extent_scale) {
    const double eps = 1e-9 * extent_scale * extent_scale;
    for (size_t a = 0; a < pts.size(); ++a) {
        for (size_t b = a + 1; b < pts.size(); ++b) {
            for (size_t c = b + 1; c < pts.size(); ++c) {
                Eigen::Vector2d ab = pts[b] - pts[a];
                Eigen::Vector2d ac = pts[c] - pts[a];
                if (std::abs(ab.x() * ac.y() - ab.y() * ac.x()) < eps) return true;
            }
        }
    }
    return false;
}

} // namespace detail

// Exact homography from 4 correspondences via normalized DLT. Returns nothing
// for degenerate input (three collinear points in either view).
inline std::optional<GeometricModel> solver_homography_4pt(const std::array<Correspondence, 4> &sample) {
    std::vector<Eigen::Vector2d> us, vs;
    double scale = 0.0;
    for (const auto &c : sample) {
        us.push_back(c.u);
        vs.push_back(c.v);
        scale = std::max({scale, c.u.cwiseAbs().maxCoeff(), c.v.cwiseAbs().maxCoeff(), 1.0});
    }
    if (detail::three_collinear(us, scale) || detail::three_collinear(vs, scale)) {
        return std::nullopt;
    }
    Eigen::Matrix3d tu = detail::normalizing_transform(us);
    Eigen::Matrix3d tv = detail::normalizing_transform(vs);
    Eigen::Matrix<double, 8, 9> a;
    for (int i = 0; i < 4; ++i) {
        Eigen::Vector3d p = tu * Eigen::Vector3d(us[i].x(), us[i].y(), 1.0);
        Eigen::Vector3d q = tv * Eigen::Vector3d(vs[i].x(), vs[i].y(), 1.0);
        p /= p.z();
        q /= q.z();
        a.row(2 * i) << 0.0, 0.0, 0.0, -p.x(), -p.y(), -1.0, q.y() * p.x(), q.y() * p.y(), q.y();
        a.row(2 * i + 1) << p.x(), p.y(), 1.0, 0.0, 0.0, 0.0, -q.x() * p.x(), -q.x() * p.y(), -q.x();
    }
    Eigen::JacobiSVD<Eigen::Matrix<double, 8, 9>> svd(a, Eigen::ComputeFullV);
    Eigen::Matrix<double, 9, 1> hvec = svd.matrixV().col(8);
    Eigen::Matrix3d hn;
    hn << hvec(0), hvec(1), hvec(2), hvec(3), hvec(4), hvec(5), hvec(6), hvec(7), hvec(8);
    Eigen::Matrix3d h = tv.inverse() * hn * tu;
    if (!h.allFinite() || std::abs(h.determinant()) < 1e-12 * std::pow(h.norm(), 3)) {
        return std::nullopt;
    }
    return GeometricModel{ModelKind::Homography, h};
}

// Normalized 8-point solver on >= 8 correspondences. With want_essential the
// rank-3 fit is projected onto the essential manifold, otherwise rank 2 is
// enforced and a fundamental matrix is returned. Degenerate samples (null
// space of dimension > 1) return nothing.
inline std::optional<GeometricModel> solver_eightpoint(const std::vector<Correspondence> &sample,
                                                       bool want_essential) {
    if (sample.size() < 8) throw std::invalid_argument("solver_eightpoint: need >= 8 correspondences");
    std::vector<Eigen::Vector2d> us, vs;
    us.reserve(sample.size());
    vs.reserve(sample.size());
    for (const auto &c : sample) {
        us.push_back(c.u);
        vs.push_back(c.v);
    }
    Eigen::Matrix3d tu = detail::normalizing_transform(us);
    Eigen::Matrix3d tv = detail::normalizing_transform(vs);
    Eigen::MatrixXd a(sample.size(), 9);
    for (size_t i = 0; i < sample.size(); ++i) {
        Eigen::Vector3d p = tu * Eigen::Vector3d(us[i].x(), us[i].y(), 1.0);
        Eigen::Vector3d q = tv * Eigen::Vector3d(vs[i].x(), vs[i].y(), 1.0);
        a.row(static_cast<Eigen::Index>(i)) << q.x() * p.x(), q.x() * p.y(), q.x(),
            q.y() * p.x(), q.y() * p.y(), q.y(), p.x(), p.y(), 1.0;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto &sv = svd.singularValues();
    if (sv(0) <= 0.0 || sv(7) < 1e-10 * sv(0)) {
        return std::nullopt; // more than one null direction: degenerate sample
    }
    Eigen::Matrix<double, 9, 1> fvec = svd.matrixV().col(8);
    Eigen::Matrix3d fn;
    fn << fvec(0), fvec(1), fvec(2), fvec(3), fvec(4), fvec(5), fvec(6), fvec(7), fvec(8);
    Eigen::Matrix3d f = tv.transpose() * fn * tu;
    if (!f.allFinite() || !(f.norm() > 0.0)) return std::nullopt;
    if (want_essential) {
        return project_to_essential(f);
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> fsvd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d s = fsvd.singularValues();
    s(2) = 0.0;
    return GeometricModel{ModelKind::Fundamental,
                          fsvd.matrixU() * s.asDiagonal() * fsvd.matrixV().transpose()};
}

// Pool composition; fractions need not sum to 1, minimal samples absorb the
// remainder. Perturbation entries rotate R or t (coin flip) by an angle
// uniform in (0, perturb_theta_max] degrees and exist for Essential scenes only.
struct PoolMix {
    double perturbation = 0.0;
    bool ground_truth = false;
    double perturb_theta_max = 10.0;
};

inline ModelPool generate_pool(const SyntheticScene &scene, int m, const PoolMix &mix, uint64_t seed) {
    if (m <= 0) throw std::invalid_argument("generate_pool: need m > 0");
    if (mix.perturbation > 0.0 && !scene.gt_pose) {
        throw std::invalid_argument("generate_pool: perturbation entries need an Essential scene");
    }
    const int n = static_cast<int>(scene.corrs.size());
    const int sample_size = scene.config.kind == SceneKind::Essential ? 8 : 4;
    if (n < sample_size) throw std::invalid_argument("generate_pool: scene too small for minimal samples");

    int n_gt = mix.ground_truth ? 1 : 0;
    int n_pert = std::min(m - n_gt, static_cast<int>(std::floor(mix.perturbation * m)));
    int n_min = m - n_gt - n_pert;

    ModelPool pool;
    pool.models.reserve(m);
    pool.provenance.reserve(m);
    Rng rng(seed);

    if (n_gt) {
        pool.models.push_back(scene.gt_model);
        pool.provenance.push_back(ModelProvenance::GroundTruth);
    }
    for (int i = 0; i < n_pert; ++i) {
        double theta = rng.uniform(0.0, mix.perturb_theta_max);
        PerturbMode mode = rng.uniform() < 0.5 ? PerturbMode::RandomRot : PerturbMode::RandomTransRot;
        Pose p = perturb_model(*scene.gt_pose, mode, theta, rng.next_u64());
        pool.models.push_back(compose_essential(p));
        pool.provenance.push_back(ModelProvenance::Perturbation);
    }
    for (int i = 0; i < n_min; ++i) {
        std::optional<GeometricModel> model;
        for (int attempt = 0; attempt < 100 && !model; ++attempt) {
            // Sample distinct indices; k << n so rejection terminates fast.
            std::vector<int> idx;
            while (static_cast<int>(idx.size()) < sample_size) {
                int cand = static_cast<int>(rng.uniform_index(n));
                bool dup = false;
                for (int j : idx) dup |= (j == cand);
                if (!dup) idx.push_back(cand);
            }
            if (scene.config.kind == SceneKind::Essential) {
                std::vector<Correspondence> pts;
                for (int j : idx) pts.push_back(scene.corrs.points[j]);
                model = solver_eightpoint(pts, true);
            } else {
                std::array<Correspondence, 4> pts{scene.corrs.points[idx[0]], scene.corrs.points[idx[1]],
                                                  scene.corrs.points[idx[2]], scene.corrs.points[idx[3]]};
                model = solver_homography_4pt(pts);
            }
        }
        if (!model) throw std::runtime_error("generate_pool: repeated degenerate minimal samples");
        pool.models.push_back(*model);
        pool.provenance.push_back(ModelProvenance::MinimalSample);
    }
    return pool;
}

} // namespace rsf
