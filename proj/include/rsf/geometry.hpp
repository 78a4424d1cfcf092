#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace rsf {

struct Correspondence {
    Eigen::Vector2d u; // first view
    Eigen::Vector2d v; // second view
};

// Optional labels mark ground-truth inliers (1) / outliers (0); empty when unknown.
struct CorrespondenceSet {
    std::vector<Correspondence> points;
    std::vector<uint8_t> labels;

    size_t size() const { return points.size(); }
    bool has_labels() const { return !labels.empty(); }
};

inline Eigen::Matrix3d skew(const Eigen::Vector3d &v) {
    Eigen::Matrix3d m;
    m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return m;
}

// Rotation from a unit quaternion q = (w, x, y, z). For non-unit q this is
// |q|^2 times the rotation, which leaves Sampson residuals unchanged; callers
// that need a proper rotation normalize first.
inline Eigen::Matrix3d quat_to_rotmat(const Eigen::Vector4d &q) {
    const double w = q(0), x = q(1), y = q(2), z = q(3);
    Eigen::Matrix3d r;
    r << w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z;
    return r;
}

inline Eigen::Vector4d rotmat_to_quat(const Eigen::Matrix3d &r) {
    Eigen::Quaterniond q(r);
    q.normalize();
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    return Eigen::Vector4d(q.w(), q.x(), q.y(), q.z());
}

// Relative pose: rotation as a unit quaternion, translation as a unit
// direction (scale is unobservable from an essential matrix).
struct Pose {
    Eigen::Vector4d q{1.0, 0.0, 0.0, 0.0};
    Eigen::Vector3d t{0.0, 0.0, 1.0};

    static Pose from_rt(const Eigen::Matrix3d &r, const Eigen::Vector3d &t_in) {
        double n = t_in.norm();
        if (!(n > 0.0)) throw std::invalid_argument("Pose: zero translation");
        return Pose{rotmat_to_quat(r), t_in / n};
    }

    Eigen::Matrix3d R() const { return quat_to_rotmat(q.normalized()); }

    void renormalize() {
        q.normalize();
        t.normalize();
    }
};

enum class ModelKind { Homography, Essential, Fundamental };

struct GeometricModel {
    ModelKind kind = ModelKind::Homography;
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
};

// Rotation error acos((tr(Ra Rb^T) - 1)/2) and translation direction angle,
// both in degrees in [0, 180]; e is their max. A zero-norm reference
// translation compares as zero error (degenerate ground truth).
struct PoseError {
    double e_rot = 0.0;
    double e_trans = 0.0;
    double e = 0.0;
};

inline double angle_deg_clamped(double cosine) {
    return std::acos(std::clamp(cosine, -1.0, 1.0)) * (180.0 / 3.14159265358979323846);
}

inline PoseError pose_error(const Pose &a, const Pose &b) {
    PoseError out;
    double tr = (a.R() * b.R().transpose()).trace();
    out.e_rot = angle_deg_clamped(0.5 * (tr - 1.0));
    double na = a.t.norm(), nb = b.t.norm();
    if (na > 0.0 && nb > 0.0) {
        out.e_trans = angle_deg_clamped(a.t.dot(b.t) / (na * nb));
    }
    out.e = std::max(out.e_rot, out.e_trans);
    return out;
}

// Signed Sampson residual of an epipolar constraint x2^T M x1 = 0.
// Returns value / sqrt(norm of the four point-derivatives); +-inf when the
// denominator vanishes (point at the epipole of a degenerate model).
inline double sampson_epipolar_signed(const Eigen::Matrix3d &m, const Correspondence &c) {
    const Eigen::Vector3d x1(c.u.x(), c.u.y(), 1.0);
    const Eigen::Vector3d x2(c.v.x(), c.v.y(), 1.0);
    const Eigen::Vector3d mx1 = m * x1;
    const Eigen::Vector3d mtx2 = m.transpose() * x2;
    const double num = x2.dot(mx1);
    const double den2 = mx1(0) * mx1(0) + mx1(1) * mx1(1) + mtx2(0) * mtx2(0) + mtx2(1) * mtx2(1);
    if (den2 <= 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return num / std::sqrt(den2);
}

// Two-equation Sampson distance for a homography: g holds the first two rows
// of (v,1) x H(u,1), J its Jacobian w.r.t. (u, v), and r^2 = g^T (J J^T)^-1 g.
// Degenerate J J^T yields +inf.
inline double sampson_homography(const Eigen::Matrix3d &h, const Correspondence &c) {
    const Eigen::Vector3d x1(c.u.x(), c.u.y(), 1.0);
    const Eigen::Vector3d w = h * x1;
    const double v1 = c.v.x(), v2 = c.v.y();
    Eigen::Vector2d g(v2 * w(2) - w(1), w(0) - v1 * w(2));
    Eigen::Matrix<double, 2, 4> j;
    j(0, 0) = v2 * h(2, 0) - h(1, 0);
    j(0, 1) = v2 * h(2, 1) - h(1, 1);
    j(0, 2) = 0.0;
    j(0, 3) = w(2);
    j(1, 0) = h(0, 0) - v1 * h(2, 0);
    j(1, 1) = h(0, 1) - v1 * h(2, 1);
    j(1, 2) = -w(2);
    j(1, 3) = 0.0;
    Eigen::Matrix2d jjt = j * j.transpose();
    double det = jjt.determinant();
    if (!(det > 0.0) || !std::isfinite(det)) {
        return std::numeric_limits<double>::infinity();
    }
    double r2 = g.dot(jjt.inverse() * g);
    return std::sqrt(std::max(r2, 0.0));
}

// First-order distance from (u,v) in R^4 to the model manifold, in the
// units of the correspondence coordinates. Invariant to scaling the model.
inline double sampson_residual(const GeometricModel &model, const Correspondence &c) {
    if (model.kind == ModelKind::Homography) {
        return sampson_homography(model.m, c);
    }
    return std::abs(sampson_epipolar_signed(model.m, c));
}

inline Eigen::VectorXd residual_vector(const GeometricModel &model, const CorrespondenceSet &set) {
    Eigen::VectorXd r(set.size());
    for (size_t i = 0; i < set.size(); ++i) {
        r(i) = sampson_residual(model, set.points[i]);
    }
    return r;
}

// E = [t]x R; for unit t the singular values are (1, 1, 0).
inline GeometricModel compose_essential(const Pose &pose) {
    return GeometricModel{ModelKind::Essential, skew(pose.t) * pose.R()};
}

// Nearest essential matrix: SVD with the two leading singular values averaged.
inline GeometricModel project_to_essential(const Eigen::Matrix3d &m) {
    if (!(m.norm() > 0.0) || !m.allFinite()) {
        throw std::invalid_argument("project_to_essential: zero or non-finite matrix");
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    double s = 0.5 * (svd.singularValues()(0) + svd.singularValues()(1));
    Eigen::Matrix3d e = svd.matrixU() * Eigen::Vector3d(s, s, 0.0).asDiagonal() * svd.matrixV().transpose();
    return GeometricModel{ModelKind::Essential, e};
}

// The four (R, t) candidates of an essential matrix, disambiguated against a
// reference pose by minimal pose error (the synthetic pipeline always has
// ground truth available; a cheirality check is deliberately out of scope).
inline Pose decompose_essential(const GeometricModel &model, const Pose &gt) {
    if (model.kind != ModelKind::Essential) {
        throw std::invalid_argument("decompose_essential: model is not an essential matrix");
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(model.m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    Eigen::Matrix3d v = svd.matrixV();
    if (u.determinant() < 0.0) u.col(2) *= -1.0;
    if (v.determinant() < 0.0) v.col(2) *= -1.0;
    Eigen::Matrix3d w;
    w << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
    const Eigen::Matrix3d r1 = u * w * v.transpose();
    const Eigen::Matrix3d r2 = u * w.transpose() * v.transpose();
    const Eigen::Vector3d t = u.col(2);
    Pose best;
    double best_err = std::numeric_limits<double>::infinity();
    for (const Eigen::Matrix3d &r : {r1, r2}) {
        for (double sign : {1.0, -1.0}) {
            Pose cand{rotmat_to_quat(r), sign * t};
            double err = pose_error(cand, gt).e;
            if (err < best_err) {
                best_err = err;
                best = cand;
            }
        }
    }
    return best;
}

} // namespace rsf
