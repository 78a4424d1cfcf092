#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rsf/geometry.hpp"
#include "rsf/scoring.hpp"

namespace rsf {

struct LmaConfig {
    int max_iter = 25;          // outer iterations (one weight refresh each)
    double lambda1 = 1e-3;      // scales diag(G); adapted by accept_factor
    double lambda2 = 1e-8;      // fixed identity floor
    double accept_factor = 10.0;
    double tol_step = 1e-10;
};

// One row per attempted step. objective_* are the weighted sums w_i r_i^2
// under the weights frozen for that outer iteration, so monotonicity of
// accepted steps is checkable from the trace alone.
struct OptIter {
    int iter = 0;
    double objective_before = 0.0;
    double objective_after = 0.0;
    double step_norm = 0.0;
    bool accepted = false;
};

struct OptTrace {
    std::vector<OptIter> iters;
    bool aborted = false;   // non-finite Jacobian or objective
    bool no_update = false; // all weights below 1e-12
};

namespace detail {

// Signed Sampson residual of E(q, t) = [t]x R~(q) with the homogeneous
// quaternion form, plus its gradient in (q, t). Sampson is invariant to the
// scale of q and t, so both can be treated as free vectors in R^4 x R^3.
struct EpipolarResidual {
    double value = 0.0;
    Eigen::Matrix<double, 7, 1> grad = Eigen::Matrix<double, 7, 1>::Zero();
};

inline void quat_rotmat_derivs(const Eigen::Vector4d &q, Eigen::Matrix3d dr[4]) {
    const double w = q(0), x = q(1), y = q(2), z = q(3);
    dr[0] << 2 * w, -2 * z, 2 * y, 2 * z, 2 * w, -2 * x, -2 * y, 2 * x, 2 * w;
    dr[1] << 2 * x, 2 * y, 2 * z, 2 * y, -2 * x, -2 * w, 2 * z, 2 * w, -2 * x;
    dr[2] << -2 * y, 2 * x, 2 * w, 2 * x, 2 * y, 2 * z, -2 * w, 2 * z, -2 * y;
    dr[3] << -2 * z, -2 * w, 2 * x, 2 * w, -2 * z, 2 * y, 2 * x, 2 * y, 2 * z;
}

inline EpipolarResidual epipolar_residual(const Eigen::Vector4d &q, const Eigen::Vector3d &t,
                                          const Correspondence &c, bool with_grad) {
    const Eigen::Matrix3d r = quat_to_rotmat(q);
    const Eigen::Matrix3d e = skew(t) * r;
    const Eigen::Vector3d x1(c.u.x(), c.u.y(), 1.0);
    const Eigen::Vector3d x2(c.v.x(), c.v.y(), 1.0);
    const Eigen::Vector3d ex1 = e * x1;
    const Eigen::Vector3d etx2 = e.transpose() * x2;
    const double num = x2.dot(ex1);
    const double den2 = ex1(0) * ex1(0) + ex1(1) * ex1(1) + etx2(0) * etx2(0) + etx2(1) * etx2(1);

    EpipolarResidual out;
    if (!(den2 > 0.0)) {
        out.value = std::numeric_limits<double>::infinity();
        return out;
    }
    const double den = std::sqrt(den2);
    out.value = num / den;
    if (!with_grad) return out;

    // d(num/den)/dE = x2 x1^T / den - (num/den^3) * d(den^2)/dE / 2
    Eigen::Matrix3d dden2;
    dden2.setZero();
    for (int j = 0; j < 3; ++j) {
        dden2(0, j) += 2.0 * ex1(0) * x1(j);
        dden2(1, j) += 2.0 * ex1(1) * x1(j);
    }
    for (int i = 0; i < 3; ++i) {
        dden2(i, 0) += 2.0 * etx2(0) * x2(i);
        dden2(i, 1) += 2.0 * etx2(1) * x2(i);
    }
    const Eigen::Matrix3d dvalue = x2 * x1.transpose() / den - (0.5 * num / (den2 * den)) * dden2;

    Eigen::Matrix3d dr[4];
    quat_rotmat_derivs(q, dr);
    const Eigen::Matrix3d tx = skew(t);
    for (int k = 0; k < 4; ++k) {
        out.grad(k) = dvalue.cwiseProduct(tx * dr[k]).sum();
    }
    for (int k = 0; k < 3; ++k) {
        out.grad(4 + k) = dvalue.cwiseProduct(skew(Eigen::Vector3d::Unit(k)) * r).sum();
    }
    return out;
}

inline double weighted_objective(const Eigen::Vector4d &q, const Eigen::Vector3d &t,
                                 const CorrespondenceSet &set, const Eigen::VectorXd &w) {
    double obj = 0.0;
    for (size_t i = 0; i < set.size(); ++i) {
        if (w(static_cast<Eigen::Index>(i)) == 0.0) continue;
        double s = epipolar_residual(q, t, set.points[i], false).value;
        obj += w(static_cast<Eigen::Index>(i)) * s * s;
    }
    return obj;
}

// One damped Gauss-Newton pass on sum_i w_i r_i(q,t)^2 with fixed weights.
// Damping is raised until the objective decreases; returns false if no
// decreasing step exists before the damping cap (pose left unchanged).
inline bool damped_step(Eigen::Vector4d &q, Eigen::Vector3d &t, const CorrespondenceSet &set,
                        const Eigen::VectorXd &w, const LmaConfig &cfg, double &lambda1,
                        OptIter &row, bool &abort) {
    const Eigen::Index n = static_cast<Eigen::Index>(set.size());
    Eigen::Matrix<double, 7, 7> g = Eigen::Matrix<double, 7, 7>::Zero();
    Eigen::Matrix<double, 7, 1> rhs = Eigen::Matrix<double, 7, 1>::Zero();
    double obj0 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (w(i) == 0.0) continue;
        EpipolarResidual res = epipolar_residual(q, t, set.points[static_cast<size_t>(i)], true);
        if (!std::isfinite(res.value) || !res.grad.allFinite()) {
            abort = true;
            return false;
        }
        g.noalias() += w(i) * res.grad * res.grad.transpose();
        rhs.noalias() += w(i) * res.value * res.grad;
        obj0 += w(i) * res.value * res.value;
    }
    row.objective_before = obj0;
    row.objective_after = obj0;
    if (!std::isfinite(obj0)) {
        abort = true;
        return false;
    }
    for (int tries = 0; tries < 40; ++tries) {
        Eigen::Matrix<double, 7, 7> a = g;
        a.diagonal() += lambda1 * g.diagonal();
        a.diagonal().array() += cfg.lambda2;
        Eigen::Matrix<double, 7, 1> step = -a.ldlt().solve(rhs);
        if (!step.allFinite()) {
            abort = true;
            return false;
        }
        Eigen::Vector4d q2 = q + step.head<4>();
        Eigen::Vector3d t2 = t + step.tail<3>();
        if (q2.norm() > 1e-12 && t2.norm() > 1e-12) {
            q2.normalize();
            t2.normalize();
            double obj = weighted_objective(q2, t2, set, w);
            if (std::isfinite(obj) && obj < obj0) {
                q = q2;
                t = t2;
                row.objective_after = obj;
                row.step_norm = step.norm();
                row.accepted = true;
                lambda1 = std::max(lambda1 / cfg.accept_factor, 1e-12);
                return true;
            }
            row.objective_after = obj;
            row.step_norm = step.norm();
        }
        lambda1 *= cfg.accept_factor;
        if (lambda1 > 1e12) break;
    }
    row.accepted = false;
    return false;
}

} // namespace detail

// Marginal quality sum_i smax((tau^2 - r_i^2) / (2 sigma^2), 0); the model
// log-likelihood up to a constant for the GauMarginal family.
inline double marginal_log_likelihood(const ScoreSpec &spec, const Eigen::VectorXd &residuals) {
    if (spec.family != ScoreFamily::GauMarginal) {
        throw std::invalid_argument("marginal_log_likelihood: defined for GauMarginal only");
    }
    const double inv2s2 = 0.5 / (spec.sigma * spec.sigma);
    double q = 0.0;
    for (Eigen::Index i = 0; i < residuals.size(); ++i) {
        double r = residuals(i);
        q += smax((spec.tau * spec.tau - r * r) * inv2s2, 0.0);
    }
    return q;
}

struct EmStepResult {
    Pose pose;
    Eigen::VectorXd weights;
    bool no_update = false;
};

// One EM step for the GauMarginal model: E-step weights are the inlier
// posteriors, M-step is a single damped Gauss-Newton pass on the weighted
// squares. Accepting only decreasing steps makes the marginal likelihood
// non-decreasing across repeated calls.
inline EmStepResult em_irls_step(const ScoreSpec &spec, const Pose &model, const CorrespondenceSet &set,
                                 const LmaConfig &cfg = {}) {
    if (spec.family != ScoreFamily::GauMarginal) {
        throw std::invalid_argument("em_irls_step: defined for GauMarginal only");
    }
    EmStepResult out;
    out.pose = model;
    out.pose.renormalize();
    Eigen::VectorXd w(set.size());
    for (size_t i = 0; i < set.size(); ++i) {
        double r = std::abs(detail::epipolar_residual(out.pose.q, out.pose.t, set.points[i], false).value);
        w(static_cast<Eigen::Index>(i)) = std::isfinite(r) ? inlier_posterior(spec, r) : 0.0;
    }
    out.weights = w;
    if (w.maxCoeff() < 1e-12) {
        out.no_update = true;
        return out;
    }
    double lambda1 = cfg.lambda1;
    OptIter row;
    bool abort = false;
    detail::damped_step(out.pose.q, out.pose.t, set, w, cfg, lambda1, row, abort);
    out.no_update = !row.accepted;
    return out;
}

// IRLS with per-family weights and Levenberg-Marquardt damping. Weights are
// refrozen each outer iteration from the current residuals; a step is
// accepted only if the frozen-weight objective decreases.
inline std::pair<Pose, OptTrace> irls_lma(const ScoreSpec &spec, const Pose &init,
                                          const CorrespondenceSet &set, const LmaConfig &cfg = {}) {
    Pose pose = init;
    pose.renormalize();
    OptTrace trace;
    double lambda1 = cfg.lambda1;
    for (int iter = 0; iter < cfg.max_iter; ++iter) {
        Eigen::VectorXd w(set.size());
        for (size_t i = 0; i < set.size(); ++i) {
            double r = std::abs(detail::epipolar_residual(pose.q, pose.t, set.points[i], false).value);
            w(static_cast<Eigen::Index>(i)) = std::isfinite(r) ? irls_weight(spec, r) : 0.0;
        }
        if (w.maxCoeff() < 1e-12) {
            trace.no_update = true;
            break;
        }
        OptIter row;
        row.iter = iter;
        bool abort = false;
        bool accepted = detail::damped_step(pose.q, pose.t, set, w, cfg, lambda1, row, abort);
        trace.iters.push_back(row);
        if (abort) {
            trace.aborted = true;
            break;
        }
        if (!accepted || row.step_norm < cfg.tol_step) {
            break;
        }
    }
    return {pose, trace};
}

// Homography counterpart: 8 free parameters with H(2,2) fixed at 1,
// central-difference Jacobians of the two-equation Sampson distance.
// A model with |H(2,2)| below 1e-8 is degenerate for this chart and is
// returned unchanged with no_update set.
struct EmStepResultH {
    GeometricModel model;
    Eigen::VectorXd weights;
    bool no_update = false;
};

inline EmStepResultH em_irls_step(const ScoreSpec &spec, const GeometricModel &model,
                                  const CorrespondenceSet &set, const LmaConfig &cfg = {}) {
    if (spec.family != ScoreFamily::GauMarginal) {
        throw std::invalid_argument("em_irls_step: defined for GauMarginal only");
    }
    if (model.kind != ModelKind::Homography) {
        throw std::invalid_argument("em_irls_step: matrix overload expects a homography");
    }
    EmStepResultH out;
    out.model = model;
    out.weights = Eigen::VectorXd::Zero(set.size());
    if (std::abs(model.m(2, 2)) < 1e-8) {
        out.no_update = true;
        return out;
    }
    Eigen::Matrix3d h = model.m / model.m(2, 2);
    Eigen::VectorXd w(set.size());
    for (size_t i = 0; i < set.size(); ++i) {
        double r = sampson_homography(h, set.points[i]);
        w(static_cast<Eigen::Index>(i)) = std::isfinite(r) ? inlier_posterior(spec, r) : 0.0;
    }
    out.weights = w;
    if (w.maxCoeff() < 1e-12) {
        out.no_update = true;
        return out;
    }

    auto params_to_h = [](const Eigen::Matrix<double, 8, 1> &p) {
        Eigen::Matrix3d m;
        m << p(0), p(1), p(2), p(3), p(4), p(5), p(6), p(7), 1.0;
        return m;
    };
    Eigen::Matrix<double, 8, 1> p;
    p << h(0, 0), h(0, 1), h(0, 2), h(1, 0), h(1, 1), h(1, 2), h(2, 0), h(2, 1);

    auto objective = [&](const Eigen::Matrix<double, 8, 1> &pp) {
        Eigen::Matrix3d m = params_to_h(pp);
        double obj = 0.0;
        for (size_t i = 0; i < set.size(); ++i) {
            double r = sampson_homography(m, set.points[i]);
            if (!std::isfinite(r)) return std::numeric_limits<double>::infinity();
            obj += w(static_cast<Eigen::Index>(i)) * r * r;
        }
        return obj;
    };

    Eigen::MatrixXd jac(set.size(), 8);
    Eigen::VectorXd res(set.size());
    for (size_t i = 0; i < set.size(); ++i) {
        res(static_cast<Eigen::Index>(i)) = sampson_homography(h, set.points[i]);
    }
    for (int k = 0; k < 8; ++k) {
        double step = 1e-6 * std::max(1.0, std::abs(p(k)));
        Eigen::Matrix<double, 8, 1> pp = p, pm = p;
        pp(k) += step;
        pm(k) -= step;
        Eigen::Matrix3d hp = params_to_h(pp), hm = params_to_h(pm);
        for (size_t i = 0; i < set.size(); ++i) {
            jac(static_cast<Eigen::Index>(i), k) =
                (sampson_homography(hp, set.points[i]) - sampson_homography(hm, set.points[i])) / (2.0 * step);
        }
    }
    if (!jac.allFinite() || !res.allFinite()) {
        out.no_update = true;
        return out;
    }
    Eigen::Matrix<double, 8, 8> g = jac.transpose() * w.asDiagonal() * jac;
    Eigen::Matrix<double, 8, 1> rhs = jac.transpose() * (w.asDiagonal() * res);
    double obj0 = (w.array() * res.array().square()).sum();
    double lambda1 = cfg.lambda1;
    for (int tries = 0; tries < 40; ++tries) {
        Eigen::Matrix<double, 8, 8> a = g;
        a.diagonal() += lambda1 * g.diagonal();
        a.diagonal().array() += cfg.lambda2;
        Eigen::Matrix<double, 8, 1> step = -a.ldlt().solve(rhs);
        Eigen::Matrix<double, 8, 1> p2 = p + step;
        double obj = objective(p2);
        if (std::isfinite(obj) && obj < obj0) {
            out.model.m = params_to_h(p2);
            return out;
        }
        lambda1 *= cfg.accept_factor;
        if (lambda1 > 1e12) break;
    }
    out.no_update = true;
    return out;
}

} // namespace rsf
