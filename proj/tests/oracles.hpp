#pragma once

// Independent reference computations used as test oracles. These stay
// deliberately naive (elementwise loops, dense expansions, sampling) and
// must not share code with the implementation paths they check.

#include <Eigen/Dense>
#include <vector>

#include "mvnrsfm/rng.hpp"

namespace oracles {

// Elementwise weak-perspective projection: W(i,k) = s * sum_j S(i,j) R(j,k) + t(k).
inline Eigen::MatrixXd project_loop(const Eigen::MatrixXd& S, const Eigen::Matrix3d& R, double s,
                                    const Eigen::Vector2d& t) {
    Eigen::MatrixXd W(S.rows(), 2);
    for (Eigen::Index i = 0; i < S.rows(); ++i)
        for (int k = 0; k < 2; ++k) {
            double acc = 0.0;
            for (int j = 0; j < 3; ++j) acc += s * S(i, j) * R(j, k);
            W(i, k) = acc + t(k);
        }
    return W;
}

// Pinhole projection written out long-hand.
inline Eigen::Vector2d pinhole_loop(const Eigen::Matrix3d& K, const Eigen::Matrix3d& R,
                                    const Eigen::Vector3d& t, const Eigen::Vector3d& X) {
    Eigen::Vector3d xc = Eigen::Vector3d::Zero();
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) xc(i) += R(i, j) * X(j);
        xc(i) += t(i);
    }
    const double u = K(0, 0) * xc(0) + K(0, 1) * xc(1) + K(0, 2) * xc(2);
    const double v = K(1, 1) * xc(1) + K(1, 2) * xc(2);
    const double w = xc(2);
    return {u / w, v / w};
}

// Proximal operator of lambda * ||B||_F. The prox preserves the direction of
// B, so it reduces to argmin_m 0.5 (m - ||B||)^2 + lambda m over m >= 0,
// located here by bisection on the derivative sign (exact to rounding,
// unlike value-comparison searches which stall at sqrt(eps)).
inline Eigen::Matrix<double, 3, 2> prox_group_search(const Eigen::Matrix<double, 3, 2>& B,
                                                     double lambda) {
    const double n = B.norm();
    if (n == 0.0) return Eigen::Matrix<double, 3, 2>::Zero();
    auto dphi = [&](double m) { return (m - n) + lambda; };
    if (dphi(0.0) >= 0.0) return Eigen::Matrix<double, 3, 2>::Zero();
    double lo = 0.0, hi = n + lambda + 1.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (dphi(mid) < 0.0)
            lo = mid;
        else
            hi = mid;
    }
    const double m = 0.5 * (lo + hi);
    return (m / n) * B;
}

// Dense Kronecker expansion of (D kron I3), built entry by entry.
inline Eigen::MatrixXd kron_identity3(const Eigen::MatrixXd& D) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(3 * D.rows(), 3 * D.cols());
    for (Eigen::Index i = 0; i < D.rows(); ++i)
        for (Eigen::Index j = 0; j < D.cols(); ++j)
            for (int r = 0; r < 3; ++r) out(3 * i + r, 3 * j + r) = D(i, j);
    return out;
}

// Uniform rotations for sampled-optimality oracles.
inline std::vector<Eigen::Matrix3d> sample_rotations(int n, std::uint64_t seed) {
    mvnrsfm::Rng rng(seed);
    std::vector<Eigen::Matrix3d> out(n);
    for (auto& R : out) R = rng.rotation();
    return out;
}

// Hand-coded Adam recurrence for a single scalar parameter.
inline double adam_scalar_step(double theta, double g, double& m, double& v, long step, double lr,
                               double b1, double b2, double eps) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, static_cast<double>(step)));
    const double vh = v / (1 - std::pow(b2, static_cast<double>(step)));
    return theta - lr * mh / (std::sqrt(vh) + eps);
}

}  // namespace oracles
