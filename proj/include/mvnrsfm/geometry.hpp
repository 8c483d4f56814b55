#pragma once

#include <Eigen/Dense>
#include <utility>

#include "mvnrsfm/errors.hpp"

namespace mvnrsfm::geometry {

/// P x 3 canonical-frame point set, rows are points.
using Shape3D = Eigen::MatrixXd;

/// P x 2 image keypoints, rows are points, units are pixels.
using Keypoints2D = Eigen::MatrixXd;

/// Weak-perspective camera: W ~= s * S * R_xy + 1 * t_xy', where R_xy is the
/// first two columns of R. s plays the role of inverse depth.
struct CameraPose {
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    double s = 1.0;
    Eigen::Vector2d t_xy = Eigen::Vector2d::Zero();

    /// Throws InvalidInputError unless R is a proper rotation (1e-9) and s > 0.
    void validate() const;
};

/// Tolerance used for the SO(3) membership checks below.
inline constexpr double kRotationTol = 1e-9;

bool is_rotation(const Eigen::Matrix3d& R, double tol = kRotationTol);

/// W = s * S * R_xy + 1 * t_xy'.
Keypoints2D project_weak_perspective(const Shape3D& S, const CameraPose& pose);

/// Removes column means. Returns the centered points and the removed mean.
std::pair<Keypoints2D, Eigen::Vector2d> center(const Keypoints2D& W);

/// Column-mean centering for 3D point sets.
std::pair<Shape3D, Eigen::Vector3d> center3(const Shape3D& S);

/// Projection of M onto SO(3): R = U * diag(1, 1, det(UV')) * V' from the SVD
/// M = U Sigma V'. Maximizes trace(R'M) over rotations.
/// Throws DegenerateInputError when rank(M) <= 1 (the projection is not
/// unique there).
Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& M);

/// Orthonormal 3x2 frame maximizing trace(Q'A); Q = U V' from the thin SVD of
/// A. Any such frame extends to a proper rotation, so this is the optimal
/// first-two-columns block of the OnP rotation.
Eigen::Matrix<double, 3, 2> stiefel_polar(const Eigen::Matrix<double, 3, 2>& A);

/// Extends an orthonormal 3x2 frame to a proper rotation via the cross
/// product of its columns.
Eigen::Matrix3d complete_rotation(const Eigen::Matrix<double, 3, 2>& Q);

struct OnpOptions {
    /// When set, degenerate configurations return pose {R = I, s = 0} flagged
    /// as degenerate instead of throwing. Used by the training loss, where a
    /// collapsed shape must yield a finite objective.
    bool lenient = false;
};

struct OnpResult {
    CameraPose pose;
    bool degenerate = false;
};

/// Orthographic-n-point: the (R, s) minimizing ||W - s * S * R_xy||_F over
/// R in SO(3), s > 0, for centered W and S (both are centered internally,
/// translations are the caller's business). Closed form: solve the
/// unconstrained system X = (S'S)^(-1) S'W, take R_xy as the polar factor of
/// X and s = trace(R_xy' S' W) / ||S R_xy||^2, the exact optimum for that
/// rotation. On exact weak-perspective input X = s R_xy already, so the
/// generating pose is recovered to machine precision.
///
/// Throws DegenerateInputError for rank-deficient S (smallest singular value
/// below 1e-9 of the largest), InvalidInputError for P < 4, and
/// DegenerateInputError if the optimal scale is not positive (reflection
/// ambiguity). With opts.lenient these cases return a flagged zero-scale
/// pose instead.
OnpResult solve_onp(const Keypoints2D& W, const Shape3D& S, const OnpOptions& opts = {});

struct ProcrustesOptions {
    bool allow_scale = true;  // similarity (a > 0) vs rigid alignment
};

struct ProcrustesResult {
    Shape3D aligned;           // a * X * Q + 1 * c'
    Eigen::Matrix3d Q;         // element of O(3); reflections permitted
    double scale = 1.0;
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    bool reflected = false;    // det(Q) < 0
};

/// Least-squares alignment of X onto Y over scale (optional), O(3) and
/// translation. Reflections are allowed by design: the canonical frame of an
/// unsupervised reconstruction has a sign ambiguity that is gauge, not error.
ProcrustesResult procrustes_align(const Shape3D& X, const Shape3D& Y,
                                  const ProcrustesOptions& opts = {});

}  // namespace mvnrsfm::geometry
