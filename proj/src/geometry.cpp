#include "mvnrsfm/geometry.hpp"

#include <Eigen/SVD>
#include <cmath>

namespace mvnrsfm::geometry {

namespace {

void require_finite(const Eigen::MatrixXd& M, const char* what) {
    if (!M.allFinite()) throw InvalidInputError(std::string(what) + ": non-finite entries");
}

}  // namespace

bool is_rotation(const Eigen::Matrix3d& R, double tol) {
    const double ortho = (R.transpose() * R - Eigen::Matrix3d::Identity()).norm();
    return ortho <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

void CameraPose::validate() const {
    if (!R.allFinite() || !t_xy.allFinite() || !std::isfinite(s))
        throw InvalidInputError("CameraPose: non-finite entries");
    if (!is_rotation(R)) throw InvalidInputError("CameraPose: R is not a proper rotation");
    if (!(s > 0.0)) throw InvalidInputError("CameraPose: scale must be positive");
}

Keypoints2D project_weak_perspective(const Shape3D& S, const CameraPose& pose) {
    require_finite(S, "project_weak_perspective");
    if (S.cols() != 3) throw ShapeError("project_weak_perspective: S must be P x 3");
    pose.validate();
    Keypoints2D W = pose.s * S * pose.R.leftCols<2>();
    W.rowwise() += pose.t_xy.transpose();
    return W;
}

std::pair<Keypoints2D, Eigen::Vector2d> center(const Keypoints2D& W) {
    if (W.cols() != 2) throw ShapeError("center: expected P x 2 keypoints");
    const Eigen::Vector2d mean = W.colwise().mean();
    return {W.rowwise() - mean.transpose(), mean};
}

std::pair<Shape3D, Eigen::Vector3d> center3(const Shape3D& S) {
    if (S.cols() != 3) throw ShapeError("center3: expected P x 3 points");
    const Eigen::Vector3d mean = S.colwise().mean();
    return {S.rowwise() - mean.transpose(), mean};
}

Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& M) {
    require_finite(M, "nearest_rotation");
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d sigma = svd.singularValues();
    if (sigma(1) < 1e-12)
        throw DegenerateInputError("nearest_rotation: rank(M) <= 1, projection not unique");
    Eigen::Matrix3d R = svd.matrixU() * svd.matrixV().transpose();
    if (R.determinant() < 0.0) {
        Eigen::Matrix3d U = svd.matrixU();
        U.col(2) *= -1.0;
        R = U * svd.matrixV().transpose();
    }
    return R;
}

Eigen::Matrix<double, 3, 2> stiefel_polar(const Eigen::Matrix<double, 3, 2>& A) {
    // Thin SVD needs dynamic columns in Eigen.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return svd.matrixU() * svd.matrixV().transpose();
}

Eigen::Matrix3d complete_rotation(const Eigen::Matrix<double, 3, 2>& Q) {
    Eigen::Matrix3d R;
    R.leftCols<2>() = Q;
    R.col(2) = Q.col(0).cross(Q.col(1));
    if (R.determinant() < 0.0) R.col(2) *= -1.0;  // cannot trigger for orthonormal Q
    return R;
}

OnpResult solve_onp(const Keypoints2D& W, const Shape3D& S, const OnpOptions& opts) {
    require_finite(W, "solve_onp: W");
    require_finite(S, "solve_onp: S");
    if (W.cols() != 2 || S.cols() != 3 || W.rows() != S.rows())
        throw ShapeError("solve_onp: W must be P x 2 and S must be P x 3 with matching P");

    auto fail = [&](const char* msg) -> OnpResult {
        if (opts.lenient) return {CameraPose{Eigen::Matrix3d::Identity(), 0.0, {0, 0}}, true};
        throw DegenerateInputError(msg);
    };

    if (W.rows() < 4) {
        if (opts.lenient) return fail("solve_onp: fewer than 4 points");
        throw InvalidInputError("solve_onp: requires P >= 4");
    }

    const Shape3D Sc = S.rowwise() - S.colwise().mean();
    const Keypoints2D Wc = W.rowwise() - W.colwise().mean();

    Eigen::JacobiSVD<Eigen::MatrixXd> ssvd(Sc);
    const auto& sv = ssvd.singularValues();
    if (sv(2) <= 1e-9 * sv(0)) return fail("solve_onp: rank-deficient shape");

    // Unconstrained least squares X = argmin ||W - S X||, then the nearest
    // scaled-orthonormal matrix: R_xy from the polar factor of X, and the
    // scale re-fit exactly for that rotation. On exact weak-perspective
    // input X already equals s R_xy, so recovery is exact.
    const Eigen::Matrix3d C = Sc.transpose() * Sc;
    const Eigen::Matrix<double, 3, 2> A = Sc.transpose() * Wc;
    const Eigen::Matrix<double, 3, 2> X = C.ldlt().solve(A);
    const Eigen::Matrix<double, 3, 2> Rxy = stiefel_polar(X);
    const double s = (Rxy.transpose() * A).trace() / (Sc * Rxy).squaredNorm();
    if (!(s > 0.0)) return fail("solve_onp: reflection ambiguity (non-positive optimal scale)");

    CameraPose pose;
    pose.R = complete_rotation(Rxy);
    pose.s = s;
    pose.t_xy.setZero();
    return {pose, false};
}

ProcrustesResult procrustes_align(const Shape3D& X, const Shape3D& Y,
                                  const ProcrustesOptions& opts) {
    require_finite(X, "procrustes_align: X");
    require_finite(Y, "procrustes_align: Y");
    if (X.cols() != 3 || Y.cols() != 3 || X.rows() != Y.rows())
        throw ShapeError("procrustes_align: point sets must be P x 3 with matching P");

    const Eigen::Vector3d mx = X.colwise().mean();
    const Eigen::Vector3d my = Y.colwise().mean();
    const Shape3D Xc = X.rowwise() - mx.transpose();
    const Shape3D Yc = Y.rowwise() - my.transpose();

    const double nx = Xc.norm();
    if (nx < 1e-12) throw DegenerateInputError("procrustes_align: all points of X coincide");

    // Rows are points, so the map acts on the right: minimize ||a Xc Q - Yc||.
    const Eigen::Matrix3d M = Xc.transpose() * Yc;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix3d Q = svd.matrixU() * svd.matrixV().transpose();

    ProcrustesResult out;
    out.Q = Q;
    out.reflected = Q.determinant() < 0.0;
    out.scale = opts.allow_scale ? svd.singularValues().sum() / (nx * nx) : 1.0;
    out.c = my - out.scale * Q.transpose() * mx;
    out.aligned = (out.scale * X * Q).rowwise() + out.c.transpose();
    return out;
}

}  // namespace mvnrsfm::geometry
