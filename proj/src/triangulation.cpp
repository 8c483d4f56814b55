#include "mvnrsfm/triangulation.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <limits>

namespace mvnrsfm::triangulation {

namespace {

DltResult dlt_on(const std::vector<Eigen::Vector2d>& obs,
                 const std::vector<data::CalibratedCamera>& cams,
                 const std::vector<int>& use) {
    Eigen::MatrixXd A(2 * use.size(), 4);
    for (std::size_t i = 0; i < use.size(); ++i) {
        const auto& cam = cams[use[i]];
        // Normalized pinhole ray; conditions the stacked system.
        const Eigen::Vector3d ray = cam.K.inverse() * obs[use[i]].homogeneous();
        Eigen::Matrix<double, 3, 4> Pm;
        Pm.leftCols<3>() = cam.R;
        Pm.col(3) = cam.t;
        A.row(2 * i + 0) = ray(0) * Pm.row(2) - ray(2) * Pm.row(0);
        A.row(2 * i + 1) = ray(1) * Pm.row(2) - ray(2) * Pm.row(1);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
    const Eigen::VectorXd sv = svd.singularValues();
    const Eigen::Vector4d X = svd.matrixV().col(3);

    DltResult out;
    out.sv_gap = sv(2) - sv(3);
    out.degenerate = out.sv_gap < 1e-10;
    if (std::abs(X(3)) <= 1e-12)
        throw DegenerateInputError("triangulate_dlt: point at infinity");
    out.point = X.head<3>() / X(3);
    return out;
}

double reproj_error_px(const Eigen::Vector3d& X, const data::CalibratedCamera& cam,
                       const Eigen::Vector2d& obs) {
    return (cam.project(X) - obs).norm();
}

}  // namespace

DltResult triangulate_dlt(const std::vector<Eigen::Vector2d>& observations,
                          const std::vector<data::CalibratedCamera>& cameras) {
    if (observations.size() != cameras.size())
        throw ShapeError("triangulate_dlt: observation/camera count mismatch");
    if (observations.size() < 2)
        throw InsufficientViewsError("triangulate_dlt: need at least two views");
    std::vector<int> all(observations.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    return dlt_on(observations, cameras, all);
}

RobustResult robust_triangulate(const std::vector<Eigen::Vector2d>& observations,
                                const std::vector<data::CalibratedCamera>& cameras,
                                const RobustOptions& opts) {
    if (observations.size() != cameras.size())
        throw ShapeError("robust_triangulate: observation/camera count mismatch");
    const int K = static_cast<int>(observations.size());
    if (K < 2) throw InsufficientViewsError("robust_triangulate: need at least two views");

    std::vector<int> inliers(K);
    for (int i = 0; i < K; ++i) inliers[i] = i;

    DltResult last;
    for (int it = 0; it < opts.iters; ++it) {
        last = dlt_on(observations, cameras, inliers);
        if (static_cast<int>(inliers.size()) <= 2) break;  // nothing droppable

        int worst = -1;
        double worst_err = 0.0;
        for (std::size_t i = 0; i < inliers.size(); ++i) {
            const double e = reproj_error_px(last.point, cameras[inliers[i]],
                                             observations[inliers[i]]);
            if (e > worst_err) {
                worst_err = e;
                worst = static_cast<int>(i);
            }
        }
        if (worst < 0 || worst_err <= opts.reproj_threshold) break;
        inliers.erase(inliers.begin() + worst);
        last = dlt_on(observations, cameras, inliers);
    }

    RobustResult out;
    out.point = last.point;
    out.degenerate = last.degenerate;
    out.inliers.assign(K, false);
    for (int i : inliers) out.inliers[i] = true;
    return out;
}

DatasetTriangulation triangulate_dataset(const data::MultiViewDataset& d,
                                         const RobustOptions& opts) {
    d.validate();
    if (!d.has_cameras())
        throw InvalidInputError("triangulate_dataset: dataset carries no calibration");

    DatasetTriangulation out;
    out.S.resize(d.N);
    out.valid.resize(d.N);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (int n = 0; n < d.N; ++n) {
        out.S[n] = Eigen::MatrixXd::Constant(d.P, 3, nan);
        out.valid[n].assign(d.P, false);
        for (int p = 0; p < d.P; ++p) {
            std::vector<Eigen::Vector2d> obs(d.K);
            for (int k = 0; k < d.K; ++k) obs[k] = d.W[n][k].row(p).transpose();
            try {
                const RobustResult r = robust_triangulate(obs, d.cameras, opts);
                out.S[n].row(p) = r.point.transpose();
                out.valid[n][p] = true;
            } catch (const NumericError&) {
                ++out.failures;  // missing-point marker stays NaN
            }
        }
    }
    return out;
}

}  // namespace mvnrsfm::triangulation
