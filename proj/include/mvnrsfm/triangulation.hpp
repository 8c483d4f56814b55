#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mvnrsfm/dataset.hpp"

namespace mvnrsfm::triangulation {

struct DltResult {
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
    /// Gap between the two smallest singular values of the stacked system;
    /// a vanishing gap means the solution direction is not unique (e.g.
    /// collocated camera centers).
    double sv_gap = 0.0;
    bool degenerate = false;  // sv_gap < 1e-10
};

/// Homogeneous DLT over K >= 2 views. Observations are normalized by the
/// intrinsics into pinhole rays before stacking the 2K x 4 cross-product
/// system; the smallest right singular vector is dehomogenized.
/// Throws InsufficientViewsError for K < 2 and DegenerateInputError when the
/// homogeneous solution lies at infinity (|w| <= 1e-12).
DltResult triangulate_dlt(const std::vector<Eigen::Vector2d>& observations,
                          const std::vector<data::CalibratedCamera>& cameras);

struct RobustResult {
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
    std::vector<bool> inliers;
    bool degenerate = false;
};

struct RobustOptions {
    int iters = 3;
    double reproj_threshold = 5.0;  // pixels
};

/// Iterative triangulation with outlier rejection: triangulate on the
/// current inliers, drop the single worst view if its pixel reprojection
/// error exceeds the threshold and at least two views would remain, repeat.
RobustResult robust_triangulate(const std::vector<Eigen::Vector2d>& observations,
                                const std::vector<data::CalibratedCamera>& cameras,
                                const RobustOptions& opts = {});

struct DatasetTriangulation {
    std::vector<Eigen::MatrixXd> S;              // [n], P x 3; failed points are NaN rows
    std::vector<std::vector<bool>> valid;        // [n][p]
    int failures = 0;
};

/// Per-point robust triangulation across the whole dataset. Per-point
/// failures become missing-point markers; the pass never aborts.
DatasetTriangulation triangulate_dataset(const data::MultiViewDataset& d,
                                         const RobustOptions& opts = {});

}  // namespace mvnrsfm::triangulation
