#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mvnrsfm/geometry.hpp"

namespace mvnrsfm::metrics {

struct Alignment {
    Eigen::MatrixXd aligned;  // prediction mapped into the ground-truth frame
    bool reflected = false;
};

/// Shared metric alignment: center both sets, match the prediction's
/// Frobenius norm to the ground truth's, then rotate (reflections allowed)
/// onto it. Reflections are gauge for an unsupervised canonical frame, so
/// they are absorbed rather than penalized.
Alignment align_for_metrics(const geometry::Shape3D& pred, const geometry::Shape3D& gt);

/// Mean per-point distance after scale normalization and Procrustes
/// alignment. Units follow the ground truth.
double pa_mpjpe(const geometry::Shape3D& pred, const geometry::Shape3D& gt,
                bool* reflected = nullptr);

/// Fraction of points within `threshold` of the ground truth after the same
/// alignment as pa_mpjpe.
double pck(const geometry::Shape3D& pred, const geometry::Shape3D& gt, double threshold);

struct InstanceMetrics {
    int index = 0;
    double pa_mpjpe = 0.0;
    double pck = 0.0;
    bool reflected = false;
    bool skipped = false;  // prediction had missing points
};

struct MetricReport {
    double pa_mpjpe = 0.0;       // mean over evaluated instances
    double pck = 0.0;            // fraction over all evaluated joints
    double pck_threshold = 0.0;
    int evaluated = 0;
    int skipped = 0;
    std::vector<InstanceMetrics> per_instance;
};

/// Dataset-level evaluation; instances whose prediction contains non-finite
/// points are reported as skipped.
MetricReport evaluate(const std::vector<Eigen::MatrixXd>& pred,
                      const std::vector<Eigen::MatrixXd>& gt, double pck_threshold);

}  // namespace mvnrsfm::metrics
