#include "mvnrsfm/metrics.hpp"

#include <Eigen/SVD>
#include <cmath>

namespace mvnrsfm::metrics {

Alignment align_for_metrics(const geometry::Shape3D& pred, const geometry::Shape3D& gt) {
    if (pred.rows() != gt.rows() || pred.cols() != 3 || gt.cols() != 3)
        throw ShapeError("metrics: prediction/ground-truth shape mismatch");
    if (!pred.allFinite() || !gt.allFinite())
        throw InvalidInputError("metrics: non-finite points");

    Eigen::MatrixXd p = pred.rowwise() - pred.colwise().mean();
    const Eigen::MatrixXd g = gt.rowwise() - gt.colwise().mean();
    const double ng = g.norm();
    if (ng < 1e-12) throw DegenerateInputError("metrics: degenerate ground truth");
    const double np = p.norm();
    if (np > 1e-12) p *= ng / np;

    const Eigen::Matrix3d M = p.transpose() * g;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix3d Q = svd.matrixU() * svd.matrixV().transpose();

    Alignment out;
    out.aligned = p * Q;
    out.reflected = Q.determinant() < 0.0;
    return out;
}

double pa_mpjpe(const geometry::Shape3D& pred, const geometry::Shape3D& gt, bool* reflected) {
    const Alignment a = align_for_metrics(pred, gt);
    if (reflected) *reflected = a.reflected;
    const Eigen::MatrixXd g = gt.rowwise() - gt.colwise().mean();
    return (a.aligned - g).rowwise().norm().mean();
}

double pck(const geometry::Shape3D& pred, const geometry::Shape3D& gt, double threshold) {
    if (!(threshold > 0.0)) throw InvalidInputError("pck: threshold must be positive");
    const Alignment a = align_for_metrics(pred, gt);
    const Eigen::MatrixXd g = gt.rowwise() - gt.colwise().mean();
    const Eigen::VectorXd d = (a.aligned - g).rowwise().norm();
    int ok = 0;
    for (Eigen::Index i = 0; i < d.size(); ++i)
        if (d(i) <= threshold) ++ok;
    return static_cast<double>(ok) / static_cast<double>(d.size());
}

MetricReport evaluate(const std::vector<Eigen::MatrixXd>& pred,
                      const std::vector<Eigen::MatrixXd>& gt, double pck_threshold) {
    if (pred.size() != gt.size()) throw ShapeError("evaluate: prediction/ground-truth count mismatch");
    if (!(pck_threshold > 0.0)) throw InvalidInputError("evaluate: threshold must be positive");

    MetricReport rep;
    rep.pck_threshold = pck_threshold;
    double pa_sum = 0.0;
    long joints_ok = 0, joints_total = 0;
    for (std::size_t n = 0; n < pred.size(); ++n) {
        InstanceMetrics im;
        im.index = static_cast<int>(n);
        if (!pred[n].allFinite()) {
            im.skipped = true;
            ++rep.skipped;
            rep.per_instance.push_back(im);
            continue;
        }
        im.pa_mpjpe = pa_mpjpe(pred[n], gt[n], &im.reflected);
        im.pck = pck(pred[n], gt[n], pck_threshold);
        pa_sum += im.pa_mpjpe;
        joints_ok += static_cast<long>(std::llround(im.pck * pred[n].rows()));
        joints_total += pred[n].rows();
        ++rep.evaluated;
        rep.per_instance.push_back(im);
    }
    rep.pa_mpjpe = rep.evaluated > 0 ? pa_sum / rep.evaluated : 0.0;
    rep.pck = joints_total > 0 ? static_cast<double>(joints_ok) / joints_total : 0.0;
    return rep;
}

}  // namespace mvnrsfm::metrics
