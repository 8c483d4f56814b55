#include "mvnrsfm/dataset.hpp"

#include <cmath>

#include "mvnrsfm/geometry.hpp"
#include "mvnrsfm/rng.hpp"

namespace mvnrsfm::data {

namespace {

enum Stream : std::uint64_t {
    kShape = 1,
    kRig = 2,
    kInstanceBase = 1000,
    kNoiseExtrinsics = 3,
    kNoiseIntrinsics = 4,
    kNoiseKeypoints = 5,
};

}  // namespace

void CalibratedCamera::validate() const {
    if (!K.allFinite() || !R.allFinite() || !t.allFinite())
        throw InvalidInputError("CalibratedCamera: non-finite entries");
    if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0 || K(2, 2) != 1.0)
        throw InvalidInputError("CalibratedCamera: intrinsics must be upper triangular with K(2,2)=1");
    if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0))
        throw InvalidInputError("CalibratedCamera: focal lengths must be positive");
    if (!geometry::is_rotation(R))
        throw InvalidInputError("CalibratedCamera: extrinsic rotation is not in SO(3)");
}

Eigen::Vector2d CalibratedCamera::project(const Eigen::Vector3d& Xw) const {
    const Eigen::Vector3d Xc = R * Xw + t;
    const Eigen::Vector3d h = K * Xc;
    return h.head<2>() / h(2);
}

void MultiViewDataset::validate() const {
    if (N < 0 || K < 0 || P < 0) throw ShapeError("MultiViewDataset: negative dimensions");
    if (static_cast<int>(W.size()) != N) throw ShapeError("MultiViewDataset: instance count mismatch");
    for (const auto& views : W) {
        if (static_cast<int>(views.size()) != K)
            throw ShapeError("MultiViewDataset: view count mismatch");
        for (const auto& w : views)
            if (w.rows() != P || w.cols() != 2)
                throw ShapeError("MultiViewDataset: keypoint matrix must be P x 2");
    }
    if (has_gt()) {
        if (static_cast<int>(gt.size()) != N)
            throw ShapeError("MultiViewDataset: ground-truth count mismatch");
        for (const auto& s : gt)
            if (s.rows() != P || s.cols() != 3)
                throw ShapeError("MultiViewDataset: ground-truth shape must be P x 3");
    }
    if (has_cameras()) {
        if (static_cast<int>(cameras.size()) != K)
            throw ShapeError("MultiViewDataset: camera count mismatch");
        for (const auto& c : cameras) c.validate();
    }
}

MultiViewDataset synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
    if (cfg.P < 1 || cfg.K < 1 || cfg.N < 0) throw ShapeError("synth_generate: bad dimensions");
    if (cfg.basis_rank < 0 || cfg.basis_rank > 3 * cfg.P)
        throw ShapeError("synth_generate: basis_rank must be in [0, 3P]");

    // Shape family from the seed only: the same seed always describes the
    // same object regardless of which instance window is generated.
    Rng shape_rng(seed, kShape);
    Eigen::MatrixXd mean = shape_rng.gaussian_matrix(cfg.P, 3);
    mean.rowwise() -= mean.colwise().mean().eval();
    std::vector<Eigen::MatrixXd> bases(cfg.basis_rank);
    for (auto& b : bases) {
        b = shape_rng.gaussian_matrix(cfg.P, 3) / std::sqrt(3.0 * cfg.P);
        b.rowwise() -= b.colwise().mean().eval();
    }

    MultiViewDataset d;
    d.N = cfg.N;
    d.K = cfg.K;
    d.P = cfg.P;
    d.W.resize(cfg.N);
    d.gt.resize(cfg.N);

    for (int n = 0; n < cfg.N; ++n) {
        Rng rng(seed, kInstanceBase + static_cast<std::uint64_t>(cfg.instance_offset + n));
        Eigen::MatrixXd S = mean;
        for (const auto& b : bases) S += (cfg.deform_scale * rng.gaussian()) * b;
        if (cfg.random_orientation) S = S * rng.rotation().transpose();
        d.gt[n] = S;
    }

    // Rig: directions on the sphere with a minimum pairwise separation,
    // distance tied to the nominal object radius so depth variation stays a
    // small fraction of mean depth (offset-independent, so split halves share
    // the rig exactly).
    Rng rig_rng(seed, kRig);
    const double radius = mean.rowwise().norm().maxCoeff() * (1.0 + 3.0 * cfg.deform_scale);
    const double dist = cfg.depth_factor * std::max(radius, 1e-6);
    const double min_cos = std::cos(cfg.min_separation_deg * M_PI / 180.0);
    std::vector<Eigen::Vector3d> dirs;
    int rejections = 0;
    while (static_cast<int>(dirs.size()) < cfg.K) {
        if (rejections > 10000 * cfg.K)
            throw InvalidInputError(
                "synth_generate: cannot place cameras with the requested separation");
        const Eigen::Vector3d dir = rig_rng.unit_vector();
        bool ok = true;
        for (const auto& o : dirs)
            if (dir.dot(o) > min_cos) ok = false;
        if (ok)
            dirs.push_back(dir);
        else
            ++rejections;
    }

    d.cameras.resize(cfg.K);
    for (int k = 0; k < cfg.K; ++k) {
        CalibratedCamera cam;
        cam.K << cfg.focal, 0, cfg.principal, 0, cfg.focal, cfg.principal, 0, 0, 1;
        const Eigen::Vector3d c = dist * dirs[k];
        const Eigen::Vector3d z = (-dirs[k]).normalized();  // optical axis toward origin
        Eigen::Vector3d up(0, 1, 0);
        if (std::abs(up.dot(z)) > 0.99) up = Eigen::Vector3d(1, 0, 0);
        const Eigen::Vector3d x = up.cross(z).normalized();
        const Eigen::Vector3d y = z.cross(x);
        cam.R.row(0) = x.transpose();
        cam.R.row(1) = y.transpose();
        cam.R.row(2) = z.transpose();
        cam.t = -cam.R * c;
        cam.validate();
        d.cameras[k] = cam;
    }

    for (int n = 0; n < cfg.N; ++n) {
        d.W[n].resize(cfg.K);
        for (int k = 0; k < cfg.K; ++k) {
            Eigen::MatrixXd w(cfg.P, 2);
            for (int p = 0; p < cfg.P; ++p)
                w.row(p) = d.cameras[k].project(d.gt[n].row(p)).transpose();
            d.W[n][k] = std::move(w);
        }
    }

    d.validate();
    return d;
}

MultiViewDataset inject_noise(const MultiViewDataset& din, const NoiseSpec& spec) {
    din.validate();
    if (spec.sigma_extrinsics < 0 || spec.sigma_intrinsics < 0 || spec.sigma_keypoints < 0)
        throw InvalidInputError("inject_noise: sigmas must be >= 0");
    MultiViewDataset d = din;

    if (spec.sigma_extrinsics > 0.0) {
        if (!d.has_cameras())
            throw InvalidInputError("inject_noise: extrinsics noise requires cameras");
        Rng rng(spec.seed, kNoiseExtrinsics);
        for (auto& cam : d.cameras) {
            const Eigen::Vector3d axis = rng.unit_vector();
            const double angle = spec.sigma_extrinsics * rng.gaussian();
            cam.R = cam.R * Eigen::AngleAxisd(angle, axis).toRotationMatrix();
            for (int i = 0; i < 3; ++i) cam.t(i) += spec.sigma_extrinsics * rng.gaussian();
        }
    }
    if (spec.sigma_intrinsics > 0.0) {
        if (!d.has_cameras())
            throw InvalidInputError("inject_noise: intrinsics noise requires cameras");
        Rng rng(spec.seed, kNoiseIntrinsics);
        for (auto& cam : d.cameras) {
            double f = 0.0;
            int tries = 0;
            do {
                if (++tries > 100)
                    throw NumericalFailureError("inject_noise: cannot draw a positive focal length");
                f = cam.K(0, 0) * (1.0 + spec.sigma_intrinsics * rng.gaussian());
            } while (f <= 0.0);
            cam.K(0, 0) = cam.K(1, 1) = f;
            cam.K(0, 2) *= 1.0 + spec.sigma_intrinsics * rng.gaussian();
            cam.K(1, 2) *= 1.0 + spec.sigma_intrinsics * rng.gaussian();
        }
    }
    if (spec.sigma_keypoints > 0.0) {
        Rng rng(spec.seed, kNoiseKeypoints);
        for (auto& views : d.W)
            for (auto& w : views)
                for (Eigen::Index p = 0; p < w.rows(); ++p)
                    for (Eigen::Index c = 0; c < 2; ++c) w(p, c) += spec.sigma_keypoints * rng.gaussian();
    }
    return d;
}

}  // namespace mvnrsfm::data
