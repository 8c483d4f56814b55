#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mvnrsfm/errors.hpp"

namespace mvnrsfm::data {

/// Pinhole camera with known calibration, used only by the triangulation
/// baseline. Extrinsics map world to camera: Xc = R Xw + t.
struct CalibratedCamera {
    Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();

    void validate() const;
    Eigen::Vector2d project(const Eigen::Vector3d& Xw) const;
    Eigen::Vector3d center() const { return -R.transpose() * t; }
};

/// N instances x K views of P keypoints, with optional ground truth and a
/// shared per-view camera rig.
struct MultiViewDataset {
    int N = 0, K = 0, P = 0;
    std::vector<std::vector<Eigen::MatrixXd>> W;  // [n][k], P x 2 pixels
    std::vector<Eigen::MatrixXd> gt;              // empty or [n], P x 3
    std::vector<CalibratedCamera> cameras;        // empty or [k]

    bool has_gt() const { return !gt.empty(); }
    bool has_cameras() const { return !cameras.empty(); }
    void validate() const;

    /// The K views of instance n as a vector (the prior's input format).
    std::vector<Eigen::MatrixXd> instance(int n) const { return W.at(n); }
};

struct SynthConfig {
    int P = 20;
    int K = 2;
    int N = 200;
    int basis_rank = 5;
    double deform_scale = 0.3;
    /// First instance index; a held-out split is the same generator with the
    /// offset moved past the training range (rig and shape basis depend only
    /// on the seed).
    int instance_offset = 0;
    /// Per-instance random global orientation of the object, so per-view
    /// rotations genuinely vary across instances.
    bool random_orientation = true;
    double focal = 2000.0;
    double principal = 512.0;
    /// Camera distance as a multiple of the object radius; keeps depth
    /// variation a few percent of mean depth so the weak-perspective model
    /// faces only mild mismatch.
    double depth_factor = 40.0;
    double min_separation_deg = 20.0;
};

/// Deformable-rig generator: a random mean shape plus basis_rank deformation
/// bases, instances drawn with zero-mean coefficients, K pinhole cameras on
/// a sphere with pairwise separation >= min_separation_deg, exact projections.
/// Deterministic byte-for-byte given (config, seed).
MultiViewDataset synth_generate(const SynthConfig& cfg, std::uint64_t seed);

struct NoiseSpec {
    double sigma_extrinsics = 0.0;  // axis-angle radians and translation units
    double sigma_intrinsics = 0.0;  // relative scale of focal/principal point
    double sigma_keypoints = 0.0;   // pixels per coordinate
    std::uint64_t seed = 0;
};

/// Per-channel perturbation. Channels with sigma == 0 are left bit-identical;
/// ground truth is never touched. Each channel draws from its own substream
/// of spec.seed, so enabling one channel does not shift another's draws.
MultiViewDataset inject_noise(const MultiViewDataset& d, const NoiseSpec& spec);

}  // namespace mvnrsfm::data
